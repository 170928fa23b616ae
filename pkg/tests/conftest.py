"""Shared test helpers: random unitaries, random CPTP channels, oracles."""

from __future__ import annotations

import numpy as np

from gatetomo.ptm import pauli_basis


def random_unitary(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Haar-random unitary via QR of a complex Ginibre matrix."""
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_kraus_set(rng: np.random.Generator, dim: int, n_kraus: int = 3) -> list:
    """Random CPTP channel as a normalized Kraus set."""
    ops = [
        rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        for _ in range(n_kraus)
    ]
    total = sum(k.conj().T @ k for k in ops)
    evals, evecs = np.linalg.eigh(total)
    inv_sqrt = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.conj().T
    return [k @ inv_sqrt for k in ops]


def random_cptp_ptm(rng: np.random.Generator, n_qubits: int, n_kraus: int = 3) -> np.ndarray:
    from gatetomo.ptm import kraus_to_ptm

    return kraus_to_ptm(random_kraus_set(rng, 2**n_qubits, n_kraus))


def conjugation_ptm_oracle(unitary: np.ndarray) -> np.ndarray:
    """Brute-force PTM of a unitary: loop over every basis-element pair."""
    dim = unitary.shape[0]
    n = int(round(np.log2(dim)))
    basis = pauli_basis(n)
    size = basis.size
    out = np.zeros((size, size))
    for i in range(size):
        for j in range(size):
            val = np.trace(
                basis.elements[i] @ unitary @ basis.elements[j] @ unitary.conj().T
            )
            out[i, j] = val.real
    return out


def gradient_descent_posterior_mean(
    gamma_x: np.ndarray,
    gamma_e: np.ndarray,
    a_eff: np.ndarray,
    y: np.ndarray,
    tol: float = 1e-13,
    max_iter: int = 500_000,
) -> np.ndarray:
    """Steepest descent with exact line search on the stacked least-squares
    objective (y - A_eff x)^T Ge^-1 (y - A_eff x) + x^T Gx^-1 x."""
    we = np.linalg.inv(gamma_e)
    wx = np.linalg.inv(gamma_x)
    hess = a_eff.T @ we @ a_eff + wx
    b = a_eff.T @ we @ y
    x = np.zeros(gamma_x.shape[0])
    scale = max(np.linalg.norm(b), 1.0)
    for _ in range(max_iter):
        grad = hess @ x - b
        gnorm = np.linalg.norm(grad)
        if gnorm < tol * scale:
            break
        step = (grad @ grad) / (grad @ (hess @ grad))
        x = x - step * grad
    return x


def random_tp_ptm(rng: np.random.Generator, n_qubits: int, scale: float = 0.1) -> np.ndarray:
    """Random (not necessarily CP) trace-preserving perturbation of identity."""
    size = 4**n_qubits
    mat = np.eye(size) + scale * rng.standard_normal((size, size))
    mat[0] = 0.0
    mat[0, 0] = 1.0
    return mat
