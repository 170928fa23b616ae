"""Channel and state algebra in the Pauli transfer matrix (PTM) picture.

Conventions used throughout the package:

* Paulis are normalized so that Tr(P_i P_j) = delta_ij, i.e. P = sigma / sqrt(d).
* Pauli ordering is lexicographic in (I, X, Y, Z) per qubit with qubit 1 as
  the slow index, so for two qubits index = 4*i1 + i2 and element 0 is I/sqrt(d).
* A channel Lambda is the real d^2 x d^2 matrix R_ij = Tr(P_i Lambda(P_j));
  unitaries map to orthogonal matrices and trace-preserving maps have top
  row [1, 0, ..., 0].
* States are real d^2 vectors of Pauli coefficients; POVM effects are rows of
  the same coefficients, so outcome probabilities are plain dot products.
* The Choi matrix is normalized to unit trace for TP maps,
  C = (1/d) sum_ij R_ij P_j^T (x) P_i, which maps the identity channel to the
  maximally entangled projector.  The conversion is a linear bijection that
  scales Frobenius distances by exactly 1/d.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as la

_SIGMA = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_PAULI_LETTERS = "IXYZ"

ALGEBRA_TOL = 1e-10
PSD_TOL = 1e-8


@dataclass(frozen=True)
class PauliBasis:
    """Ordered set of all normalized n-qubit Pauli operators."""

    n_qubits: int
    labels: tuple[str, ...]
    elements: np.ndarray  # (d^2, d, d) complex, read-only

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    @property
    def size(self) -> int:
        return 4**self.n_qubits


@lru_cache(maxsize=None)
def pauli_basis(n_qubits: int) -> PauliBasis:
    """Build (and cache) the normalized Pauli basis for `n_qubits`."""
    if n_qubits < 1:
        raise ValueError("n_qubits must be positive")
    d = 2**n_qubits
    labels = []
    elements = []
    for idx in range(4**n_qubits):
        # lexicographic digits, qubit 1 as slow index
        digits = []
        rem = idx
        for _ in range(n_qubits):
            digits.append(rem % 4)
            rem //= 4
        digits = digits[::-1]
        word = [_PAULI_LETTERS[k] for k in digits]
        mat = np.array([[1.0 + 0j]])
        for letter in word:
            mat = np.kron(mat, _SIGMA[letter])
        labels.append("".join(word))
        elements.append(mat / np.sqrt(d))
    arr = np.array(elements)
    arr.setflags(write=False)
    return PauliBasis(n_qubits=n_qubits, labels=tuple(labels), elements=arr)


def n_qubits_from_dim(dim_squared: int) -> int:
    """Number of qubits for a d^2 x d^2 PTM side length."""
    n = int(round(np.log2(dim_squared) / 2))
    if 4**n != dim_squared:
        raise ValueError(f"{dim_squared} is not 4^n for integer n")
    return n


def ptm_identity(n_qubits: int) -> np.ndarray:
    return np.eye(4**n_qubits)


def unitary_to_ptm(unitary: np.ndarray) -> np.ndarray:
    """PTM of the unitary channel rho -> U rho U^dagger.

    Raises ValueError if the input is not unitary to 1e-10.
    """
    unitary = np.asarray(unitary, dtype=complex)
    d = unitary.shape[0]
    if unitary.shape != (d, d):
        raise ValueError("unitary must be square")
    if not np.allclose(unitary.conj().T @ unitary, np.eye(d), atol=1e-10):
        raise ValueError("input is not unitary to 1e-10")
    n = int(round(np.log2(d)))
    if 2**n != d:
        raise ValueError("dimension is not a power of two")
    basis = pauli_basis(n)
    # R_ij = Tr(P_i U P_j U^dagger), computed for all j at once
    conj = np.einsum("ab,jbc,dc->jad", unitary, basis.elements, unitary.conj())
    out = np.einsum("iab,jba->ij", basis.elements, conj)
    return np.real_if_close(out, tol=1000).real


def kraus_to_ptm(kraus_ops) -> np.ndarray:
    """PTM of the channel rho -> sum_k K rho K^dagger."""
    kraus_ops = [np.asarray(k, dtype=complex) for k in kraus_ops]
    d = kraus_ops[0].shape[0]
    n = int(round(np.log2(d)))
    basis = pauli_basis(n)
    out = np.zeros((d * d, d * d))
    for k in kraus_ops:
        conj = np.einsum("ab,jbc,dc->jad", k, basis.elements, k.conj())
        out += np.einsum("iab,jba->ij", basis.elements, conj).real
    return out


@lru_cache(maxsize=None)
def _choi_map(n_qubits: int) -> np.ndarray:
    """Complex linear map taking vec(ptm) to vec(choi)."""
    basis = pauli_basis(n_qubits)
    d = basis.dim
    size = d * d
    m = np.empty((size * size, size * size), dtype=complex)
    for i in range(size):
        for j in range(size):
            block = np.kron(basis.elements[j].T, basis.elements[i]) / d
            m[:, i * size + j] = block.reshape(-1)
    m.setflags(write=False)
    return m


def ptm_to_choi(ptm: np.ndarray) -> np.ndarray:
    """Choi matrix (unit trace for TP maps) of a PTM."""
    ptm = np.asarray(ptm, dtype=float)
    n = n_qubits_from_dim(ptm.shape[0])
    size = ptm.shape[0]
    vec = _choi_map(n) @ ptm.reshape(-1)
    return vec.reshape(size, size)


def choi_to_ptm(choi: np.ndarray) -> np.ndarray:
    """Inverse of :func:`ptm_to_choi`; real part is returned since PTMs of
    Hermiticity-preserving maps are real."""
    choi = np.asarray(choi, dtype=complex)
    n = n_qubits_from_dim(choi.shape[0])
    size = choi.shape[0]
    d = 2**n
    m = _choi_map(n)
    vec = (d * d) * (m.conj().T @ choi.reshape(-1))
    return vec.reshape(size, size).real


def average_gate_fidelity(noise_ptm: np.ndarray) -> float:
    """Standard average gate fidelity of a noise channel against identity,
    F = (Tr R + d) / (d^2 + d).  Returns 1 for the identity channel."""
    noise_ptm = np.asarray(noise_ptm)
    n = n_qubits_from_dim(noise_ptm.shape[0])
    d = 2**n
    return (float(np.trace(noise_ptm)) + d) / (d * d + d)


def trace_gate_fidelity(noise_ptm: np.ndarray) -> float:
    """Alternative trace-based fidelity normalization (Tr R - 1) / d^2.

    Exposed alongside :func:`average_gate_fidelity`; note it does not equal 1
    for the identity channel.  Reports label which normalization they use.
    """
    noise_ptm = np.asarray(noise_ptm)
    size = noise_ptm.shape[0]
    return (float(np.trace(noise_ptm)) - 1.0) / size


def unitarity(noise_ptm: np.ndarray) -> float:
    """Mean squared singular value of the unital block, Tr(M^T M)/(d^2 - 1)."""
    noise_ptm = np.asarray(noise_ptm)
    block = noise_ptm[1:, 1:]
    return float(np.sum(block * block)) / block.shape[0]


def incoherence(noise_ptm: np.ndarray) -> float:
    """Incoherent share of the infidelity, (d-1)/d * (1 - sqrt(u))."""
    noise_ptm = np.asarray(noise_ptm)
    n = n_qubits_from_dim(noise_ptm.shape[0])
    d = 2**n
    u = max(unitarity(noise_ptm), 0.0)
    return (d - 1) / d * (1.0 - np.sqrt(u))


# ---------------------------------------------------------------------------
# states and measurements


def density_to_pauli_vec(rho: np.ndarray) -> np.ndarray:
    """Pauli-coefficient vector of a density matrix."""
    rho = np.asarray(rho, dtype=complex)
    n = int(round(np.log2(rho.shape[0])))
    basis = pauli_basis(n)
    return np.einsum("iab,ba->i", basis.elements, rho).real


def pauli_vec_to_density(vec: np.ndarray) -> np.ndarray:
    """Density matrix from Pauli coefficients (Hermitian by construction)."""
    vec = np.asarray(vec, dtype=float)
    n = n_qubits_from_dim(vec.shape[0])
    basis = pauli_basis(n)
    return np.einsum("i,iab->ab", vec, basis.elements)


def computational_state(n_qubits: int, index: int) -> np.ndarray:
    """Pauli vector of the computational basis state |index>."""
    d = 2**n_qubits
    rho = np.zeros((d, d), dtype=complex)
    rho[index, index] = 1.0
    return density_to_pauli_vec(rho)


@dataclass(frozen=True)
class Povm:
    """POVM stored as effect rows of Pauli coefficients."""

    labels: tuple[str, ...]
    effects: np.ndarray  # (M, d^2) real

    def __post_init__(self):
        effects = np.asarray(self.effects, dtype=float)
        n = n_qubits_from_dim(effects.shape[1])
        d = 2**n
        total = effects.sum(axis=0)
        identity = density_to_pauli_vec(np.eye(d))
        if not np.allclose(total, identity, atol=1e-9):
            raise ValueError("POVM effects must sum to the identity")
        for row in effects:
            eigs = np.linalg.eigvalsh(pauli_vec_to_density(row))
            if eigs.min() < -PSD_TOL:
                raise ValueError("POVM effect is not positive semi-definite")
        object.__setattr__(self, "effects", effects)

    @property
    def n_outcomes(self) -> int:
        return self.effects.shape[0]


def computational_povm(n_qubits: int) -> Povm:
    """Projective measurement onto the computational basis.

    For two qubits the outcome order is (up-up, up-down, down-up, down-down)
    with qubit 1 as the slow index.
    """
    d = 2**n_qubits
    effects = np.array([computational_state(n_qubits, k) for k in range(d)])
    labels = tuple(format(k, f"0{n_qubits}b") for k in range(d))
    return Povm(labels=labels, effects=effects)


def state_fidelity(rho_vec: np.ndarray, target_vec: np.ndarray) -> float:
    """Fidelity between two states given as Pauli vectors.

    Uses the overlap shortcut when the target is pure and the full Uhlmann
    formula otherwise.  Raises ValueError when either state fails the PSD
    check beyond -1e-8.
    """
    rho = pauli_vec_to_density(rho_vec)
    target = pauli_vec_to_density(target_vec)
    for mat in (rho, target):
        if np.linalg.eigvalsh(mat).min() < -PSD_TOL:
            raise ValueError("state is not positive semi-definite within 1e-8")
    purity = float(np.real(np.trace(target @ target)))
    if abs(purity - 1.0) < 1e-9:
        return float(min(max(np.real(np.trace(rho @ target)), 0.0), 1.0))
    evals, evecs = np.linalg.eigh(rho)
    sqrt_rho = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.conj().T
    inner = sqrt_rho @ target @ sqrt_rho
    eigs = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    return float(min(np.sum(np.sqrt(eigs)) ** 2, 1.0))


def concurrence(rho_vec: np.ndarray) -> float:
    """Wootters concurrence of a two-qubit state given as a Pauli vector.

    Computed through the Hermitian form sqrt(rho) rho_tilde sqrt(rho); the
    relative clipping of near-zero eigenvalues keeps pure states at exactly 1
    instead of 1 - O(sqrt(eps)).
    """
    rho = pauli_vec_to_density(rho_vec)
    if rho.shape != (4, 4):
        raise ValueError("concurrence is defined for two-qubit states")
    yy = np.kron(_SIGMA["Y"], _SIGMA["Y"])
    spin_flipped = yy @ rho.conj() @ yy
    evals, evecs = np.linalg.eigh(rho)
    sqrt_rho = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.conj().T
    inner = sqrt_rho @ spin_flipped @ sqrt_rho
    eigs = np.linalg.eigvalsh((inner + inner.conj().T) / 2)
    eigs = np.clip(eigs, 0.0, None)
    eigs[eigs < 1e-14 * max(eigs.max(), 1e-300)] = 0.0
    vals = np.sort(np.sqrt(eigs))[::-1]
    return float(max(0.0, vals[0] - vals[1] - vals[2] - vals[3]))


# ---------------------------------------------------------------------------
# serialization


def ptm_to_json_dict(ptm: np.ndarray) -> dict:
    ptm = np.asarray(ptm, dtype=float)
    return {
        "n_qubits": n_qubits_from_dim(ptm.shape[0]),
        "entries": ptm.tolist(),
    }


def ptm_from_json_dict(payload: dict) -> np.ndarray:
    entries = np.asarray(payload["entries"], dtype=float)
    expected = 4 ** int(payload["n_qubits"])
    if entries.shape != (expected, expected):
        raise ValueError("PTM entries do not match n_qubits")
    return entries
