"""Binary-symplectic Clifford tableaux with sign tracking.

A Clifford element (mod global phase) is stored as the images of the 2n
Hermitian Pauli generators under conjugation: a 2n x 2n symplectic matrix
over F_2 plus one sign bit per generator.  Vectors use the interleaved pair
convention (x_1, z_1, x_2, z_2, ...), the native layout of the
Koenig-Smolin canonical-index construction used for exact uniform sampling.

The canonical Hermitian Pauli of a bit vector v is sigma(v) =
i^(x.z) X^x Z^z, which covers I, X, Y, Z per qubit with real signs only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ptm import pauli_basis


def symplectic_inner(u: np.ndarray, v: np.ndarray) -> int:
    return int((u[0::2] @ v[1::2] + u[1::2] @ v[0::2]) % 2)


def transvection(k: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (v + symplectic_inner(k, v) * k) % 2


def _int_to_bits(i: int, n: int) -> np.ndarray:
    out = np.zeros(n, dtype=np.int8)
    for j in range(n):
        out[j] = i & 1
        i >>= 1
    return out


def find_transvection(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectors h1, h2 with y = T_h1 T_h2 x (Koenig-Smolin Lemma 2)."""
    out = np.zeros((2, x.size), dtype=np.int8)
    if np.array_equal(x, y):
        return out
    if symplectic_inner(x, y) == 1:
        out[0] = (x + y) % 2
        return out
    z = np.zeros(x.size, dtype=np.int8)
    for i in range(0, x.size, 2):
        if (x[i] + x[i + 1] != 0) and (y[i] + y[i + 1] != 0):
            z[i] = (x[i] + y[i]) % 2
            z[i + 1] = (x[i + 1] + y[i + 1]) % 2
            if z[i] + z[i + 1] == 0:
                z[i + 1] = 1
                if x[i] != x[i + 1]:
                    z[i] = 1
            out[0] = (x + z) % 2
            out[1] = (y + z) % 2
            return out
    for i in range(0, x.size, 2):
        if (x[i] + x[i + 1] != 0) and (y[i] + y[i + 1] == 0):
            if x[i] == x[i + 1]:
                z[i + 1] = 1
            else:
                z[i + 1] = x[i]
                z[i] = x[i + 1]
            break
    for i in range(0, x.size, 2):
        if (x[i] + x[i + 1] == 0) and (y[i] + y[i + 1] != 0):
            if y[i] == y[i + 1]:
                z[i + 1] = 1
            else:
                z[i + 1] = y[i]
                z[i] = y[i + 1]
            break
    out[0] = (x + z) % 2
    out[1] = (y + z) % 2
    return out


def num_cosets(n: int) -> int:
    return 2 ** (2 * n - 1) * (2 ** (2 * n) - 1)


def num_symplectics(n: int) -> int:
    total = 1
    for j in range(1, n + 1):
        total *= num_cosets(j)
    return total


def symplectic_from_index(i: int, n: int) -> np.ndarray:
    """Canonical 2n x 2n symplectic matrix number `i` (rows are generator
    images), following Koenig-Smolin."""
    nn = 2 * n
    s = (1 << nn) - 1
    k = (i % s) + 1
    i //= s
    f1 = _int_to_bits(k, nn)
    e1 = np.zeros(nn, dtype=np.int8)
    e1[0] = 1
    t = find_transvection(e1, f1)
    bits = _int_to_bits(i % (1 << (nn - 1)), nn - 1)
    i //= 1 << (nn - 1)
    eprime = e1.copy()
    for j in range(2, nn):
        eprime[j] = bits[j - 1]
    h0 = transvection(t[0], eprime)
    h0 = transvection(t[1], h0)
    if bits[0] == 1:
        f1 = np.zeros_like(f1)
    if n == 1:
        g = np.identity(2, dtype=np.int8)
    else:
        g = np.zeros((nn, nn), dtype=np.int8)
        g[:2, :2] = np.identity(2, dtype=np.int8)
        g[2:, 2:] = symplectic_from_index(i, n - 1)
    for j in range(nn):
        g[j] = transvection(t[0], g[j])
        g[j] = transvection(t[1], g[j])
        g[j] = transvection(h0, g[j])
        g[j] = transvection(f1, g[j])
    return g


def is_symplectic(mat: np.ndarray) -> bool:
    nn = mat.shape[0]
    form = np.zeros((nn, nn), dtype=np.int8)
    for i in range(0, nn, 2):
        form[i, i + 1] = form[i + 1, i] = 1
    return np.array_equal((mat @ form @ mat.T) % 2, form)


@dataclass(frozen=True)
class Tableau:
    """Clifford element mod phase: generator images plus sign bits.

    Row 2q of `symp` is the image of X_{q+1}, row 2q+1 the image of Z_{q+1},
    both as interleaved (x, z) pair vectors; `signs[j]` = 1 flips the sign of
    the canonical Hermitian image Pauli.
    """

    n_qubits: int
    symp: np.ndarray  # (2n, 2n) int8 over F_2
    signs: np.ndarray  # (2n,) int8 in {0, 1}

    def __post_init__(self):
        symp = np.asarray(self.symp, dtype=np.int8) % 2
        signs = np.asarray(self.signs, dtype=np.int8) % 2
        if symp.shape != (2 * self.n_qubits, 2 * self.n_qubits):
            raise ValueError("symplectic matrix has wrong shape")
        if not is_symplectic(symp):
            raise ValueError("matrix is not symplectic over F_2")
        object.__setattr__(self, "symp", symp)
        object.__setattr__(self, "signs", signs)


def random_clifford_tableau(
    n_qubits: int, rng: np.random.Generator | int | None = None
) -> Tableau:
    """Uniformly random Clifford tableau: canonical symplectic index plus
    independent uniform sign bits."""
    rng = np.random.default_rng(rng)
    index = int(rng.integers(num_symplectics(n_qubits)))
    signs = rng.integers(0, 2, size=2 * n_qubits).astype(np.int8)
    return Tableau(
        n_qubits=n_qubits,
        symp=symplectic_from_index(index, n_qubits),
        signs=signs,
    )


# ---------------------------------------------------------------------------
# phase-tracked Pauli algebra


def _pauli_mul(x1, z1, phase1, x2, z2, phase2):
    """(i^p1 X^x1 Z^z1)(i^p2 X^x2 Z^z2) with Z X = -X Z per qubit."""
    phase = (phase1 + phase2 + 2 * int(np.dot(z1, x2) % 2)) % 4
    return (x1 ^ x2), (z1 ^ z2), phase


def _vector_to_xz(v: np.ndarray):
    x = v[0::2].astype(np.int8)
    z = v[1::2].astype(np.int8)
    return x, z


def _canonical_phase(x, z) -> int:
    return int(np.dot(x, z) % 4)


def pauli_index_to_vector(index: int, n_qubits: int) -> np.ndarray:
    """Interleaved (x, z) bits of basis Pauli `index` (qubit 1 slow,
    letter order I, X, Y, Z)."""
    digits = []
    rem = index
    for _ in range(n_qubits):
        digits.append(rem % 4)
        rem //= 4
    digits = digits[::-1]
    xz = {0: (0, 0), 1: (1, 0), 2: (1, 1), 3: (0, 1)}
    v = np.zeros(2 * n_qubits, dtype=np.int8)
    for q, digit in enumerate(digits):
        v[2 * q], v[2 * q + 1] = xz[digit]
    return v


def pauli_vector_to_index(v: np.ndarray) -> int:
    letters = {(0, 0): 0, (1, 0): 1, (1, 1): 2, (0, 1): 3}
    index = 0
    for q in range(v.size // 2):
        index = 4 * index + letters[(int(v[2 * q]), int(v[2 * q + 1]))]
    return index


def tableau_image(tab: Tableau, v: np.ndarray) -> tuple[np.ndarray, int]:
    """Image (vector, sign in {+1, -1}) of the canonical Pauli sigma(v)."""
    n = tab.n_qubits
    x_in, z_in = _vector_to_xz(v)
    # start from the canonical phase of the input Pauli
    acc_x = np.zeros(n, dtype=np.int8)
    acc_z = np.zeros(n, dtype=np.int8)
    acc_phase = _canonical_phase(x_in, z_in)
    for q in range(n):
        for bit, row_idx in ((x_in[q], 2 * q), (z_in[q], 2 * q + 1)):
            if not bit:
                continue
            row = tab.symp[row_idx]
            rx, rz = _vector_to_xz(row)
            row_phase = (2 * int(tab.signs[row_idx]) + _canonical_phase(rx, rz)) % 4
            acc_x, acc_z, acc_phase = _pauli_mul(
                acc_x, acc_z, acc_phase, rx, rz, row_phase
            )
    rel = (acc_phase - _canonical_phase(acc_x, acc_z)) % 4
    if rel not in (0, 2):
        raise ValueError("tableau produced a non-Hermitian image")
    out = np.zeros(2 * n, dtype=np.int8)
    out[0::2] = acc_x
    out[1::2] = acc_z
    return out, (1 if rel == 0 else -1)


def tableau_to_ptm(tab: Tableau) -> np.ndarray:
    """Signed permutation PTM of the Clifford in the normalized Pauli basis.

    Vectorized over all basis Paulis at once: the accumulation mirrors
    :func:`tableau_image` with one masked update per generator row.
    """
    n = tab.n_qubits
    size = 4**n
    vecs = np.array([pauli_index_to_vector(j, n) for j in range(size)])  # (size, 2n)
    x_in = vecs[:, 0::2]
    z_in = vecs[:, 1::2]
    acc_x = np.zeros((size, n), dtype=np.int8)
    acc_z = np.zeros((size, n), dtype=np.int8)
    acc_phase = (x_in * z_in).sum(axis=1) % 4
    for q in range(n):
        for bits, row_idx in ((x_in[:, q], 2 * q), (z_in[:, q], 2 * q + 1)):
            mask = bits.astype(bool)
            if not mask.any():
                continue
            row = tab.symp[row_idx]
            rx, rz = row[0::2], row[1::2]
            row_phase = (2 * int(tab.signs[row_idx]) + int(rx @ rz)) % 4
            cross = 2 * (acc_z[mask] @ rx % 2)
            acc_phase[mask] = (acc_phase[mask] + row_phase + cross) % 4
            acc_x[mask] ^= rx
            acc_z[mask] ^= rz
    rel = (acc_phase - (acc_x * acc_z).sum(axis=1)) % 4
    if np.any(rel % 2):
        raise ValueError("tableau produced a non-Hermitian image")
    signs = np.where(rel == 0, 1.0, -1.0)
    # base-4 digits (I, X, Y, Z) with qubit 1 as the slow index
    letters = np.where(
        (acc_x == 1) & (acc_z == 1), 2, np.where(acc_x == 1, 1, np.where(acc_z == 1, 3, 0))
    )
    out_idx = np.zeros(size, dtype=int)
    for q in range(n):
        out_idx = 4 * out_idx + letters[:, q]
    ptm = np.zeros((size, size))
    ptm[out_idx, np.arange(size)] = signs
    return ptm


def unitary_to_tableau(unitary: np.ndarray) -> Tableau:
    """Tableau of a Clifford unitary; raises ValueError if the conjugation
    images are not signed Paulis."""
    unitary = np.asarray(unitary, dtype=complex)
    d = unitary.shape[0]
    n = int(round(np.log2(d)))
    basis = pauli_basis(n)
    nn = 2 * n
    symp = np.zeros((nn, nn), dtype=np.int8)
    signs = np.zeros(nn, dtype=np.int8)
    for row_idx in range(nn):
        q, is_z = divmod(row_idx, 2)
        v = np.zeros(nn, dtype=np.int8)
        v[2 * q + is_z] = 1
        sigma = basis.elements[pauli_vector_to_index(v)] * np.sqrt(d)
        image = unitary @ sigma @ unitary.conj().T
        # basis elements are Hermitian: Tr(P . image) is the right inner product
        coeffs = np.einsum("kab,ba->k", basis.elements, image) / np.sqrt(d)
        hits = np.flatnonzero(np.abs(coeffs) > 1e-8)
        if hits.size != 1 or abs(abs(coeffs[hits[0]]) - 1) > 1e-8:
            raise ValueError("matrix does not conjugate Paulis to signed Paulis")
        coeff = coeffs[hits[0]]
        if abs(coeff.imag) > 1e-8:
            raise ValueError("matrix does not conjugate Paulis to signed Paulis")
        symp[row_idx] = pauli_index_to_vector(int(hits[0]), n)
        signs[row_idx] = 0 if coeff.real > 0 else 1
    return Tableau(n_qubits=n, symp=symp, signs=signs)
