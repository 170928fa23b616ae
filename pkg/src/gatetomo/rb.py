"""Randomized benchmarking over the native gate set.

Clifford compilation works through an exhaustive word table: breadth-first
search over the 11520-element two-qubit Clifford group (mod phase) using
composite generators built from native primitives (virtual Z, the doubled
conditional rotations forming CNOTs, and unconditional X_{pi/2} pairs).
Clifford PTMs are signed permutation matrices, so an integer-rounded PTM is
an exact group-element key and every compiled word is verified against the
target by construction.

Sequence sampling draws uniformly from the Clifford group via the canonical
symplectic-index construction; the final gate of each sequence is rejection
sampled from the Cliffords that return the ideal state to the survival state.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np
import scipy.optimize as opt

from .engine import GaussianBelief, _psd_factor
from .errors import DataError
from .forward import GateSequence
from .gates import GateSet, native_two_qubit_gate_set
from .project import project_cptp_stack, project_gatesets_fidelity_stack
from .simulate import ExperimentRecord, TrueDevice
from .tableau import Tableau, random_clifford_tableau, tableau_to_ptm
from .ptm import unitary_to_ptm

TWO_QUBIT_CLIFFORD_ORDER = 11520

# composite Clifford generators as native primitive words:
# virtual Z on each qubit, unconditional X_{pi/2} (both conditional rotations
# back to back), and CNOT (one conditional rotation doubled)
_GENERATOR_WORDS = (
    (2,),  # Z1
    (5,),  # Z2
    (0, 1),  # X90 on qubit 1
    (3, 4),  # X90 on qubit 2
    (0, 0),  # CNOT: X on qubit 1 when qubit 2 is down
    (3, 3),  # CNOT: X on qubit 2 when qubit 1 is down
)

_compile_cache: dict[bytes, tuple[int, ...]] | None = None


def _ptm_key(ptm: np.ndarray) -> bytes:
    return np.rint(ptm).astype(np.int8).tobytes()


def _native_ideal_ptms() -> list[np.ndarray]:
    return [g.ideal for g in native_two_qubit_gate_set().gates]


def compile_table() -> dict[bytes, tuple[int, ...]]:
    """Word table for the whole two-qubit Clifford group (built lazily)."""
    global _compile_cache
    if _compile_cache is not None:
        return _compile_cache
    ideals = _native_ideal_ptms()
    gen_ptms = []
    for word in _GENERATOR_WORDS:
        mat = np.eye(16)
        for idx in word:
            mat = ideals[idx] @ mat
        gen_ptms.append(np.rint(mat).astype(np.int8))
    table: dict[bytes, tuple[int, ...]] = {}
    identity = np.eye(16, dtype=np.int8)
    table[identity.tobytes()] = ()
    queue = deque([identity])
    while queue:
        current = queue.popleft()
        word = table[current.tobytes()]
        for gen_word, gen_ptm in zip(_GENERATOR_WORDS, gen_ptms):
            nxt = gen_ptm @ current
            key = nxt.tobytes()
            if key not in table:
                table[key] = word + gen_word
                queue.append(nxt)
    if len(table) != TWO_QUBIT_CLIFFORD_ORDER:
        raise RuntimeError(
            f"Clifford table has {len(table)} elements, expected {TWO_QUBIT_CLIFFORD_ORDER}"
        )
    _compile_cache = table
    return table


@dataclass(frozen=True)
class CompiledClifford:
    """A Clifford element with its native primitive word."""

    word: GateSequence
    ptm: np.ndarray  # exact signed permutation (int8)
    target_unitary: np.ndarray | None = None


def word_unitary(word) -> np.ndarray:
    gates = native_two_qubit_gate_set().gates
    mat = np.eye(4, dtype=complex)
    for idx in word:
        mat = gates[idx].unitary @ mat
    return mat


def word_ptm(word) -> np.ndarray:
    gates = native_two_qubit_gate_set().gates
    mat = np.eye(16)
    for idx in word:
        mat = gates[idx].ideal @ mat
    return mat


def compile_clifford(target) -> CompiledClifford:
    """Decompose a two-qubit Clifford (unitary or tableau) into primitives.

    Raises ValueError for inputs that are not Clifford group elements.
    """
    if isinstance(target, Tableau):
        ptm = tableau_to_ptm(target)
        unitary = None
    else:
        unitary = np.asarray(target, dtype=complex)
        ptm = unitary_to_ptm(unitary)
    rounded = np.rint(ptm)
    if not np.allclose(ptm, rounded, atol=1e-8) or not np.allclose(
        np.abs(rounded).sum(axis=0), 1.0
    ):
        raise ValueError("target is not a Clifford group element")
    try:
        word = compile_table()[_ptm_key(rounded)]
    except KeyError as exc:
        raise ValueError("target PTM is not in the two-qubit Clifford group") from exc
    compiled = CompiledClifford(
        word=word, ptm=rounded.astype(np.int8), target_unitary=unitary
    )
    if unitary is not None:
        overlap = abs(np.trace(word_unitary(word).conj().T @ unitary))
        if abs(overlap - 4.0) > 1e-8:
            raise RuntimeError("compiled word failed the phase-invariant check")
    return compiled


# ---------------------------------------------------------------------------
# sequence generation


@dataclass(frozen=True)
class RbSequence:
    clifford_length: int
    word: GateSequence
    shots: int | None = None
    counts: np.ndarray | None = None

    def survival(self, survival_index: int = 0) -> float:
        if self.counts is None or self.shots is None:
            raise DataError("RB sequence has no counts")
        return float(self.counts[survival_index] / self.shots)


@dataclass(frozen=True)
class RbDataset:
    sequences: tuple[RbSequence, ...]
    survival_index: int = 0

    @property
    def lengths(self) -> list[int]:
        return sorted({s.clifford_length for s in self.sequences})

    def mean_word_length(self) -> float:
        """Mean primitive count per Clifford across the dataset."""
        prims = sum(len(s.word) for s in self.sequences)
        cliffs = sum(s.clifford_length for s in self.sequences)
        return prims / cliffs if cliffs else 0.0


def sample_rb_sequences(
    n_per_length: int,
    lengths,
    rng: np.random.Generator | int | None = None,
    max_final_draws: int = 100_000,
) -> RbDataset:
    """Random Clifford sequences of the given total lengths.

    Each sequence has length-1 uniform Cliffords followed by a final Clifford
    drawn uniformly from those returning the ideal state to the survival
    state (rejection sampling, deterministic under the seed).
    """
    lengths = [int(length) for length in lengths]
    if any(length < 1 for length in lengths):
        raise ValueError("RB lengths must be >= 1")
    rng = np.random.default_rng(rng)
    gs = native_two_qubit_gate_set()
    rho0 = gs.rho0
    survival_effect = gs.povm.effects[0]
    sequences = []
    for length in lengths:
        for _ in range(n_per_length):
            word: list[int] = []
            state = rho0.copy()
            for _ in range(length - 1):
                compiled = compile_clifford(random_clifford_tableau(2, rng))
                word.extend(compiled.word)
                state = compiled.ptm @ state
            for attempt in range(max_final_draws):
                compiled = compile_clifford(random_clifford_tableau(2, rng))
                if survival_effect @ (compiled.ptm @ state) > 0.999:
                    word.extend(compiled.word)
                    break
            else:
                raise RuntimeError("failed to draw a state-restoring final Clifford")
            sequences.append(RbSequence(clifford_length=length, word=tuple(word)))
    return RbDataset(sequences=tuple(sequences))


def simulate_rb_counts(dataset: RbDataset, device: TrueDevice, shots: int) -> RbDataset:
    filled = tuple(
        replace(seq, shots=shots, counts=device.measure(seq.word, shots).counts)
        for seq in dataset.sequences
    )
    return RbDataset(sequences=filled, survival_index=dataset.survival_index)


# ---------------------------------------------------------------------------
# decay fitting


@dataclass(frozen=True)
class RbFitResult:
    r_clifford: float
    amplitude: float
    baseline: float
    stderr_r: float
    f_primitive: float
    sigma_f_primitive: float
    mean_word_length: float


def _decay(length, amplitude, r_clifford, baseline):
    return amplitude * (1.0 - (4.0 / 3.0) * r_clifford) ** length + baseline


def fit_rb_decay(dataset: RbDataset) -> RbFitResult:
    """Fit P = A (1 - 4/3 r_C)^L + B to the per-sequence survival data.

    The primitive-level fidelity converts the per-Clifford depolarizing
    parameter through the dataset's mean primitive count per Clifford.
    """
    lengths = np.array([s.clifford_length for s in dataset.sequences], dtype=float)
    if len(set(lengths)) < 3:
        raise DataError("RB fit needs at least 3 distinct sequence lengths")
    survivals = np.array(
        [s.survival(dataset.survival_index) for s in dataset.sequences]
    )
    try:
        popt, pcov = opt.curve_fit(
            _decay,
            lengths,
            survivals,
            p0=(0.7, 0.02, 0.25),
            bounds=([0.0, 0.0, 0.0], [1.0, 0.7499, 1.0]),
            maxfev=20_000,
        )
    except RuntimeError as exc:
        residual = survivals - np.mean(survivals)
        raise DataError(f"RB decay fit diverged (residual scale {np.std(residual):.3g})") from exc
    amplitude, r_clifford, baseline = popt
    stderr_r = float(np.sqrt(max(pcov[1, 1], 0.0)))
    k_bar = dataset.mean_word_length()
    alpha = 1.0 - (4.0 / 3.0) * r_clifford
    alpha_prim = alpha ** (1.0 / k_bar) if k_bar > 0 else alpha
    f_primitive = 1.0 - 0.75 * (1.0 - alpha_prim)
    # d f_prim / d r_C through alpha
    dfdr = (alpha_prim / alpha) / k_bar if k_bar > 0 else 1.0
    sigma_f_primitive = abs(dfdr) * stderr_r
    return RbFitResult(
        r_clifford=float(r_clifford),
        amplitude=float(amplitude),
        baseline=float(baseline),
        stderr_r=stderr_r,
        f_primitive=float(f_primitive),
        sigma_f_primitive=float(sigma_f_primitive),
        mean_word_length=float(k_bar),
    )


# ---------------------------------------------------------------------------
# benchmark-informed prior


def rb_prior_update(
    belief: GaussianBelief,
    f_bar: float,
    sigma_f: float,
    n_samples: int,
    template: GateSet,
    rng: np.random.Generator | int | None = None,
    fidelity_form: str = "standard",
    projection_tol: float = 1e-8,
) -> GaussianBelief:
    """Bootstrap the prior from an average-fidelity benchmark.

    Draws (fidelity, gate set) pairs from the current belief, projects each
    gate set onto the CPTP channels with that exact mean fidelity, and
    replaces the belief by the sample mean and covariance of the projected
    parameter vectors.  The projection tolerance is looser than the default
    because the output is a sample statistic.
    """
    if sigma_f <= 0:
        raise ValueError("sigma_f must be positive")
    if n_samples < 10:
        raise ValueError("n_samples must be >= 10")
    rng = np.random.default_rng(rng)
    factor = _psd_factor(belief.cov)
    d = template.dim
    f_floor = (1.0 + d) / (d * d + d)
    n_params = belief.mean.shape[0]
    lams = belief.mean + rng.standard_normal((n_samples, n_params)) @ factor.T
    fidelities = np.clip(
        rng.normal(f_bar, sigma_f, size=n_samples), f_floor + 1e-6, 1.0
    )
    packing = template.packing()
    size = packing.size

    def channel_stack(name):
        block = lams[:, packing.slices[name]].reshape(n_samples, size - 1, size)
        stack = np.zeros((n_samples, size, size))
        stack[:, 0, 0] = 1.0
        stack[:, 1:, :] = block
        return stack

    gate_names = [g.name for g in template.gates]
    gate_stacks = np.stack([channel_stack(name) for name in gate_names], axis=1)
    projected = project_gatesets_fidelity_stack(
        gate_stacks, fidelities, form=fidelity_form, tol=projection_tol
    )
    samples = np.empty((n_samples, n_params))
    for gi, name in enumerate(gate_names):
        samples[:, packing.slices[name]] = projected[:, gi, 1:, :].reshape(
            n_samples, -1
        )
    for name in packing.names:
        if name in gate_names:
            continue
        spam = project_cptp_stack(channel_stack(name), tol=projection_tol)
        samples[:, packing.slices[name]] = spam[:, 1:, :].reshape(n_samples, -1)
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / (n_samples - 1)
    cov = (cov + cov.T) / 2 + 1e-12 * np.eye(cov.shape[0])
    return GaussianBelief(mean=mean, cov=cov, packing=belief.packing)


# ---------------------------------------------------------------------------
# repurposing RB data as tomography records


def rb_to_fbt_records(dataset: RbDataset) -> list[ExperimentRecord]:
    """One tomography record per RB sequence, directly consumable online."""
    records = []
    for seq in dataset.sequences:
        if seq.counts is None or seq.shots is None:
            raise DataError("RB dataset has no counts to repurpose")
        records.append(
            ExperimentRecord(
                sequence=seq.word,
                shots=seq.shots,
                counts=seq.counts,
                clifford_length=seq.clifford_length,
            )
        )
    return records


def records_to_rb_dataset(records) -> RbDataset:
    sequences = []
    for i, rec in enumerate(records):
        if rec.clifford_length is None:
            raise DataError(f"record {i}: missing clifford_length for RB data")
        sequences.append(
            RbSequence(
                clifford_length=rec.clifford_length,
                word=rec.sequence,
                shots=rec.shots,
                counts=rec.counts,
            )
        )
    return RbDataset(sequences=tuple(sequences))
