"""Synthetic device: hidden noisy gate set, multinomial counts, dataset IO.

The device owns a ground-truth gate set with CPTP noise channels and returns
seeded multinomial counts for requested sequences.  All randomness derives
from (device seed, sequence hash, call counter), so a fixed seed reproduces a
dataset byte for byte while repeated measurements of the same sequence stay
statistically independent.

Records serialize as JSON lines {"seq": [...], "shots": N, "counts": [...]},
preceded by a single header object carrying type, format version, seed, and
config hash.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .forward import forward_probabilities, validate_sequence
from .gates import GateSet
from .ptm import (
    computational_state,
    kraus_to_ptm,
    pauli_basis,
    ptm_identity,
    ptm_to_choi,
    unitary_to_ptm,
)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ExperimentRecord:
    """One measurement setting: sequence, shot count, outcome counts."""

    sequence: tuple[int, ...]
    shots: int
    counts: np.ndarray
    true_probs: np.ndarray | None = None  # debug only, never used by fits
    clifford_length: int | None = None  # set on repurposed RB records

    def __post_init__(self):
        object.__setattr__(self, "sequence", tuple(int(i) for i in self.sequence))
        counts = np.asarray(self.counts, dtype=int)
        if counts.min() < 0 or counts.sum() != self.shots:
            raise DataError("counts must be non-negative and sum to shots")
        object.__setattr__(self, "counts", counts)


# ---------------------------------------------------------------------------
# noise model factory


def depolarizing_ptm(p: float, n_qubits: int) -> np.ndarray:
    if not 0.0 <= p <= 1.0 + 1e-12:
        raise ValueError("depolarizing probability must be in [0, 1]")
    size = 4**n_qubits
    diag = np.full(size, 1.0 - p)
    diag[0] = 1.0
    return np.diag(diag)


def coherent_overrotation_ptm(pauli_string: str, theta: float) -> np.ndarray:
    """PTM of exp(-i theta/2 * sigma) for the given Pauli string (e.g. "XI")."""
    basis = pauli_basis(len(pauli_string))
    try:
        idx = basis.labels.index(pauli_string.upper())
    except ValueError as exc:
        raise ValueError(f"unknown Pauli string {pauli_string!r}") from exc
    d = basis.dim
    sigma = basis.elements[idx] * np.sqrt(d)
    unitary = np.cos(theta / 2) * np.eye(d) - 1j * np.sin(theta / 2) * sigma
    return unitary_to_ptm(unitary)


def amplitude_damping_ptm(gamma: float, qubit: int, n_qubits: int) -> np.ndarray:
    """Single-qubit amplitude damping embedded on `qubit` (1-based)."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    k0 = np.array([[1.0, 0.0], [0.0, np.sqrt(1.0 - gamma)]], dtype=complex)
    k1 = np.array([[0.0, np.sqrt(gamma)], [0.0, 0.0]], dtype=complex)
    kraus = []
    for k in (k0, k1):
        op = np.array([[1.0 + 0j]])
        for q in range(1, n_qubits + 1):
            op = np.kron(op, k if q == qubit else np.eye(2, dtype=complex))
        kraus.append(op)
    return kraus_to_ptm(kraus)


def confusion_ptm(matrix) -> np.ndarray:
    """Classical assignment-error channel: measure in the computational basis,
    then prepare state i with probability Q[i, j].  Columns must sum to 1."""
    q = np.asarray(matrix, dtype=float)
    d = q.shape[0]
    if q.shape != (d, d) or q.min() < 0 or not np.allclose(q.sum(axis=0), 1.0, atol=1e-9):
        raise ValueError("confusion matrix must be square column-stochastic")
    n_qubits = int(round(np.log2(d)))
    if 2**n_qubits != d:
        raise ValueError("confusion matrix size must be a power of two")
    states = np.array([computational_state(n_qubits, k) for k in range(d)])
    return states.T @ q @ states


def make_noise_model(spec: dict, n_qubits: int) -> np.ndarray:
    """Build a noise PTM from a JSON-style description.

    Kinds: depolarizing(p), coherent(pauli, theta), amplitude_damping(gamma,
    qubit), confusion(matrix), composite(terms), identity.
    """
    kind = spec.get("kind")
    if kind == "identity":
        return ptm_identity(n_qubits)
    if kind == "depolarizing":
        return depolarizing_ptm(float(spec["p"]), n_qubits)
    if kind == "coherent":
        pauli = spec["pauli"]
        if len(pauli) != n_qubits:
            raise ValueError("Pauli string length must match qubit count")
        return coherent_overrotation_ptm(pauli, float(spec["theta"]))
    if kind == "amplitude_damping":
        return amplitude_damping_ptm(
            float(spec["gamma"]), int(spec.get("qubit", 1)), n_qubits
        )
    if kind == "confusion":
        return confusion_ptm(spec["matrix"])
    if kind == "composite":
        out = ptm_identity(n_qubits)
        for term in spec["terms"]:
            out = make_noise_model(term, n_qubits) @ out
        return out
    raise ValueError(f"unknown noise kind {kind!r}")


def default_assignment_confusion(n_qubits: int, error: float = 0.03) -> np.ndarray:
    """Mildly asymmetric readout confusion matrix used as a default truth."""
    q1 = np.array([[1.0 - error, 2 * error], [error, 1.0 - 2 * error]])
    q = np.array([[1.0]])
    for _ in range(n_qubits):
        q = np.kron(q, q1)
    return q / q.sum(axis=0, keepdims=True)


def truth_from_config(gateset: GateSet, noise_config: dict) -> GateSet:
    """Apply a truth noise description to an ideal gate set.

    Config keys: "default" (spec applied to every gate), "per_gate"
    {name: spec}, "meas", "prep".
    """
    n = gateset.n_qubits
    channels: dict[str, np.ndarray] = {}
    default = noise_config.get("default")
    per_gate = noise_config.get("per_gate", {})
    unknown = set(per_gate) - {g.name for g in gateset.gates}
    if unknown:
        raise ConfigError(f"per_gate noise for unknown gates: {sorted(unknown)}")
    for g in gateset.gates:
        spec = per_gate.get(g.name, default)
        if spec is not None:
            try:
                channels[g.name] = make_noise_model(spec, n)
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"noise for gate {g.name!r}: {exc}") from exc
    for key, name in (("meas", "meas"), ("prep", "prep")):
        if key in noise_config:
            try:
                channels[name] = make_noise_model(noise_config[key], n)
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"noise for {key!r}: {exc}") from exc
    return gateset.with_noise(channels)


# ---------------------------------------------------------------------------
# the device


def _min_choi_eigenvalue(ptm: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(ptm_to_choi(ptm)).min())


def _largest_remainder_counts(probs: np.ndarray, shots: int) -> np.ndarray:
    scaled = probs * shots
    counts = np.floor(scaled).astype(int)
    short = shots - counts.sum()
    if short > 0:
        order = np.argsort(-(scaled - counts))
        counts[order[:short]] += 1
    return counts


@dataclass
class TrueDevice:
    """Hidden ground truth plus a seeded multinomial sampler."""

    truth: GateSet
    seed: int = 0
    default_shots: int = 125
    _calls: int = field(default=0, repr=False)

    def __post_init__(self):
        for name in [g.name for g in self.truth.gates] + ["meas", "prep"]:
            low = _min_choi_eigenvalue(self.truth.noise_of(name))
            if low < -1e-9:
                raise NumericalError(
                    f"truth channel {name!r} is not CPTP (min Choi eig {low:.2e})"
                )

    def probabilities(self, seq) -> np.ndarray:
        probs = forward_probabilities(self.truth, seq)
        if probs.min() < -1e-12:
            raise NumericalError(
                f"negative Born probability {probs.min():.2e} from truth gate set"
            )
        probs = np.clip(probs, 0.0, None)
        return probs / probs.sum()

    def _rng_for(self, seq) -> np.random.Generator:
        key = zlib.crc32(np.asarray(seq, dtype=np.int64).tobytes())
        seed_seq = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(key, self._calls)
        )
        self._calls += 1
        return np.random.default_rng(seed_seq)

    def measure(
        self,
        seq,
        shots: int | None = None,
        keep_probs: bool = False,
        exact: bool = False,
    ) -> ExperimentRecord:
        """Multinomial counts for one sequence; `exact=True` returns the
        noiseless frequencies rounded to integer counts (largest remainder)."""
        shots = self.default_shots if shots is None else int(shots)
        if shots < 1:
            raise ValueError("shots must be >= 1")
        seq = validate_sequence(seq, self.truth.n_gates)
        probs = self.probabilities(seq)
        if exact:
            counts = _largest_remainder_counts(probs, shots)
        else:
            counts = self._rng_for(seq).multinomial(shots, probs)
        return ExperimentRecord(
            sequence=seq,
            shots=shots,
            counts=counts,
            true_probs=probs if keep_probs else None,
        )


def generate_tomography_settings(
    n_settings: int,
    max_length: int,
    n_gates: int,
    rng: np.random.Generator | int | None = None,
) -> list[tuple[int, ...]]:
    """Random primitive words with lengths stratified evenly over 0..max_length."""
    if max_length < 0 or n_settings < 1:
        raise ValueError("need max_length >= 0 and n_settings >= 1")
    rng = np.random.default_rng(rng)
    n_lengths = max_length + 1
    base, rem = divmod(n_settings, n_lengths)
    lengths = []
    for L in range(n_lengths):
        lengths.extend([L] * (base + (1 if L < rem else 0)))
    lengths = np.asarray(lengths)
    rng.shuffle(lengths)
    return [tuple(rng.integers(0, n_gates, size=L)) for L in lengths]


# ---------------------------------------------------------------------------
# JSON-lines dataset IO


def write_records(path, records, header: dict) -> None:
    header = {"version": FORMAT_VERSION, **header}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            payload = {
                "seq": list(rec.sequence),
                "shots": int(rec.shots),
                "counts": [int(c) for c in rec.counts],
            }
            if rec.clifford_length is not None:
                payload["clifford_length"] = int(rec.clifford_length)
            if rec.true_probs is not None:
                payload["true_probs"] = [float(p) for p in rec.true_probs]
            fh.write(json.dumps(payload) + "\n")


def read_records(path) -> tuple[dict, list[ExperimentRecord]]:
    """Parse a dataset file; malformed content names the offending line."""
    records = []
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if lineno == 1:
                if not isinstance(payload, dict) or "version" not in payload:
                    raise DataError("line 1: missing dataset header")
                header = payload
                continue
            try:
                records.append(
                    ExperimentRecord(
                        sequence=tuple(payload["seq"]),
                        shots=int(payload["shots"]),
                        counts=np.asarray(payload["counts"], dtype=int),
                        clifford_length=payload.get("clifford_length"),
                    )
                )
            except (KeyError, TypeError, ValueError, DataError) as exc:
                raise DataError(f"line {lineno}: {exc}") from exc
    if header is None:
        raise DataError("line 1: empty dataset file")
    return header, records
