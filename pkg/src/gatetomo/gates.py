"""Gate sets: ideal gates, their noise channels, SPAM, and parameter packing.

Every noisy gate is stored as the ideal PTM G together with a noise PTM L
acting after it (noisy gate = L @ G).  Noise channels always carry the exact
trace-preservation top row [1, 0, ..., 0]; that row is never part of the flat
parameter vector, so a channel contributes d^2 (d^2 - 1) free parameters.

The flat vector stacks, per free channel, rows 1..d^2-1 of its noise PTM in
row-major order.  Channel order is gate order, then the measurement noise
channel (name "meas") and the preparation noise channel (name "prep") when
those are flagged as free.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .ptm import (
    Povm,
    computational_povm,
    computational_state,
    ptm_identity,
    unitary_to_ptm,
)

MEAS_CHANNEL = "meas"
PREP_CHANNEL = "prep"

_X90 = np.array([[1, -1j], [-1j, 1]], dtype=complex) / np.sqrt(2)
# sqrt(X) phase convention for the conditional rotation block: SX^2 = X
# exactly, so a doubled conditional rotation is a plain CNOT and the fourth
# power is the identity.  The global-phase difference to exp(-i pi X / 4) is
# absorbed by the virtual-Z unknowns.
_SX = np.exp(1j * np.pi / 4) * _X90
_Z90 = np.diag([np.exp(-1j * np.pi / 4), np.exp(1j * np.pi / 4)])
_P_UP = np.diag([1.0, 0.0]).astype(complex)
_P_DOWN = np.diag([0.0, 1.0]).astype(complex)


def _top_row_snapped(noise: np.ndarray) -> np.ndarray:
    noise = np.array(noise, dtype=float)
    size = noise.shape[0]
    top = np.zeros(size)
    top[0] = 1.0
    if not np.allclose(noise[0], top, atol=1e-9):
        raise ValueError("noise channel top row must be [1, 0, ..., 0]")
    noise[0] = top
    return noise


@dataclass(frozen=True)
class NoisyGate:
    """One primitive gate: ideal PTM plus a trailing noise channel."""

    name: str
    ideal: np.ndarray  # (d^2, d^2) orthogonal for unitary gates
    noise: np.ndarray  # (d^2, d^2), top row pinned to e0
    unitary: np.ndarray | None = None  # ideal d x d unitary when known
    virtual: bool = False  # software frame change, expected near-ideal

    def __post_init__(self):
        object.__setattr__(self, "noise", _top_row_snapped(self.noise))
        object.__setattr__(self, "ideal", np.asarray(self.ideal, dtype=float))

    @property
    def noisy_ptm(self) -> np.ndarray:
        return self.noise @ self.ideal


@dataclass(frozen=True)
class ParameterPacking:
    """Layout of the flat noise-parameter vector."""

    names: tuple[str, ...]
    size: int  # d^2
    slices: dict[str, slice] = field(default_factory=dict)

    @property
    def per_channel(self) -> int:
        return self.size * (self.size - 1)

    @property
    def total(self) -> int:
        return self.per_channel * len(self.names)


@dataclass(frozen=True)
class GateSet:
    """Ordered noisy gates plus SPAM description.

    `meas_noise` and `prep_noise` are always present as PTMs (identity when
    trivial); the `fit_*` flags control whether they appear in the packed
    parameter vector.
    """

    gates: tuple[NoisyGate, ...]
    povm: Povm
    rho0: np.ndarray  # (d^2,) Pauli coefficients
    meas_noise: np.ndarray
    prep_noise: np.ndarray
    fit_meas_noise: bool = True
    fit_prep_noise: bool = False

    def __post_init__(self):
        if not self.gates:
            raise ValueError("gate set needs at least one gate")
        size = self.gates[0].ideal.shape[0]
        for g in self.gates:
            if g.ideal.shape != (size, size) or g.noise.shape != (size, size):
                raise ValueError("inconsistent gate dimensions")
        names = [g.name for g in self.gates]
        if len(set(names)) != len(names):
            raise ValueError("gate names must be unique")
        if MEAS_CHANNEL in names or PREP_CHANNEL in names:
            raise ValueError(f"gate names {MEAS_CHANNEL!r}/{PREP_CHANNEL!r} are reserved")
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "rho0", np.asarray(self.rho0, dtype=float))
        object.__setattr__(self, "meas_noise", _top_row_snapped(self.meas_noise))
        object.__setattr__(self, "prep_noise", _top_row_snapped(self.prep_noise))

    @property
    def size(self) -> int:
        """Side length d^2 of the PTMs."""
        return self.gates[0].ideal.shape[0]

    @property
    def n_qubits(self) -> int:
        return int(round(np.log2(self.size) / 2))

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    @property
    def n_gates(self) -> int:
        return len(self.gates)

    @property
    def n_outcomes(self) -> int:
        return self.povm.n_outcomes

    def free_channel_names(self) -> tuple[str, ...]:
        names = [g.name for g in self.gates]
        if self.fit_meas_noise:
            names.append(MEAS_CHANNEL)
        if self.fit_prep_noise:
            names.append(PREP_CHANNEL)
        return tuple(names)

    def packing(self) -> ParameterPacking:
        names = self.free_channel_names()
        per = self.size * (self.size - 1)
        slices = {name: slice(i * per, (i + 1) * per) for i, name in enumerate(names)}
        return ParameterPacking(names=names, size=self.size, slices=slices)

    def noise_of(self, name: str) -> np.ndarray:
        if name == MEAS_CHANNEL:
            return self.meas_noise
        if name == PREP_CHANNEL:
            return self.prep_noise
        for g in self.gates:
            if g.name == name:
                return g.noise
        raise KeyError(name)

    def with_noise(self, channels: dict[str, np.ndarray]) -> "GateSet":
        """Copy of this gate set with the given noise channels replaced."""
        gates = tuple(
            replace(g, noise=channels[g.name]) if g.name in channels else g
            for g in self.gates
        )
        meas = channels.get(MEAS_CHANNEL, self.meas_noise)
        prep = channels.get(PREP_CHANNEL, self.prep_noise)
        return replace(self, gates=gates, meas_noise=meas, prep_noise=prep)

    def ideal_copy(self) -> "GateSet":
        eye = ptm_identity(self.n_qubits)
        channels = {name: eye for name in
                    [g.name for g in self.gates] + [MEAS_CHANNEL, PREP_CHANNEL]}
        return self.with_noise(channels)


def pack(gateset: GateSet) -> np.ndarray:
    """Flatten all free noise channels, excluding the pinned top rows."""
    parts = [gateset.noise_of(name)[1:].ravel() for name in gateset.free_channel_names()]
    return np.concatenate(parts) if parts else np.zeros(0)


def unpack(lam: np.ndarray, template: GateSet) -> GateSet:
    """Rebuild a gate set from a flat parameter vector.

    The template provides ideal gates, SPAM structure, and the packing; the
    pinned top rows are re-inserted.  Raises ValueError on length mismatch.
    """
    lam = np.asarray(lam, dtype=float)
    packing = template.packing()
    if lam.shape != (packing.total,):
        raise ValueError(
            f"parameter vector has length {lam.shape}, expected {packing.total}"
        )
    size = packing.size
    channels = {}
    for name in packing.names:
        block = lam[packing.slices[name]].reshape(size - 1, size)
        mat = np.empty((size, size))
        mat[0] = 0.0
        mat[0, 0] = 1.0
        mat[1:] = block
        channels[name] = mat
    return template.with_noise(channels)


def unpack_channels(lam: np.ndarray, packing: ParameterPacking) -> dict[str, np.ndarray]:
    """Like :func:`unpack` but returning bare channel matrices."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (packing.total,):
        raise ValueError("parameter vector length mismatch")
    size = packing.size
    out = {}
    for name in packing.names:
        block = lam[packing.slices[name]].reshape(size - 1, size)
        mat = np.empty((size, size))
        mat[0] = 0.0
        mat[0, 0] = 1.0
        mat[1:] = block
        out[name] = mat
    return out


# ---------------------------------------------------------------------------
# builtin gate sets


def _ideal_gate(name: str, unitary: np.ndarray, virtual: bool = False) -> NoisyGate:
    ptm = unitary_to_ptm(unitary)
    return NoisyGate(
        name=name,
        ideal=ptm,
        noise=np.eye(ptm.shape[0]),
        unitary=unitary,
        virtual=virtual,
    )


def crot_unitary(target_qubit: int, control_state: str) -> np.ndarray:
    """Conditional X_{pi/2}: rotates `target_qubit` when the other qubit is in
    `control_state` ("up" or "down"); identity otherwise.  Qubit 1 is the slow
    tensor index and "up" is the first basis state."""
    proj = _P_UP if control_state == "up" else _P_DOWN
    proj_bar = _P_DOWN if control_state == "up" else _P_UP
    if target_qubit == 1:
        return np.kron(_SX, proj) + np.kron(np.eye(2, dtype=complex), proj_bar)
    return np.kron(proj, _SX) + np.kron(proj_bar, np.eye(2, dtype=complex))


def native_two_qubit_gate_set(
    fit_meas_noise: bool = True, fit_prep_noise: bool = False
) -> GateSet:
    """The six-gate native set: four conditional X_{pi/2} rotations plus a
    virtual Z_{pi/2} on each qubit.

    Preparation is |up,up> and readout is the computational-basis POVM with
    outcome order (up-up, up-down, down-up, down-down).
    """
    gates = (
        _ideal_gate("U1_down", crot_unitary(1, "down")),
        _ideal_gate("U1_up", crot_unitary(1, "up")),
        _ideal_gate("Z1", np.kron(_Z90, np.eye(2, dtype=complex)), virtual=True),
        _ideal_gate("U2_down", crot_unitary(2, "down")),
        _ideal_gate("U2_up", crot_unitary(2, "up")),
        _ideal_gate("Z2", np.kron(np.eye(2, dtype=complex), _Z90), virtual=True),
    )
    eye = ptm_identity(2)
    return GateSet(
        gates=gates,
        povm=computational_povm(2),
        rho0=computational_state(2, 0),
        meas_noise=eye,
        prep_noise=eye,
        fit_meas_noise=fit_meas_noise,
        fit_prep_noise=fit_prep_noise,
    )


def single_qubit_xz_gate_set(
    fit_meas_noise: bool = False, fit_prep_noise: bool = False
) -> GateSet:
    """Minimal one-qubit set {X_{pi/2}, Z_{pi/2}} used for small scenarios."""
    gates = (
        _ideal_gate("X90", _X90),
        _ideal_gate("Z90", _Z90, virtual=True),
    )
    eye = ptm_identity(1)
    return GateSet(
        gates=gates,
        povm=computational_povm(1),
        rho0=computational_state(1, 0),
        meas_noise=eye,
        prep_noise=eye,
        fit_meas_noise=fit_meas_noise,
        fit_prep_noise=fit_prep_noise,
    )


BUILTIN_GATESETS = {
    "native_two_qubit": native_two_qubit_gate_set,
    "single_qubit_xz": single_qubit_xz_gate_set,
}


# ---------------------------------------------------------------------------
# JSON config


def unitary_from_json(payload) -> np.ndarray:
    """Complex matrix from nested [re, im] pairs."""
    arr = np.asarray(payload, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigError("unitary must be a square matrix of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def unitary_to_json(unitary: np.ndarray) -> list:
    arr = np.stack([unitary.real, unitary.imag], axis=-1)
    return arr.tolist()


def gateset_from_config(config: dict) -> GateSet:
    """Build a gate set from a JSON config document.

    Either {"builtin": <name>, ...flags} or an explicit
    {"gates": [{"name", "unitary", optional "virtual"}], ...flags} form.
    """
    fit_meas = bool(config.get("fit_meas_noise", True))
    fit_prep = bool(config.get("fit_prep_noise", False))
    if "builtin" in config:
        name = config["builtin"]
        if name not in BUILTIN_GATESETS:
            raise ConfigError(
                f"unknown builtin gate set {name!r}; choices: {sorted(BUILTIN_GATESETS)}"
            )
        return BUILTIN_GATESETS[name](fit_meas_noise=fit_meas, fit_prep_noise=fit_prep)
    if "gates" not in config:
        raise ConfigError("gate set config needs 'builtin' or 'gates'")
    gates = []
    for entry in config["gates"]:
        try:
            unitary = unitary_from_json(entry["unitary"])
        except KeyError as exc:
            raise ConfigError("each gate needs 'name' and 'unitary'") from exc
        off_diag = unitary - np.diag(np.diag(unitary))
        virtual = bool(entry.get("virtual", np.allclose(off_diag, 0.0, atol=1e-10)))
        try:
            gates.append(_ideal_gate(entry["name"], unitary, virtual=virtual))
        except ValueError as exc:
            raise ConfigError(f"gate {entry.get('name')!r}: {exc}") from exc
    n_qubits = int(round(np.log2(gates[0].ideal.shape[0]) / 2))
    eye = ptm_identity(n_qubits)
    return GateSet(
        gates=tuple(gates),
        povm=computational_povm(n_qubits),
        rho0=computational_state(n_qubits, 0),
        meas_noise=eye,
        prep_noise=eye,
        fit_meas_noise=fit_meas,
        fit_prep_noise=fit_prep,
    )
