"""Exact sequence model and its first-order linearization.

A measurement setting applies a sequence of gates (given by indices into the
gate set) to the prepared state and reads out the POVM:

    p = E . L_meas . prod_i (L_i G_i) . L_prep . rho0

The linearized model expands p around the noise channels of a reference gate
set (the current prior mean).  The Jacobian block of a gate is the sum of the
single-occurrence insertion terms over every position where the gate appears;
SPAM channels get the analogous boundary insertions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gates import MEAS_CHANNEL, PREP_CHANNEL, GateSet, pack, unpack_channels

GateSequence = tuple[int, ...]


def validate_sequence(seq, n_gates: int) -> GateSequence:
    """Normalize a gate-index sequence, rejecting out-of-range indices."""
    seq = tuple(int(i) for i in seq)
    for i in seq:
        if i < 0 or i >= n_gates:
            raise ValueError(f"gate index {i} out of range for {n_gates} gates")
    return seq


@dataclass(frozen=True)
class LinearizedSetting:
    """First-order model of one measurement setting around `lam_bar`."""

    sequence: GateSequence
    m_bar: np.ndarray  # (M,) expected outcome distribution at the mean
    a_bar: np.ndarray  # (M, P) Jacobian w.r.t. the packed parameters
    lam_bar: np.ndarray  # (P,) expansion point


def forward_probabilities(gateset: GateSet, seq) -> np.ndarray:
    """Exact outcome distribution of `seq` under the gate set's own noise."""
    seq = validate_sequence(seq, gateset.n_gates)
    state = gateset.prep_noise @ gateset.rho0
    for idx in seq:
        gate = gateset.gates[idx]
        state = gate.noise @ (gate.ideal @ state)
    state = gateset.meas_noise @ state
    return gateset.povm.effects @ state


def exact_forward(lam: np.ndarray, seq, gateset: GateSet) -> np.ndarray:
    """Exact outcome distribution with noise channels unpacked from `lam`."""
    seq = validate_sequence(seq, gateset.n_gates)
    packing = gateset.packing()
    channels = unpack_channels(lam, packing)
    names = [g.name for g in gateset.gates]
    state = channels.get(PREP_CHANNEL, gateset.prep_noise) @ gateset.rho0
    for idx in seq:
        gate = gateset.gates[idx]
        state = channels[names[idx]] @ (gate.ideal @ state)
    state = channels.get(MEAS_CHANNEL, gateset.meas_noise) @ state
    return gateset.povm.effects @ state


def exact_forward_batch(lams: np.ndarray, seq, gateset: GateSet) -> np.ndarray:
    """Vectorized :func:`exact_forward` over rows of `lams` (shape (S, P))."""
    lams = np.asarray(lams, dtype=float)
    seq = validate_sequence(seq, gateset.n_gates)
    packing = gateset.packing()
    if lams.ndim != 2 or lams.shape[1] != packing.total:
        raise ValueError("lams must be (n_samples, n_parameters)")
    n_samples = lams.shape[0]
    size = packing.size
    # (S, size, size) noise stack per free channel; top rows pinned
    stacks = {}
    for name in packing.names:
        block = lams[:, packing.slices[name]].reshape(n_samples, size - 1, size)
        mat = np.zeros((n_samples, size, size))
        mat[:, 0, 0] = 1.0
        mat[:, 1:, :] = block
        stacks[name] = mat
    names = [g.name for g in gateset.gates]
    if PREP_CHANNEL in stacks:
        state = stacks[PREP_CHANNEL] @ gateset.rho0
    else:
        state = np.broadcast_to(
            gateset.prep_noise @ gateset.rho0, (n_samples, size)
        ).copy()
    for idx in seq:
        gate = gateset.gates[idx]
        state = (stacks[names[idx]] @ (state @ gate.ideal.T)[..., None])[..., 0]
    if MEAS_CHANNEL in stacks:
        state = (stacks[MEAS_CHANNEL] @ state[..., None])[..., 0]
    else:
        state = state @ gateset.meas_noise.T
    return state @ gateset.povm.effects.T


def linearize(gateset_mean: GateSet, seq) -> LinearizedSetting:
    """Linearize the sequence model at the given gate set's noise channels.

    Repeated occurrences of a gate accumulate into its shared parameter block
    (the literal first-order Taylor term); measurement and preparation noise
    channels, when free, get analogous single-insertion blocks.
    """
    seq = validate_sequence(seq, gateset_mean.n_gates)
    packing = gateset_mean.packing()
    size = packing.size
    n_out = gateset_mean.n_outcomes
    names = [g.name for g in gateset_mean.gates]

    # forward pass: w[j] = state after the first j gates (incl. prep noise)
    w = np.empty((len(seq) + 1, size))
    w[0] = gateset_mean.prep_noise @ gateset_mean.rho0
    rvecs = np.empty((len(seq), size))
    for j, idx in enumerate(seq):
        gate = gateset_mean.gates[idx]
        rvecs[j] = gate.ideal @ w[j]
        w[j + 1] = gate.noise @ rvecs[j]

    # backward pass: lmats[j] = E L_meas (product of mean channels after j)
    effects = gateset_mean.povm.effects
    lmats = np.empty((len(seq) + 1, n_out, size))
    lmats[len(seq)] = effects @ gateset_mean.meas_noise
    for j in range(len(seq) - 1, -1, -1):
        gate = gateset_mean.gates[seq[j]]
        lmats[j] = lmats[j + 1] @ (gate.noise @ gate.ideal)

    m_bar = lmats[len(seq)] @ w[len(seq)]
    a_bar = np.zeros((n_out, packing.total))

    if seq:
        # per-position insertion blocks, scattered into the owning gate block
        inserts = np.einsum("tma,tb->tmab", lmats[1:, :, 1:], rvecs)
        blocks = inserts.reshape(len(seq), n_out, (size - 1) * size)
        seq_arr = np.asarray(seq)
        for idx in np.unique(seq_arr):
            block = blocks[seq_arr == idx].sum(axis=0)
            a_bar[:, packing.slices[names[idx]]] = block

    if gateset_mean.fit_meas_noise:
        block = np.einsum("ma,b->mab", effects[:, 1:], w[len(seq)])
        a_bar[:, packing.slices[MEAS_CHANNEL]] = block.reshape(n_out, -1)
    if gateset_mean.fit_prep_noise:
        lmat0 = lmats[0]
        block = np.einsum("ma,b->mab", lmat0[:, 1:], gateset_mean.rho0)
        a_bar[:, packing.slices[PREP_CHANNEL]] = block.reshape(n_out, -1)

    return LinearizedSetting(
        sequence=seq, m_bar=m_bar, a_bar=a_bar, lam_bar=pack(gateset_mean)
    )


def approximation_error(
    lam_sample: np.ndarray, setting: LinearizedSetting, gateset: GateSet
) -> np.ndarray:
    """Difference between the exact model and the linear model at a sample."""
    lam_sample = np.asarray(lam_sample, dtype=float)
    exact = exact_forward(lam_sample, setting.sequence, gateset)
    linear = setting.m_bar + setting.a_bar @ (lam_sample - setting.lam_bar)
    return exact - linear


# ---------------------------------------------------------------------------
# baseline linear process tomography (reference path)


def qpt_design_matrix(effect_vecs: np.ndarray, prep_vecs: np.ndarray) -> np.ndarray:
    """Design matrix for single-gate QPT with row-major vectorization.

    Row (i, j) is kron(effect_i, prep_j), so that the measured value is
    row . vec(R) for channel PTM R.
    """
    effect_vecs = np.asarray(effect_vecs, dtype=float)
    prep_vecs = np.asarray(prep_vecs, dtype=float)
    rows = [np.kron(e, p) for e in effect_vecs for p in prep_vecs]
    return np.array(rows)


def qpt_pseudoinverse_estimate(
    effect_vecs: np.ndarray, prep_vecs: np.ndarray, measurements: np.ndarray
) -> np.ndarray:
    """Least-squares channel estimate from stacked single-gate settings."""
    design = qpt_design_matrix(effect_vecs, prep_vecs)
    sol, *_ = np.linalg.lstsq(design, np.asarray(measurements, dtype=float).ravel(), rcond=None)
    size = np.asarray(effect_vecs).shape[1]
    return sol.reshape(size, size)
