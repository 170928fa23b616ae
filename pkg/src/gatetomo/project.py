"""Projections onto physical channel sets and the projected point estimator.

Complete positivity is a PSD cone in the Choi picture; trace preservation and
Hermiticity preservation form an affine set in the PTM picture (top row e0,
real entries).  Since the PTM<->Choi change of basis is an isometry up to a
fixed 1/d scale, alternating Frobenius projections can hop between pictures
and still converge to the Frobenius-nearest CPTP point.  Dykstra's correction
terms make the alternation converge to the true projection rather than just
any intersection point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gates import GateSet, unpack
from .ptm import average_gate_fidelity, choi_to_ptm, ptm_to_choi, trace_gate_fidelity

DEFAULT_MAX_ITER = 5000
DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class ProjectionReport:
    iterations: int
    final_distance: float
    min_choi_eig: float
    converged: bool


def _project_cp(ptm: np.ndarray) -> np.ndarray:
    """Nearest PTM whose Choi matrix is PSD (eigenvalue clipping)."""
    choi = ptm_to_choi(ptm)
    choi = (choi + choi.conj().T) / 2
    evals, evecs = np.linalg.eigh(choi)
    if evals[0] >= 0:
        return choi_to_ptm(choi)
    clipped = (evecs * np.clip(evals, 0.0, None)) @ evecs.conj().T
    return choi_to_ptm(clipped)


def _project_cp_stack(ptms: np.ndarray) -> np.ndarray:
    """Batched Choi eigenvalue clipping over a stack of PTMs (..., D, D)."""
    from .ptm import _choi_map, n_qubits_from_dim

    size = ptms.shape[-1]
    n = n_qubits_from_dim(size)
    mapping = _choi_map(n)
    lead = ptms.shape[:-2]
    flat = ptms.reshape(-1, size * size)
    chois = (flat @ mapping.T).reshape(-1, size, size)
    chois = (chois + np.conj(np.swapaxes(chois, -1, -2))) / 2
    evals, evecs = np.linalg.eigh(chois)
    clipped = np.clip(evals, 0.0, None)
    rebuilt = (evecs * clipped[:, None, :]) @ np.conj(np.swapaxes(evecs, -1, -2))
    back = (rebuilt.reshape(-1, size * size) @ np.conj(mapping)) * (size)
    return back.real.reshape(*lead, size, size)


def _project_tp_stack(ptms: np.ndarray) -> np.ndarray:
    out = ptms.copy()
    out[..., 0, :] = 0.0
    out[..., 0, 0] = 1.0
    return out


def project_cptp_stack(
    ptms: np.ndarray,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    return_converged: bool = False,
):
    """Dykstra CPTP projection applied independently to a stack of PTMs.

    Identical semantics to mapping :func:`project_cptp` over the stack, but
    the Choi eigen-decompositions run batched; converged members freeze while
    the rest keep iterating.
    """
    x = np.asarray(ptms, dtype=float).copy()
    lead = x.shape[:-2]
    size = x.shape[-1]
    x = x.reshape(-1, size, size)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    active = np.ones(x.shape[0], dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        y = _project_cp_stack(x[idx] + p[idx])
        p[idx] = x[idx] + p[idx] - y
        x_new = _project_tp_stack(y + q[idx])
        q[idx] = y + q[idx] - x_new
        moved = np.linalg.norm(x_new - x[idx], axis=(1, 2))
        x[idx] = x_new
        active[idx] = moved >= tol
    out = x.reshape(*lead, size, size)
    if return_converged:
        return out, ~active.reshape(lead if lead else (-1,))
    return out


def project_gatesets_fidelity_stack(
    noise_stacks: np.ndarray,
    fidelities: np.ndarray,
    form: str = "standard",
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """Batched :func:`project_gateset_with_fidelity` over gate-noise stacks.

    `noise_stacks` has shape (samples, gates, D, D); each sample is projected
    onto CPTP channels whose mean fidelity equals its own target.
    """
    x = np.asarray(noise_stacks, dtype=float).copy()
    n_samples, n_gates, size, _ = x.shape
    d = int(round(np.sqrt(size)))
    fidelities = np.asarray(fidelities, dtype=float)
    if form == "standard":
        targets = n_gates * (fidelities * (d * d + d) - d)
    elif form == "trace":
        targets = n_gates * (fidelities * size + 1.0)
    else:
        raise ValueError("form must be 'standard' or 'trace'")

    diag_idx = np.arange(1, size)

    def proj_affine(stacks, targets_active):
        out = stacks.copy()
        out[:, :, 0, :] = 0.0
        out[:, :, 0, 0] = 1.0
        traces = np.trace(out, axis1=2, axis2=3).sum(axis=1)
        shift = (targets_active - traces) / (n_gates * (size - 1))
        out[:, :, diag_idx, diag_idx] += shift[:, None, None]
        return out

    p = np.zeros_like(x)
    q = np.zeros_like(x)
    active = np.ones(n_samples, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        y = _project_cp_stack(x[idx] + p[idx])
        p[idx] = x[idx] + p[idx] - y
        x_new = proj_affine(y + q[idx], targets[idx])
        q[idx] = y + q[idx] - x_new
        moved = np.sqrt(((x_new - x[idx]) ** 2).sum(axis=(1, 2, 3)))
        x[idx] = x_new
        active[idx] = moved >= tol
    return x


def _project_tp(ptm: np.ndarray) -> np.ndarray:
    """Nearest PTM with the trace-preservation top row."""
    out = ptm.copy()
    out[0] = 0.0
    out[0, 0] = 1.0
    return out


def min_choi_eigenvalue(ptm: np.ndarray) -> float:
    choi = ptm_to_choi(ptm)
    return float(np.linalg.eigvalsh((choi + choi.conj().T) / 2).min())


def project_cptp(
    ptm: np.ndarray,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> tuple[np.ndarray, ProjectionReport]:
    """Frobenius-nearest CPTP channel via Dykstra's alternating projections.

    Returns the projected PTM and a report; on CPTP input the fixed point is
    detected after a single iteration.  Non-convergence is reported, not
    raised, with the best iterate returned.
    """
    ptm = np.asarray(ptm, dtype=float)
    x = ptm.copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        y = _project_cp(x + p)
        p = x + p - y
        x_new = _project_tp(y + q)
        q = y + q - x_new
        if np.linalg.norm(x_new - x) < tol:
            x = x_new
            converged = True
            break
        x = x_new
    report = ProjectionReport(
        iterations=iterations,
        final_distance=float(np.linalg.norm(x - ptm)),
        min_choi_eig=min_choi_eigenvalue(x),
        converged=converged,
    )
    return x, report


def average_gateset_fidelity(gateset: GateSet, form: str = "standard") -> float:
    """Mean gate fidelity of the noise channels over the gate set."""
    fid = average_gate_fidelity if form == "standard" else trace_gate_fidelity
    return float(np.mean([fid(g.noise) for g in gateset.gates]))


def project_gateset_with_fidelity(
    gateset: GateSet,
    fidelity: float,
    form: str = "standard",
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> tuple[GateSet, ProjectionReport]:
    """Nearest gate set whose channels are CPTP with mean fidelity `fidelity`.

    Cyclic Dykstra over three sets in the product space of the gate noise
    channels: the per-gate CP cones, the per-gate TP rows, and the affine
    hyperplane pinning the mean gate fidelity (a linear constraint on the PTM
    traces).  The measurement and preparation noise channels are projected to
    plain CPTP alongside.  Raises ValueError for an infeasible target.
    """
    d = gateset.dim
    size = gateset.size
    n_gates = gateset.n_gates
    if form == "standard":
        f_floor = (1.0 + d) / (d * d + d)
        trace_target = n_gates * (fidelity * (d * d + d) - d)
    elif form == "trace":
        f_floor = 0.0
        trace_target = n_gates * (fidelity * size + 1.0)
    else:
        raise ValueError("form must be 'standard' or 'trace'")
    if not f_floor < fidelity <= 1.0 + 1e-12:
        raise ValueError(
            f"target fidelity {fidelity} outside the feasible range ({f_floor}, 1]"
        )

    start = np.array([g.noise for g in gateset.gates])

    def proj_affine(xs):
        # joint projection onto {TP top rows} and {sum of traces = target}:
        # pin the rows, then spread the residual trace shift uniformly over
        # the remaining diagonal entries (the exact Frobenius projection onto
        # the intersection of the two affine sets)
        out = xs.copy()
        out[:, 0, :] = 0.0
        out[:, 0, 0] = 1.0
        shift = (trace_target - np.trace(out, axis1=1, axis2=2).sum()) / (
            n_gates * (size - 1)
        )
        idx = np.arange(1, size)
        out[:, idx, idx] += shift
        return out

    x = start.copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        y = _project_cp_stack(x + p)
        p = x + p - y
        x_new = proj_affine(y + q)
        q = y + q - x_new
        if np.linalg.norm(x_new - x) < tol:
            x = x_new
            converged = True
            break
        x = x_new

    channels = {g.name: x[i] for i, g in enumerate(gateset.gates)}
    channels["meas"], _ = project_cptp(gateset.meas_noise, max_iter=max_iter, tol=tol)
    channels["prep"], _ = project_cptp(gateset.prep_noise, max_iter=max_iter, tol=tol)
    projected = gateset.with_noise(channels)
    report = ProjectionReport(
        iterations=iterations,
        final_distance=float(np.linalg.norm(x - start)),
        min_choi_eig=min(min_choi_eigenvalue(m) for m in x),
        converged=converged,
    )
    return projected, report


def project_gateset_cptp(
    gateset: GateSet, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL
) -> tuple[GateSet, dict[str, ProjectionReport]]:
    """Project every free noise channel of a gate set onto the CPTP set."""
    channels = {}
    reports = {}
    for name in gateset.free_channel_names():
        channels[name], reports[name] = project_cptp(
            gateset.noise_of(name), max_iter=max_iter, tol=tol
        )
    return gateset.with_noise(channels), reports


def pmap_estimate(belief, template: GateSet) -> GateSet:
    """Projected point estimate: unpack the belief mean and make it physical.

    Channels are projected independently, so a channel that is already CPTP
    comes back bit-identical up to the projection tolerance.
    """
    mean_gs = unpack(belief.mean, template)
    projected, _ = project_gateset_cptp(mean_gs)
    return projected
