import numpy as np
import pytest

from conftest import random_cptp_ptm, random_tp_ptm
from gatetomo.engine import GaussianBelief, default_prior
from gatetomo.gates import native_two_qubit_gate_set, pack, single_qubit_xz_gate_set
from gatetomo.project import (
    average_gateset_fidelity,
    min_choi_eigenvalue,
    pmap_estimate,
    project_cptp,
    project_gateset_with_fidelity,
)
from gatetomo.ptm import average_gate_fidelity


def test_cptp_input_is_fixed_point():
    rng = np.random.default_rng(1)
    for n in (1, 2):
        ptm = random_cptp_ptm(rng, n)
        projected, report = project_cptp(ptm)
        assert report.converged
        assert report.iterations == 1
        assert report.final_distance <= 1e-10
        assert np.allclose(projected, ptm, atol=1e-10)


def test_inflated_depolarizing_projects_to_identity():
    ptm = np.diag([1.0, 1.2, 1.2, 1.2])
    projected, report = project_cptp(ptm)
    assert report.converged
    assert np.allclose(projected, np.eye(4), atol=1e-8)
    assert report.min_choi_eig >= -1e-8


def test_projection_output_is_cptp_and_idempotent():
    rng = np.random.default_rng(2)
    for n in (1, 2):
        for _ in range(4):
            ptm = random_tp_ptm(rng, n, scale=0.25)
            projected, report = project_cptp(ptm)
            assert report.converged
            assert report.min_choi_eig >= -1e-8
            top = np.zeros(4**n)
            top[0] = 1.0
            assert np.array_equal(projected[0], top)
            again, report2 = project_cptp(projected)
            assert np.linalg.norm(again - projected) <= 1e-9


def test_projection_beats_random_cptp_probes():
    rng = np.random.default_rng(3)
    for _ in range(3):
        ptm = random_tp_ptm(rng, 1, scale=0.3)
        projected, _ = project_cptp(ptm)
        dist = np.linalg.norm(projected - ptm)
        for _ in range(1000):
            probe = random_cptp_ptm(rng, 1, n_kraus=int(rng.integers(1, 5)))
            assert dist <= np.linalg.norm(probe - ptm) + 1e-12


def test_projection_is_non_expansive():
    rng = np.random.default_rng(4)
    for _ in range(5):
        a = random_tp_ptm(rng, 1, scale=0.2)
        b = random_tp_ptm(rng, 1, scale=0.2)
        pa, _ = project_cptp(a)
        pb, _ = project_cptp(b)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-8


def test_fidelity_projection_keeps_ideal_set_at_f_one():
    gs = single_qubit_xz_gate_set()
    projected, report = project_gateset_with_fidelity(gs, 1.0)
    assert report.converged
    for g, p in zip(gs.gates, projected.gates):
        assert np.allclose(g.noise, p.noise, atol=1e-9)


def test_fidelity_projection_hits_target():
    gs = single_qubit_xz_gate_set()
    target = 0.97
    projected, report = project_gateset_with_fidelity(gs, target)
    assert report.converged
    assert average_gateset_fidelity(projected) == pytest.approx(target, abs=1e-6)
    assert report.min_choi_eig >= -1e-8
    # unital blocks shrink to pay for the fidelity drop
    for g in projected.gates:
        assert np.trace(g.noise[1:, 1:]) < 3.0


def test_fidelity_projection_idempotent():
    rng = np.random.default_rng(5)
    gs = single_qubit_xz_gate_set()
    noisy = gs.with_noise({name: random_tp_ptm(rng, 1, 0.1) for name in ("X90", "Z90")})
    target = 0.96
    once, _ = project_gateset_with_fidelity(noisy, target)
    twice, _ = project_gateset_with_fidelity(once, target)
    total = sum(
        np.linalg.norm(a.noise - b.noise) for a, b in zip(once.gates, twice.gates)
    )
    assert total <= 1e-8


def test_fidelity_projection_rejects_infeasible_target():
    gs = single_qubit_xz_gate_set()
    with pytest.raises(ValueError):
        project_gateset_with_fidelity(gs, 0.2)  # below the depolarizing floor 1/d


def test_pmap_estimate_identity_on_cptp_mean():
    rng = np.random.default_rng(6)
    gs = single_qubit_xz_gate_set(fit_meas_noise=True)
    channels = {name: random_cptp_ptm(rng, 1) for name in gs.free_channel_names()}
    noisy = gs.with_noise(channels)
    belief = GaussianBelief(pack(noisy), np.eye(36), noisy.packing())
    estimate = pmap_estimate(belief, gs)
    for name in gs.free_channel_names():
        assert np.allclose(estimate.noise_of(name), noisy.noise_of(name), atol=1e-8)


def test_pmap_estimate_only_touches_unphysical_channels():
    gs = single_qubit_xz_gate_set(fit_meas_noise=False)
    bad = np.diag([1.0, 1.3, 1.3, 1.3])
    noisy = gs.with_noise({"X90": bad})
    belief = GaussianBelief(pack(noisy), np.eye(24), noisy.packing())
    estimate = pmap_estimate(belief, gs)
    assert np.allclose(estimate.noise_of("Z90"), np.eye(4), atol=1e-9)
    assert min_choi_eigenvalue(estimate.noise_of("X90")) >= -1e-8
    assert not np.allclose(estimate.noise_of("X90"), bad, atol=1e-3)


def test_average_gateset_fidelity_of_native_set():
    gs = native_two_qubit_gate_set()
    assert average_gateset_fidelity(gs) == pytest.approx(1.0, abs=1e-12)
    assert average_gate_fidelity(gs.gates[0].noise) == 1.0
