import numpy as np
import pytest

from conftest import gradient_descent_posterior_mean
from gatetomo.engine import (
    GaussianBelief,
    NoiseStats,
    analytic_noise_stats,
    conditional_noise,
    default_prior,
    dominance_check,
    posterior_update,
    run_online,
    sample_noise_stats,
    shot_noise_covariance,
)
from gatetomo.errors import DataError
from gatetomo.forward import LinearizedSetting, linearize
from gatetomo.gates import (
    native_two_qubit_gate_set,
    pack,
    single_qubit_xz_gate_set,
)
from gatetomo.simulate import (
    ExperimentRecord,
    TrueDevice,
    generate_tomography_settings,
    make_noise_model,
)


def test_shot_noise_covariance_deterministic_outcome_is_zero():
    cov = shot_noise_covariance(np.array([1.0, 0, 0, 0]), 50, regularize=False)
    assert np.allclose(cov, 0.0)
    reg = shot_noise_covariance(np.array([1.0, 0, 0, 0]), 50)
    assert np.all(np.diag(reg) > 0)


def test_shot_noise_covariance_matches_empirical_sampler():
    rng = np.random.default_rng(0)
    for p, shots in [(np.array([0.5, 0.5]), 100), (np.array([0.25] * 4), 400)]:
        cov = shot_noise_covariance(p, shots, regularize=False)
        draws = rng.multinomial(shots, p, size=200_000) / shots
        emp = np.cov(draws.T)
        assert np.allclose(cov, emp, rtol=0.1, atol=1e-7)
    assert shot_noise_covariance(np.array([0.5, 0.5]), 100)[0, 0] == pytest.approx(
        0.0025, rel=1e-6
    )
    assert shot_noise_covariance(np.array([0.25] * 4), 400, regularize=False)[
        0, 0
    ] == pytest.approx(0.25 * 0.75 / 400, rel=1e-12)


def test_shot_noise_covariance_rejects_zero_shots():
    with pytest.raises(ValueError):
        shot_noise_covariance(np.array([1.0, 0.0]), 0)


def test_sample_noise_stats_delta_prior():
    gs = single_qubit_xz_gate_set()
    belief = default_prior(gs)
    belief.cov[:] = 0.0
    setting = linearize(gs, (0, 1))
    stats = sample_noise_stats(belief, setting, gs, shots=100, n_samples=20, rng=1)
    assert np.allclose(stats.eta_bar, 0.0, atol=1e-12)
    assert np.allclose(stats.gamma_eta, 0.0, atol=1e-12)
    assert np.allclose(stats.gamma_eta_x, 0.0, atol=1e-12)


def test_sample_noise_stats_affine_sequence_has_no_model_error():
    gs = single_qubit_xz_gate_set(fit_meas_noise=False)
    belief = default_prior(gs, sigma_pulsed=0.3, sigma_virtual=0.3)
    setting = linearize(gs, (0,))
    stats = sample_noise_stats(belief, setting, gs, shots=100, n_samples=50, rng=2)
    assert np.max(np.abs(stats.gamma_eta)) < 1e-12
    assert stats.approx_error_magnitude < 1e-12


def test_sample_noise_stats_second_order_scaling():
    gs = single_qubit_xz_gate_set(fit_meas_noise=False)
    setting = linearize(gs, (0, 1))
    big = default_prior(gs, sigma_pulsed=0.2, sigma_virtual=0.2)
    small = default_prior(gs, sigma_pulsed=0.02, sigma_virtual=0.02)
    stats_big = sample_noise_stats(big, setting, gs, shots=100, n_samples=600, rng=3)
    stats_small = sample_noise_stats(small, setting, gs, shots=100, n_samples=600, rng=3)
    ratio = np.trace(stats_big.gamma_eta) / np.trace(stats_small.gamma_eta)
    assert 1e3 < ratio < 1e5


def test_conditional_noise_without_cross_term():
    rng = np.random.default_rng(4)
    m_dim, p_dim = 3, 5
    gamma_eta = np.diag(rng.uniform(0.1, 1.0, m_dim))
    gamma_eps = np.diag(rng.uniform(0.1, 1.0, m_dim))
    stats = NoiseStats(
        eta_bar=np.zeros(m_dim),
        gamma_eta=gamma_eta,
        gamma_eta_x=np.zeros((m_dim, p_dim)),
        gamma_eps=gamma_eps,
        sample_count=10,
    )
    belief = GaussianBelief(np.zeros(p_dim), np.eye(p_dim))
    cond = conditional_noise(stats, belief)
    assert np.allclose(cond.cov, gamma_eta + gamma_eps, atol=1e-14)
    assert np.allclose(cond.gain, 0.0)


def test_conditional_noise_matches_schur_complement():
    rng = np.random.default_rng(5)
    p_dim, m_dim = 2, 2
    w = rng.standard_normal((p_dim + m_dim, p_dim + m_dim))
    joint = w @ w.T + 0.5 * np.eye(p_dim + m_dim)
    gamma_x = joint[:p_dim, :p_dim]
    gamma_eta_x = joint[p_dim:, :p_dim]
    gamma_eta = joint[p_dim:, p_dim:]
    gamma_eps = np.diag(rng.uniform(0.2, 0.5, m_dim))
    stats = NoiseStats(
        eta_bar=rng.standard_normal(m_dim),
        gamma_eta=gamma_eta,
        gamma_eta_x=gamma_eta_x,
        gamma_eps=gamma_eps,
        sample_count=10,
    )
    belief = GaussianBelief(np.zeros(p_dim), gamma_x)
    cond = conditional_noise(stats, belief)
    inv = np.linalg.inv(gamma_x)
    expected_cov = gamma_eta + gamma_eps - gamma_eta_x @ inv @ gamma_eta_x.T
    assert np.allclose(cond.cov, expected_cov, atol=1e-12)
    assert np.allclose(cond.gain, gamma_eta_x @ inv, atol=1e-12)


def _toy_setting(rng, p_dim, m_dim):
    a_bar = rng.standard_normal((m_dim, p_dim))
    return LinearizedSetting(
        sequence=(), m_bar=rng.uniform(0.1, 0.3, m_dim), a_bar=a_bar,
        lam_bar=np.zeros(p_dim),
    )


def test_posterior_update_uninformative_data_keeps_prior():
    rng = np.random.default_rng(6)
    p_dim, m_dim = 6, 3
    belief = GaussianBelief(rng.standard_normal(p_dim), np.eye(p_dim))
    setting = _toy_setting(rng, p_dim, m_dim)
    stats = NoiseStats(
        eta_bar=np.zeros(m_dim),
        gamma_eta=np.zeros((m_dim, m_dim)),
        gamma_eta_x=np.zeros((m_dim, p_dim)),
        gamma_eps=1e12 * np.eye(m_dim),
        sample_count=0,
    )
    new, _ = posterior_update(belief, setting, setting.m_bar + 0.1, stats)
    assert np.linalg.norm(new.mean - belief.mean) <= 1e-6 * max(
        np.linalg.norm(belief.mean), 1.0
    )
    assert np.max(np.abs(new.cov - belief.cov)) <= 1e-6


def test_posterior_update_scalar_conjugate_case():
    belief = GaussianBelief(np.zeros(1), np.eye(1))
    setting = LinearizedSetting(
        sequence=(), m_bar=np.zeros(1), a_bar=np.ones((1, 1)), lam_bar=np.zeros(1)
    )
    stats = NoiseStats(
        eta_bar=np.zeros(1),
        gamma_eta=np.zeros((1, 1)),
        gamma_eta_x=np.zeros((1, 1)),
        gamma_eps=np.eye(1),
        sample_count=0,
    )
    new, diag = posterior_update(belief, setting, np.array([1.0]), stats)
    assert new.mean[0] == pytest.approx(0.5, abs=1e-12)
    assert new.cov[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert diag.trace_post == pytest.approx(0.5, abs=1e-12)


def test_posterior_update_matches_gradient_descent_with_cross_term():
    rng = np.random.default_rng(7)
    p_dim, m_dim = 8, 3
    w = rng.standard_normal((p_dim + m_dim, p_dim + m_dim))
    joint = w @ w.T + 0.5 * np.eye(p_dim + m_dim)
    gamma_x = joint[:p_dim, :p_dim]
    gamma_eta_x = joint[p_dim:, :p_dim]
    gamma_eta = joint[p_dim:, p_dim:]
    gamma_eps = np.diag(rng.uniform(0.2, 1.0, m_dim))
    belief = GaussianBelief(rng.standard_normal(p_dim), gamma_x)
    setting = _toy_setting(rng, p_dim, m_dim)
    stats = NoiseStats(
        eta_bar=rng.standard_normal(m_dim) * 0.1,
        gamma_eta=gamma_eta,
        gamma_eta_x=gamma_eta_x,
        gamma_eps=gamma_eps,
        sample_count=50,
    )
    m = setting.m_bar + rng.standard_normal(m_dim) * 0.2
    new, _ = posterior_update(belief, setting, m, stats)

    inv = np.linalg.inv(gamma_x)
    gamma_e = gamma_eta + gamma_eps - gamma_eta_x @ inv @ gamma_eta_x.T
    a_eff = setting.a_bar + gamma_eta_x @ inv
    y = m - setting.m_bar - stats.eta_bar
    oracle = gradient_descent_posterior_mean(gamma_x, gamma_e, a_eff, y)
    assert np.linalg.norm((new.mean - belief.mean) - oracle) <= 1e-8

    # covariance uses the plain design matrix
    expected_cov = np.linalg.inv(
        np.linalg.inv(gamma_x)
        + setting.a_bar.T @ np.linalg.inv(gamma_e) @ setting.a_bar
    )
    assert np.allclose(new.cov, expected_cov, atol=1e-9)


def test_posterior_trace_never_increases_and_stays_symmetric():
    rng = np.random.default_rng(8)
    gs = single_qubit_xz_gate_set()
    belief = default_prior(gs)
    device = TrueDevice(truth=gs, seed=3, default_shots=200)
    for seq in [(0,), (1, 0), (0, 0, 1)]:
        record = device.measure(seq)
        setting = linearize(belief.gate_set(gs), seq)
        stats = sample_noise_stats(
            belief, setting, gs, shots=record.shots, n_samples=40, rng=9
        )
        trace_before = np.trace(belief.cov)
        belief, diag = posterior_update(
            belief, setting, record.counts / record.shots, stats
        )
        assert diag.trace_post <= trace_before + 1e-9
        assert np.allclose(belief.cov, belief.cov.T, atol=1e-12)
        assert belief.validate_psd() >= -1e-9


def test_one_update_reproduces_identity_linearization_estimate():
    # sampling disabled, mean at identity noise: the closed form must equal
    # the normal-equations solution of the identity-linearized model
    gs = single_qubit_xz_gate_set(fit_meas_noise=False)
    belief = default_prior(gs, sigma_pulsed=0.1, sigma_virtual=0.1)
    seq = (0, 1, 0)
    setting = linearize(gs, seq)
    device = TrueDevice(truth=gs, seed=11, default_shots=500)
    record = device.measure(seq)
    m = record.counts / record.shots
    stats = analytic_noise_stats(m, record.shots, belief.mean.shape[0])
    new, _ = posterior_update(belief, setting, m, stats)

    gamma_eps = stats.gamma_eps
    h = np.linalg.inv(belief.cov) + setting.a_bar.T @ np.linalg.inv(gamma_eps) @ setting.a_bar
    rhs = setting.a_bar.T @ np.linalg.inv(gamma_eps) @ (m - setting.m_bar)
    expected_shift = np.linalg.solve(h, rhs)
    assert np.allclose(new.mean - belief.mean, expected_shift, atol=1e-10)


def test_update_stable_under_diagonal_floor_choice():
    rng = np.random.default_rng(10)
    gs = single_qubit_xz_gate_set()
    belief = default_prior(gs)
    seq = (0, 1)
    setting = linearize(gs, seq)
    m = np.array([0.6, 0.4])
    means = []
    for floor in (1e-12, 1e-9):
        stats = analytic_noise_stats(m, 125, belief.mean.shape[0])
        stats = NoiseStats(
            eta_bar=stats.eta_bar,
            gamma_eta=stats.gamma_eta,
            gamma_eta_x=stats.gamma_eta_x,
            gamma_eps=shot_noise_covariance(m, 125, diagonal_floor=floor),
            sample_count=0,
        )
        new, _ = posterior_update(belief, setting, m, stats)
        means.append(new.mean)
    assert np.max(np.abs(means[0] - means[1])) <= 1e-6


def test_dominance_check():
    m_dim, p_dim = 4, 6
    zero_eta = NoiseStats(
        eta_bar=np.zeros(m_dim),
        gamma_eta=np.zeros((m_dim, m_dim)),
        gamma_eta_x=np.zeros((m_dim, p_dim)),
        gamma_eps=np.zeros((m_dim, m_dim)),
        sample_count=0,
    )
    assert dominance_check(zero_eta)
    marginal = NoiseStats(
        eta_bar=np.full(m_dim, 0.05),  # ||eta||^2 = 0.01
        gamma_eta=np.diag([0.001, 0, 0, 0]),
        gamma_eta_x=np.zeros((m_dim, p_dim)),
        gamma_eps=np.diag([0.25, 0.25, 0.25, 0.25]),
        sample_count=10,
    )
    assert np.trace(marginal.gamma_eps) == pytest.approx(1.0)
    assert marginal.approx_error_magnitude == pytest.approx(0.011)
    assert not dominance_check(marginal, threshold_ratio=100.0)
    assert dominance_check(marginal, threshold_ratio=90.0)


def test_run_online_empty_stream():
    gs = single_qubit_xz_gate_set()
    belief = default_prior(gs)
    result = run_online(belief, [], gs, rng=0)
    assert result.belief is belief
    assert result.diagnostics == []


def test_run_online_recovers_identity_truth():
    gs = single_qubit_xz_gate_set(fit_meas_noise=False)
    device = TrueDevice(truth=gs, seed=21, default_shots=1_000_000)
    seqs = generate_tomography_settings(500, 4, gs.n_gates, rng=22)
    records = [device.measure(s, exact=True) for s in seqs]
    belief = default_prior(gs)
    result = run_online(belief, records, gs, n_samples=60, rng=23)
    lam_true = pack(gs)
    assert np.max(np.abs(result.belief.mean - lam_true)) < 1e-3
    # mean square error decays at roughly the central-limit rate
    traces = np.array([d.trace_post for d in result.diagnostics])
    steps = np.arange(1, len(traces) + 1)
    sel = steps >= len(traces) // 10
    slope = np.polyfit(np.log(steps[sel]), np.log(traces[sel]), 1)[0]
    assert -1.3 <= slope <= -0.7


def test_run_online_orderings_agree_within_posterior_spread():
    gs = single_qubit_xz_gate_set(fit_meas_noise=False)
    truth = gs.with_noise(
        {
            "X90": make_noise_model(
                {
                    "kind": "composite",
                    "terms": [
                        {"kind": "coherent", "pauli": "X", "theta": 0.05},
                        {"kind": "depolarizing", "p": 0.01},
                    ],
                },
                1,
            ),
            "Z90": make_noise_model({"kind": "depolarizing", "p": 0.002}, 1),
        }
    )
    device = TrueDevice(truth=truth, seed=31, default_shots=1_000_000)
    seqs = generate_tomography_settings(1000, 3, gs.n_gates, rng=32)
    records = [device.measure(s, exact=True) for s in seqs]
    belief = default_prior(gs)
    res_a = run_online(belief, records, gs, n_samples=50, rng=33)
    rng = np.random.default_rng(34)
    order = rng.permutation(len(records))
    res_b = run_online(belief, [records[i] for i in order], gs, n_samples=50, rng=35)
    sigma = np.sqrt(np.diag(res_a.belief.cov))
    assert np.all(np.abs(res_a.belief.mean - res_b.belief.mean) <= 5 * sigma + 1e-12)



def test_run_online_rejects_malformed_record():
    gs = single_qubit_xz_gate_set()
    belief = default_prior(gs)
    bad = ExperimentRecord(sequence=(0,), shots=10, counts=np.array([7, 3]))
    object.__setattr__(bad, "counts", np.array([7, 4]))  # corrupt after checks
    with pytest.raises(DataError, match="record 1"):
        run_online(belief, [ExperimentRecord((0,), 10, np.array([5, 5])), bad], gs, rng=0)


def test_run_online_dominance_latches_and_fast_path_skips_sampling():
    gs = single_qubit_xz_gate_set(fit_meas_noise=False)
    device = TrueDevice(truth=gs, seed=41, default_shots=125)
    seqs = generate_tomography_settings(60, 3, gs.n_gates, rng=42)
    records = [device.measure(s) for s in seqs]
    # tight prior: approximation error is negligible from the start
    belief = default_prior(gs, sigma_pulsed=1e-4, sigma_virtual=1e-4)
    result = run_online(belief, records, gs, n_samples=30, rng=43, window=10)
    assert result.dominance_step is not None
    after = [d for d in result.diagnostics if d.step > result.dominance_step]
    assert after and all(d.dominance_active for d in after)
    assert all(d.approx_error == 0.0 for d in after)
