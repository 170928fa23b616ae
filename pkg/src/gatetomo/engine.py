"""Online Gaussian recursion over gate-set noise parameters.

The belief over the packed noise vector is a multivariate Gaussian that is
updated in closed form after every measurement setting.  Each update sees two
noise processes: multinomial shot noise and the approximation error of the
linearized forward model.  While the approximation error matters it is
estimated by sampling the prior through the exact model; once shot noise
dominates it (moving-average ratio test) the sampling is skipped and the
update runs on the fast path.

Update equations, with prior x ~ N(0, G), design A, conditional noise
e|x ~ N(eta_bar + K x, Ge) and observation y = m - m_bar - eta_bar:

    mean shift  = G Aeff^T (Ge + Aeff G Aeff^T)^-1 y,   Aeff = A + K
    covariance  = G - G A^T (Ge + A G A^T)^-1 A G

The covariance recursion deliberately uses the plain design matrix A; both
forms are evaluated through M x M solves only (M = number of outcomes), so a
full update costs O(P^2 M) on top of the sampling work.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DataError, NumericalError
from .forward import LinearizedSetting, exact_forward_batch, linearize
from .gates import GateSet, ParameterPacking, pack, unpack

DEFAULT_N_SAMPLES = 100
DEFAULT_DOMINANCE_RATIO = 100.0
DEFAULT_WINDOW = 100


@dataclass
class GaussianBelief:
    """Gaussian state of knowledge over the packed noise parameters."""

    mean: np.ndarray  # (P,)
    cov: np.ndarray  # (P, P) symmetric PSD
    packing: ParameterPacking | None = None  # None for unstructured beliefs

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        p = self.mean.shape[0]
        if self.cov.shape != (p, p):
            raise ValueError("covariance shape does not match mean")
        if self.packing is not None and p != self.packing.total:
            raise ValueError("belief size does not match packing")
        asym = np.max(np.abs(self.cov - self.cov.T)) if p else 0.0
        if asym > 1e-10:
            raise ValueError(f"covariance is not symmetric (max asymmetry {asym:.2e})")

    def validate_psd(self, tol: float = 1e-9) -> float:
        """Smallest covariance eigenvalue; raises beyond -tol.  O(P^3)."""
        smallest = float(np.linalg.eigvalsh(self.cov)[0])
        if smallest < -tol:
            raise NumericalError(f"belief covariance eigenvalue {smallest:.2e}")
        return smallest

    def gate_set(self, template: GateSet) -> GateSet:
        return unpack(self.mean, template)


def default_prior(
    gateset: GateSet,
    sigma_pulsed: float = 0.05,
    sigma_virtual: float = 0.005,
    sigma_meas: float = 0.05,
    sigma_prep: float = 0.05,
) -> GaussianBelief:
    """Identity-mean prior with per-channel isotropic spread.

    Virtual gates get the tighter `sigma_virtual`; SPAM channels use their own
    widths.  The mean is the gate set's current noise (identity by default).
    """
    packing = gateset.packing()
    variances = np.empty(packing.total)
    virtual_names = {g.name for g in gateset.gates if g.virtual}
    for name in packing.names:
        if name == "meas":
            sigma = sigma_meas
        elif name == "prep":
            sigma = sigma_prep
        elif name in virtual_names:
            sigma = sigma_virtual
        else:
            sigma = sigma_pulsed
        variances[packing.slices[name]] = sigma**2
    return GaussianBelief(mean=pack(gateset), cov=np.diag(variances), packing=packing)


@dataclass(frozen=True)
class NoiseStats:
    """Per-setting noise statistics entering one update."""

    eta_bar: np.ndarray  # (M,) mean approximation error
    gamma_eta: np.ndarray  # (M, M)
    gamma_eta_x: np.ndarray  # (M, P); zero when sampling is disabled
    gamma_eps: np.ndarray  # (M, M) shot-noise covariance
    sample_count: int

    @property
    def approx_error_magnitude(self) -> float:
        return float(np.trace(self.gamma_eta) + self.eta_bar @ self.eta_bar)

    def zero_mean_form(self) -> "NoiseStats":
        """Fold the mean approximation error into the covariance.

        Treating the approximation error as zero-mean noise with its full
        second moment avoids the systematic mean drift that the subtracted
        eta_bar causes when the true parameters sit near the prior mean:
        for a quadratic model error over P parameters the bias exceeds its
        own standard deviation by roughly sqrt(P/2), so subtracting it is
        only safe on average over the prior, not pointwise.  The dominance
        magnitude tr(gamma_eta) + |eta_bar|^2 is unchanged by this form.
        """
        if not np.any(self.eta_bar):
            return self
        return NoiseStats(
            eta_bar=np.zeros_like(self.eta_bar),
            gamma_eta=self.gamma_eta + np.outer(self.eta_bar, self.eta_bar),
            gamma_eta_x=self.gamma_eta_x,
            gamma_eps=self.gamma_eps,
            sample_count=self.sample_count,
        )


def analytic_noise_stats(m: np.ndarray, shots: int, n_params: int) -> NoiseStats:
    """Fast-path statistics: shot noise only, no approximation error."""
    m = np.asarray(m, dtype=float)
    n_out = m.shape[0]
    return NoiseStats(
        eta_bar=np.zeros(n_out),
        gamma_eta=np.zeros((n_out, n_out)),
        gamma_eta_x=np.zeros((n_out, n_params)),
        gamma_eps=shot_noise_covariance(m, shots),
        sample_count=0,
    )


@dataclass
class UpdateDiagnostics:
    """One line of the per-setting diagnostics stream."""

    step: int
    trace_post: float
    trace_eps: float
    approx_error: float
    dominance_active: bool
    wall_time: float

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "trace_post": self.trace_post,
            "trace_eps": self.trace_eps,
            "approx_err": self.approx_error,
            "dominance": self.dominance_active,
            "wall_time": self.wall_time,
        }


def shot_noise_covariance(
    m: np.ndarray,
    shots: int,
    diagonal_floor: float = 1e-10,
    regularize: bool = True,
) -> np.ndarray:
    """Covariance of the empirical frequency vector of a multinomial.

    Uses the frequency convention diag p(1-p)/N with off-diagonals -p_i p_j / N
    (the count covariance scaled by 1/N^2).  Regularization floors each
    diagonal at max(p(1-p), 1/N)/N and adds `diagonal_floor` to keep the
    matrix invertible when outcomes are deterministic or degenerate.
    """
    m = np.asarray(m, dtype=float)
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if m.min() < -1e-12 or m.sum() > 1 + 1e-9:
        raise ValueError("frequencies must be non-negative and sum to <= 1")
    p = np.clip(m, 0.0, 1.0)
    cov = (np.diag(p) - np.outer(p, p)) / shots
    if regularize:
        floor = np.maximum(p * (1.0 - p), 1.0 / shots) / shots
        np.fill_diagonal(cov, np.maximum(np.diag(cov), floor))
        cov = cov + diagonal_floor * np.eye(p.shape[0])
    return cov


def _psd_factor(mat: np.ndarray) -> np.ndarray:
    """Lower-triangular-ish factor L with L L^T = mat (+ tiny jitter).

    Tries Cholesky, escalates a trace-scaled jitter, then falls back to an
    eigenvalue-clipped square root (handles the exactly singular case).
    """
    mat = np.asarray(mat, dtype=float)
    p = mat.shape[0]
    if not np.any(mat):
        return np.zeros_like(mat)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    base = 1e-10 * np.trace(mat) / max(p, 1)
    jitter = base
    for _ in range(3):
        if jitter > 0:
            try:
                return np.linalg.cholesky(mat + jitter * np.eye(p))
            except np.linalg.LinAlgError:
                pass
        jitter = max(jitter * 100, 1e-14)
    evals, evecs = np.linalg.eigh((mat + mat.T) / 2)
    if evals.min() < -1e-9 * max(evals.max(), 1.0):
        raise NumericalError(
            f"matrix is not PSD within tolerance (min eigenvalue {evals.min():.2e})"
        )
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def sample_noise_stats(
    belief: GaussianBelief,
    setting: LinearizedSetting,
    gateset: GateSet,
    shots: int,
    n_samples: int = DEFAULT_N_SAMPLES,
    rng: np.random.Generator | int | None = None,
    chol_factor: np.ndarray | None = None,
    cross_shrinkage: bool = True,
) -> NoiseStats:
    """Estimate the joint noise statistics by sampling the prior.

    Each prior draw is pushed through the exact forward model to produce an
    approximation-error sample and a multinomial shot-noise sample.  The
    empirical cross-covariance between the approximation error and the
    parameters is shrunk by n/(n + P): with n_samples << P the raw estimate
    is dominated by sampling noise whose conditional correction would exceed
    gamma_eta and break positive semi-definiteness.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    rng = np.random.default_rng(rng)
    factor = chol_factor if chol_factor is not None else _psd_factor(belief.cov)
    n_params = belief.mean.shape[0]
    x = rng.standard_normal((n_samples, n_params)) @ factor.T
    probs = exact_forward_batch(belief.mean + x, setting.sequence, gateset)
    eta = probs - (setting.m_bar + x @ setting.a_bar.T)

    pvals = np.clip(probs, 0.0, None)
    pvals = pvals / pvals.sum(axis=1, keepdims=True)
    pvals[:, -1] = np.clip(1.0 - pvals[:, :-1].sum(axis=1), 0.0, 1.0)
    counts = rng.multinomial(shots, pvals)
    eps = counts / shots - pvals

    eta_bar = eta.mean(axis=0)
    eta_c = eta - eta_bar
    eps_c = eps - eps.mean(axis=0)
    x_c = x - x.mean(axis=0)
    denom = n_samples - 1
    gamma_eta = eta_c.T @ eta_c / denom
    gamma_eps = eps_c.T @ eps_c / denom
    # same degenerate-outcome floor as the analytic covariance: without it a
    # deterministic setting yields an exactly singular empirical gamma_eps and
    # the update weights its residual infinitely
    p_bar = pvals.mean(axis=0)
    floor = np.maximum(p_bar * (1.0 - p_bar), 1.0 / shots) / shots
    np.fill_diagonal(gamma_eps, np.maximum(np.diag(gamma_eps), floor))
    gamma_eps = gamma_eps + 1e-10 * np.eye(p_bar.shape[0])
    gamma_eta_x = eta_c.T @ x_c / denom
    if cross_shrinkage:
        gamma_eta_x = gamma_eta_x * (n_samples / (n_samples + n_params))
    return NoiseStats(
        eta_bar=eta_bar,
        gamma_eta=gamma_eta,
        gamma_eta_x=gamma_eta_x,
        gamma_eps=gamma_eps,
        sample_count=n_samples,
    )


@dataclass(frozen=True)
class ConditionalNoise:
    """Affine description of e|x: mean eta_bar + gain @ x, covariance cov."""

    eta_bar: np.ndarray  # (M,)
    gain: np.ndarray  # (M, P)
    cov: np.ndarray  # (M, M)


def conditional_noise(
    stats: NoiseStats,
    belief: GaussianBelief,
    chol_x: np.ndarray | None = None,
) -> ConditionalNoise:
    """Condition the joint noise on the parameters via the Schur complement.

    With the shot noise independent of the parameters the cross block reduces
    to the approximation-error one.  Raises NumericalError if the conditional
    covariance dips below -1e-8 after symmetrization.
    """
    n_out = stats.gamma_eta.shape[0]
    if not np.any(stats.gamma_eta_x):
        gain = np.zeros_like(stats.gamma_eta_x)
        cov = stats.gamma_eta + stats.gamma_eps
    else:
        factor = chol_x if chol_x is not None else _psd_factor(belief.cov)
        z = sla.cho_solve((factor, True), stats.gamma_eta_x.T, check_finite=False)
        gain = z.T
        cov = stats.gamma_eta + stats.gamma_eps - stats.gamma_eta_x @ z
    cov = (cov + cov.T) / 2
    smallest = float(np.linalg.eigvalsh(cov)[0])
    if smallest < -1e-8:
        raise NumericalError(
            f"conditional noise covariance eigenvalue {smallest:.2e}"
        )
    if smallest < 0:
        evals, evecs = np.linalg.eigh(cov)
        cov = (evecs * np.clip(evals, 0.0, None)) @ evecs.T
    return ConditionalNoise(eta_bar=stats.eta_bar, gain=gain, cov=cov)


def _solve_spd(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    mat = (mat + mat.T) / 2
    try:
        return sla.solve(mat, rhs, assume_a="pos", check_finite=False)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * max(np.trace(mat), 1.0)
        return sla.solve(
            mat + jitter * np.eye(mat.shape[0]), rhs, assume_a="pos", check_finite=False
        )


def posterior_update(
    belief: GaussianBelief,
    setting: LinearizedSetting,
    m: np.ndarray,
    stats: NoiseStats,
    dominance_active: bool = False,
    chol_x: np.ndarray | None = None,
) -> tuple[GaussianBelief, UpdateDiagnostics]:
    """Closed-form Gaussian update for one measurement setting."""
    t0 = time.perf_counter()
    m = np.asarray(m, dtype=float)
    gamma = belief.cov
    a_bar = setting.a_bar
    cross = bool(np.any(stats.gamma_eta_x))

    if cross:
        cond = conditional_noise(stats, belief, chol_x=chol_x)
    else:
        cond = ConditionalNoise(
            eta_bar=stats.eta_bar,
            gain=np.zeros_like(stats.gamma_eta_x),
            cov=stats.gamma_eta + stats.gamma_eps,
        )

    y = m - setting.m_bar - stats.eta_bar
    ga = gamma @ a_bar.T  # (P, M)
    aga = a_bar @ ga  # (M, M)

    if cross:
        # manifestly PSD assembly: Ge|x + Aeff G Aeff^T with Aeff = A + gain
        a_eff = a_bar + cond.gain
        ga_eff = gamma @ a_eff.T
        s_mean = cond.cov + a_eff @ ga_eff
        g_eff = ga_eff
    else:
        s_mean = cond.cov + aga
        g_eff = ga
    x_post = g_eff @ _solve_spd(s_mean, y)

    s_cov = cond.cov + aga
    gain = _solve_spd(s_cov, ga.T)  # (M, P)
    cov_post = gamma - ga @ gain
    cov_post = (cov_post + cov_post.T) / 2

    trace_prior = float(np.trace(gamma))
    trace_post = float(np.trace(cov_post))
    if trace_post > trace_prior + 1e-9:
        raise NumericalError(
            f"posterior trace grew: {trace_post:.6e} > {trace_prior:.6e}"
        )
    new_belief = GaussianBelief(
        mean=belief.mean + x_post, cov=cov_post, packing=belief.packing
    )
    diag = UpdateDiagnostics(
        step=-1,
        trace_post=trace_post,
        trace_eps=float(np.trace(stats.gamma_eps)),
        approx_error=stats.approx_error_magnitude,
        dominance_active=dominance_active,
        wall_time=time.perf_counter() - t0,
    )
    return new_belief, diag


def dominance_check(stats: NoiseStats, threshold_ratio: float = DEFAULT_DOMINANCE_RATIO) -> bool:
    """True when shot noise exceeds the approximation error by the ratio."""
    return float(np.trace(stats.gamma_eps)) >= threshold_ratio * stats.approx_error_magnitude


@dataclass
class OnlineResult:
    belief: GaussianBelief
    diagnostics: list[UpdateDiagnostics] = field(default_factory=list)
    dominance_step: int | None = None


def run_online(
    belief: GaussianBelief,
    records,
    gateset: GateSet,
    n_samples: int = DEFAULT_N_SAMPLES,
    dominance_ratio: float | None = DEFAULT_DOMINANCE_RATIO,
    window: int = DEFAULT_WINDOW,
    sampling: bool = True,
    error_model: str = "zero_mean",
    rng: np.random.Generator | int | None = None,
    diagnostics_sink=None,
) -> OnlineResult:
    """Fold the records through linearize -> noise stats -> posterior update.

    The model is re-linearized at the updated mean before every setting.  The
    moving-average dominance test (window `window`) latches once the window
    is full: after that, updates skip the noise sampling entirely.  Passing
    `dominance_ratio=None` keeps sampling active for the whole stream;
    `sampling=False` disables it from the start.

    `error_model` selects how the sampled approximation-error mean enters the
    update: "zero_mean" (default) folds it into the noise covariance, see
    :meth:`NoiseStats.zero_mean_form`; "subtract_mean" keeps the literal
    conditional-mean subtraction.
    """
    if error_model not in ("zero_mean", "subtract_mean"):
        raise ValueError("error_model must be 'zero_mean' or 'subtract_mean'")
    rng = np.random.default_rng(rng)
    result = OnlineResult(belief=belief)
    eps_window: deque[float] = deque(maxlen=window)
    approx_window: deque[float] = deque(maxlen=window)
    dominant = not sampling

    for step, record in enumerate(records):
        t0 = time.perf_counter()
        counts = np.asarray(record.counts, dtype=float)
        if counts.shape[0] != gateset.n_outcomes:
            raise DataError(f"record {step}: expected {gateset.n_outcomes} counts")
        if counts.min() < 0 or int(counts.sum()) != int(record.shots):
            raise DataError(f"record {step}: counts must be non-negative and sum to shots")
        try:
            mean_gs = unpack(belief.mean, gateset)
            setting = linearize(mean_gs, record.sequence)
        except ValueError as exc:
            raise DataError(f"record {step}: {exc}") from exc
        m = counts / record.shots

        if dominant:
            stats = analytic_noise_stats(m, record.shots, belief.mean.shape[0])
            chol = None
        else:
            chol = _psd_factor(belief.cov)
            stats = sample_noise_stats(
                belief,
                setting,
                gateset,
                shots=record.shots,
                n_samples=n_samples,
                rng=rng,
                chol_factor=chol,
            )
        update_stats = stats.zero_mean_form() if error_model == "zero_mean" else stats
        belief, diag = posterior_update(
            belief, setting, m, update_stats, dominance_active=dominant, chol_x=chol
        )
        diag.step = step
        diag.wall_time = time.perf_counter() - t0

        if not dominant and dominance_ratio is not None:
            eps_window.append(diag.trace_eps)
            approx_window.append(stats.approx_error_magnitude)
            if len(eps_window) >= window and float(np.mean(eps_window)) >= dominance_ratio * float(
                np.mean(approx_window)
            ):
                dominant = True
                result.dominance_step = step
        result.diagnostics.append(diag)
        if diagnostics_sink is not None:
            diagnostics_sink(diag)

    result.belief = belief
    return result
