"""L1-regularized EM for the univariate-response model with diagonal
gating covariances.

The E-step is the same posterior-responsibility computation as the plain
EM.  The M-step keeps the closed-form mixing-weight update and replaces
the mean/coefficient updates with cyclic coordinate ascent on the
penalized Q-functions, each coordinate having a closed soft-threshold
form.  Thresholds use the lagged variances (previous EM iteration), and
the expert intercept stays lagged inside the coordinate loop; both are
refreshed once per EM iteration afterwards.  Coefficients zeroed by
soft-thresholding are stored as exact ``0.0`` so that downstream
degrees-of-freedom and zero-recovery computations can test equality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .em import (
    DEGENERACY_FRACTION,
    FitOptions,
    FitResult,
    _check_component_masses,
    _relative_change,
    init_params,
    start_seeds,
)
from .model import (
    VARIANCE_FLOOR,
    DataSet,
    DegenerateComponentError,
    ExpertComponent,
    FitFailedError,
    GatingComponent,
    MoggeParams,
    NotPositiveDefiniteError,
    Responsibilities,
    UnsupportedConfigError,
    penalized_loglik,
    posterior_responsibilities,
)


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty weights and coordinate-ascent stopping rule.

    ``lam`` scales the L1 penalty on expert coefficient vectors, ``gamma``
    the one on gating mean vectors.
    """

    lam: float
    gamma: float
    ca_max_iter: int = 100
    ca_tol: float = 1e-7

    def __post_init__(self):
        if self.lam < 0.0 or self.gamma < 0.0:
            raise ValueError("penalty weights must be nonnegative")
        if self.ca_max_iter < 1:
            raise ValueError("ca_max_iter must be at least 1")
        if not self.ca_tol > 0.0:
            raise ValueError("ca_tol must be positive")


def soft_threshold(u, eta):
    """Soft-thresholding ``sign(u) * max(|u| - eta, 0)``.

    Scalar in, float out; array in, array out.  Zeroed values compare
    equal to ``0.0`` (negative zero is normalized away).
    """
    if eta < 0.0:
        raise ValueError("threshold must be nonnegative")
    u = np.asarray(u, dtype=float)
    out = np.sign(u) * np.maximum(np.abs(u) - eta, 0.0) + 0.0
    if out.ndim == 0:
        return float(out)
    return out


def ca_update_gating_means(data: DataSet, tau: Responsibilities,
                           gating_prev: tuple[GatingComponent, ...],
                           gamma: float, ca_max_iter: int = 100,
                           ca_tol: float = 1e-7) -> list[np.ndarray]:
    """Coordinate-ascent update of all gating mean vectors.

    Each coordinate has the closed form
    ``S(X_j' tau_k; gamma * nu2_kj) / sum(tau_k)`` with the lagged
    variances ``nu2_kj``.  With diagonal covariances the coordinates are
    decoupled, so the first sweep already lands on the fixed point; the
    cyclic loop is kept and terminates on the penalized Q-function change.
    """
    if gating_prev[0].R.ndim != 1:
        raise UnsupportedConfigError("gating means update requires diagonal covariances")
    T = tau.tau
    nk = T.sum(axis=0)
    _check_component_masses(nk, data.n)
    out = []
    for k, g in enumerate(gating_prev):
        w = T[:, k]
        s = nk[k]
        nu2 = g.R
        colsum = data.X.T @ w
        mu = g.mu.copy()

        def q_value(m):
            quad = float(np.sum(w @ ((data.X - m) ** 2 / nu2)))
            return -0.5 * quad - gamma * float(np.sum(np.abs(m)))

        q_prev = q_value(mu)
        for _ in range(ca_max_iter):
            for j in range(data.p):
                mu[j] = soft_threshold(colsum[j], gamma * nu2[j]) / s
            q_new = q_value(mu)
            if abs(q_new - q_prev) < ca_tol:
                break
            q_prev = q_new
        out.append(mu)
    return out


def update_gating_variances(data: DataSet, tau: Responsibilities,
                            mu_new: list[np.ndarray]) -> list[np.ndarray]:
    """Weighted per-coordinate variances around the new means, floored."""
    T = tau.tau
    nk = T.sum(axis=0)
    _check_component_masses(nk, data.n)
    out = []
    for k in range(tau.K):
        diff = data.X - mu_new[k]
        nu2 = T[:, k] @ (diff * diff) / nk[k]
        out.append(np.maximum(nu2, VARIANCE_FLOOR))
    return out


def _check_mass_single(tau_k: np.ndarray, n: int, component: int) -> None:
    mass = float(np.sum(tau_k))
    if mass <= DEGENERACY_FRACTION * n:
        raise DegenerateComponentError(
            component,
            f"component {component} is degenerate: responsibility mass "
            f"{mass:.3e} of n={n}",
        )


def ca_update_expert_coeffs(data: DataSet, tau_k: np.ndarray,
                            expert_prev: ExpertComponent, lam: float,
                            ca_max_iter: int = 100, ca_tol: float = 1e-7,
                            component: int = 1) -> np.ndarray:
    """Coordinate-ascent solve of one expert's weighted lasso problem.

    Cycles ``beta_kj <- S(X_j' W r_kj; lam * sigma2) / (X_j' W X_j)`` with
    the partial residual ``r_kj`` excluding coordinate j; the intercept and
    variance stay at their lagged values throughout the loop.  Coordinates
    whose weighted column norm vanishes are forced to 0.
    """
    if data.d != 1 or expert_prev.d != 1:
        raise UnsupportedConfigError("expert coefficient update requires d = 1")
    _check_mass_single(tau_k, data.n, component)
    w = np.asarray(tau_k, dtype=float)
    y = data.y1
    X = data.X
    b0 = float(expert_prev.intercept[0])
    sigma2 = expert_prev.variance
    eta = lam * sigma2
    beta = expert_prev.beta.copy()
    wXsq = w @ (X * X)

    def q_value(r):
        return -0.5 * float(w @ (r * r)) / sigma2 - lam * float(np.sum(np.abs(beta)))

    r = y - b0 - X @ beta
    q_prev = q_value(r)
    for _ in range(ca_max_iter):
        r = y - b0 - X @ beta
        for j in range(data.p):
            if wXsq[j] <= 0.0:
                # weighted column is identically zero, so is the numerator
                r += beta[j] * X[:, j]
                beta[j] = 0.0
                continue
            num = X[:, j] @ (w * r) + beta[j] * wXsq[j]
            new_bj = soft_threshold(num, eta) / wXsq[j]
            r += (beta[j] - new_bj) * X[:, j]
            beta[j] = new_bj
        q_new = q_value(r)
        if abs(q_new - q_prev) < ca_tol:
            break
        q_prev = q_new
    return beta


def update_expert_intercept_variance(data: DataSet, tau_k: np.ndarray,
                                     beta_new: np.ndarray,
                                     component: int = 1) -> tuple[float, float]:
    """Standard weighted intercept and (floored) variance updates given the
    freshly updated coefficient vector."""
    if data.d != 1:
        raise UnsupportedConfigError("intercept/variance update requires d = 1")
    _check_mass_single(tau_k, data.n, component)
    w = np.asarray(tau_k, dtype=float)
    s = float(np.sum(w))
    resid = data.y1 - data.X @ beta_new
    b0 = float(w @ resid) / s
    sigma2 = float(w @ (resid - b0) ** 2) / s
    return b0, max(sigma2, VARIANCE_FLOOR)


def _em_lasso_single(data: DataSet, params: MoggeParams,
                     penalty: PenaltyConfig, opts: FitOptions) -> FitResult:
    lam, gamma = penalty.lam, penalty.gamma
    trace = [penalized_loglik(data, params, lam, gamma)]
    converged = False
    for _ in range(opts.max_iter):
        tau = posterior_responsibilities(data, params)
        T = tau.tau
        nk = T.sum(axis=0)
        _check_component_masses(nk, data.n)
        alphas = nk / nk.sum()
        mus = ca_update_gating_means(
            data, tau, params.gating, gamma,
            ca_max_iter=penalty.ca_max_iter, ca_tol=penalty.ca_tol,
        )
        nus = update_gating_variances(data, tau, mus)
        gating = tuple(
            GatingComponent(alpha=float(alphas[k]), mu=mus[k], R=nus[k])
            for k in range(params.K)
        )
        experts = []
        for k in range(params.K):
            beta = ca_update_expert_coeffs(
                data, T[:, k], params.experts[k], lam,
                ca_max_iter=penalty.ca_max_iter, ca_tol=penalty.ca_tol,
                component=k + 1,
            )
            b0, s2 = update_expert_intercept_variance(
                data, T[:, k], beta, component=k + 1
            )
            experts.append(
                ExpertComponent(intercept=[b0], coeffs=beta[:, None], cov=[[s2]])
            )
        params = MoggeParams(gating=gating, experts=tuple(experts))
        trace.append(penalized_loglik(data, params, lam, gamma))
        if _relative_change(trace[-1], trace[-2]) < opts.tol:
            converged = True
            break
    return FitResult(
        params=params,
        loglik_trace=np.array(trace),
        responsibilities=posterior_responsibilities(data, params),
        n_iter=len(trace) - 1,
        converged=converged,
        objective=trace[-1],
    )


def fit_em_lasso(data: DataSet, K: int, penalty: PenaltyConfig,
                 opts: FitOptions | None = None,
                 warm_start: MoggeParams | None = None) -> FitResult:
    """Fit the penalized model by EM with coordinate-ascent M-steps.

    Multi-start like :func:`mogge.em.fit_em` (identically seeded starts,
    diagonal gating layout), unless ``warm_start`` parameters are given, in
    which case a single run starts from them.  The objective and the trace
    are the penalized joint log-likelihood.
    """
    if data.d != 1:
        raise UnsupportedConfigError("penalized fitting requires d = 1")
    opts = opts or FitOptions()
    if warm_start is not None:
        if not warm_start.has_diagonal_gating:
            raise UnsupportedConfigError(
                "warm start must use diagonal gating covariances"
            )
        if warm_start.K != K or warm_start.p != data.p or warm_start.d != 1:
            raise ValueError("warm start dimensions do not match the request")
        starts = [warm_start]
    else:
        starts = None

    best: FitResult | None = None
    diagnoses: list[str] = []
    if starts is not None:
        seeds = [None] * len(starts)
    else:
        seeds = start_seeds(opts.seed, opts.n_starts)
    for s, seed in enumerate(seeds):
        try:
            if starts is not None:
                params0 = starts[s]
            else:
                params0 = init_params(
                    data, K, strategy=opts.init_strategy, seed=seed,
                    diagonal_gating=True,
                )
            result = _em_lasso_single(data, params0, penalty, opts)
        except (DegenerateComponentError, NotPositiveDefiniteError,
                FitFailedError, np.linalg.LinAlgError) as exc:
            diagnoses.append(f"start {s}: {type(exc).__name__}: {exc}")
            continue
        if best is None or result.objective > best.objective:
            best = result
    if best is None:
        raise FitFailedError(
            f"all {len(seeds)} starts failed", diagnoses=diagnoses
        )
    return best
