"""
Univariate empirical Bayes model for one year's crude effects.

Crude effects are treated as theta_hat_i ~ N(theta_i, s2_i) with the true
effects drawn from N(mu, tau2), or N(V_i' gamma, tau2) when centre-level
covariates are supplied. The mixing distribution is fitted by EM on the
marginal likelihood and plugged into the normal posterior.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.stats import chi2, norm

from app.config import get_settings
from app.core.exceptions import InputValidationError
from app.schemas.prior import (
    CovariatePrior,
    PosteriorSummary,
    PriorEstimate,
    PriorMethod,
    SensitivityRow,
)
from app.schemas.stage1 import CrudeEffect
from estimation.ranking import expected_percentiles, rankability
from estimation.stage1 import check_full_rank

settings = get_settings()
logger = logging.getLogger("estimation")

INTERCEPT = "intercept"


def _arrays(crudes: Sequence[CrudeEffect]) -> Tuple[List[str], np.ndarray, np.ndarray]:
    if len(crudes) < 2:
        raise InputValidationError(f"At least 2 centres are required, got {len(crudes)}")
    ids = [c.centre_id for c in crudes]
    if len(set(ids)) != len(ids):
        duplicate = next(i for i in ids if ids.count(i) > 1)
        raise InputValidationError(f"Centre {duplicate} appears more than once in one year")
    theta = np.array([c.theta_hat for c in crudes], dtype=float)
    s2 = np.array([c.s2 for c in crudes], dtype=float)
    if not (np.isfinite(theta).all() and np.isfinite(s2).all() and (s2 > 0).all()):
        raise InputValidationError("Crude effects and variances must be finite with s2 > 0")
    return ids, theta, s2


def marginal_loglik(theta: np.ndarray, s2: np.ndarray, mean, tau2: float) -> float:
    """sum log N(theta_hat_i; mean_i, s2_i + tau2)."""
    var = s2 + tau2
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * var) + (theta - mean) ** 2 / var))


def _wls(V: np.ndarray, theta: np.ndarray, weights: np.ndarray) -> np.ndarray:
    root = np.sqrt(weights)
    gamma, *_ = np.linalg.lstsq(V * root[:, None], theta * root, rcond=None)
    return gamma


def _moment_tau2(theta: np.ndarray, s2: np.ndarray, V: np.ndarray) -> float:
    """DerSimonian-Laird estimate generalized to a regression mean, truncated at 0."""
    w = 1.0 / s2
    gamma = _wls(V, theta, w)
    q = float(np.sum(w * (theta - V @ gamma) ** 2))
    k, p = V.shape
    xtwx = (V * w[:, None]).T @ V
    xtw2x = (V * (w**2)[:, None]).T @ V
    denom = float(np.sum(w) - np.trace(np.linalg.solve(xtwx, xtw2x)))
    if denom <= 0:
        return 0.0
    return max(0.0, (q - (k - p)) / denom)


def _boundary_score(theta: np.ndarray, s2: np.ndarray, V: np.ndarray) -> Tuple[float, np.ndarray]:
    """d loglik / d tau2 at tau2 = 0 with the mean profiled out."""
    gamma = _wls(V, theta, 1.0 / s2)
    resid = theta - V @ gamma
    return float(0.5 * np.sum(resid**2 / s2**2 - 1.0 / s2)), gamma


def _em(
    theta: np.ndarray,
    s2: np.ndarray,
    V: np.ndarray,
    tol: float,
    max_iter: int,
) -> dict:
    """
    EM for (gamma, tau2) treating the true effects as missing data.

    A non-positive boundary score means the likelihood is maximized at
    tau2 = 0, where EM is stationary; that case is returned directly.
    """
    score, gamma = _boundary_score(theta, s2, V)
    if score <= 0.0:
        ll = marginal_loglik(theta, s2, V @ gamma, 0.0)
        return dict(gamma=gamma, tau2=0.0, ll=ll, iterations=0, converged=True,
                    at_boundary=True, trace=[ll])

    tau2 = max(_moment_tau2(theta, s2, V), settings.EM_INIT_FLOOR * float(np.median(s2)))
    trace: List[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mean = V @ gamma
        ll = marginal_loglik(theta, s2, mean, tau2)
        trace.append(ll)
        if len(trace) > 1 and ll - trace[-2] < tol:
            converged = True
            break
        shrink = tau2 / (tau2 + s2)
        m = mean + shrink * (theta - mean)
        v = shrink * s2
        gamma, *_ = np.linalg.lstsq(V, m, rcond=None)
        tau2 = float(np.mean((m - V @ gamma) ** 2 + v))

    if not converged:
        logger.warning(f"EM stopped after {max_iter} iterations without meeting tolerance {tol}")
        trace.append(marginal_loglik(theta, s2, V @ gamma, tau2))
    return dict(gamma=gamma, tau2=tau2, ll=trace[-1], iterations=iterations,
                converged=converged, at_boundary=False, trace=trace)


def fit_prior_mle(
    crudes: Sequence[CrudeEffect],
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> PriorEstimate:
    """
    Maximum likelihood (mu, tau2) of the normal mixing distribution by EM.

    Raises:
        InputValidationError: fewer than 2 centres or non-finite input
    """
    _, theta, s2 = _arrays(crudes)
    fit = _em(
        theta,
        s2,
        np.ones((theta.size, 1)),
        settings.EM_TOL if tol is None else tol,
        max_iter or settings.EM_MAX_ITER,
    )
    if fit["at_boundary"]:
        logger.warning("tau2 estimate is at the boundary 0; all centres shrink to the mean")
    return PriorEstimate(
        mu=float(fit["gamma"][0]),
        tau2=fit["tau2"],
        method=PriorMethod.MLE_EM,
        log_likelihood=fit["ll"],
        iterations=fit["iterations"],
        at_boundary=fit["at_boundary"],
        converged=fit["converged"],
        loglik_trace=fit["trace"],
    )


def fit_prior_moment(crudes: Sequence[CrudeEffect]) -> PriorEstimate:
    """DerSimonian-Laird moment estimate of (mu, tau2)."""
    _, theta, s2 = _arrays(crudes)
    tau2 = _moment_tau2(theta, s2, np.ones((theta.size, 1)))
    w = 1.0 / (s2 + tau2)
    mu = float(np.sum(w * theta) / np.sum(w))
    return PriorEstimate(
        mu=mu,
        tau2=tau2,
        method=PriorMethod.MOMENT,
        log_likelihood=marginal_loglik(theta, s2, mu, tau2),
        at_boundary=tau2 == 0.0,
    )


def fit_prior(crudes: Sequence[CrudeEffect], method: PriorMethod = PriorMethod.MLE_EM) -> PriorEstimate:
    if method == PriorMethod.MOMENT:
        return fit_prior_moment(crudes)
    return fit_prior_mle(crudes)


def _posterior(centre_id: str, theta_hat: float, s2: float, mean: float, tau2: float) -> PosteriorSummary:
    shrinkage = tau2 / (tau2 + s2)
    return PosteriorSummary(
        centre_id=centre_id,
        ebe=mean + shrinkage * (theta_hat - mean),
        pv=shrinkage * s2,
        shrinkage=shrinkage,
    )


def posterior(crude: CrudeEffect, prior: PriorEstimate) -> PosteriorSummary:
    """EBE = mu + tau2 / (tau2 + s2) (theta_hat - mu), pv = tau2 s2 / (tau2 + s2)."""
    return _posterior(crude.centre_id, crude.theta_hat, crude.s2, prior.mu, prior.tau2)


def posteriors(crudes: Sequence[CrudeEffect], prior: PriorEstimate) -> List[PosteriorSummary]:
    return [posterior(c, prior) for c in crudes]


def posterior_interval(post: PosteriorSummary, level: Optional[float] = None) -> Tuple[float, float]:
    """ebe +/- z sqrt(pv)."""
    return posterior_interval_from(post.ebe, post.pv, level)


def posterior_interval_from(mean: float, variance: float, level: Optional[float] = None) -> Tuple[float, float]:
    level = settings.CONFIDENCE_LEVEL if level is None else level
    half = norm.ppf((1.0 + level) / 2.0) * np.sqrt(variance)
    return float(mean - half), float(mean + half)


def proportion_true_variation(prior: PriorEstimate, crudes: Sequence[CrudeEffect]) -> float:
    """rho = tau2 / (tau2 + median s2); even counts average the two central values."""
    median_s2 = float(np.median([c.s2 for c in crudes]))
    return prior.tau2 / (prior.tau2 + median_s2)


def fit_prior_with_covariates(
    crudes: Sequence[CrudeEffect],
    covariates: pd.DataFrame,
    level: Optional[float] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> CovariatePrior:
    """
    Fit theta_i ~ N(gamma_0 + sum_l V_il gamma_l, tau2) by EM.

    Args:
        crudes: One year's crude effects
        covariates: Centre-level covariates indexed by centre_id; an
            intercept is added
        level: Level of the per-centre tolerance intervals

    Raises:
        InputValidationError: a centre has no covariate row
        RankDeficientError: covariates are collinear with the intercept
    """
    ids, theta, s2 = _arrays(crudes)
    level = settings.CONFIDENCE_LEVEL if level is None else level

    frame = covariates.copy()
    frame.index = frame.index.astype(str)
    missing = [i for i in ids if i not in frame.index]
    if missing:
        raise InputValidationError(f"No centre-level covariates for centre {missing[0]}")
    names = [INTERCEPT, *[str(c) for c in frame.columns]]
    V = np.column_stack([np.ones(len(ids)), frame.loc[ids].to_numpy(dtype=float)])
    if not np.isfinite(V).all():
        raise InputValidationError("Centre-level covariates must be finite")
    check_full_rank(V, names)

    fit = _em(
        theta,
        s2,
        V,
        settings.EM_TOL if tol is None else tol,
        max_iter or settings.EM_MAX_ITER,
    )
    means = V @ fit["gamma"]
    posts = [_posterior(ids[i], theta[i], s2[i], float(means[i]), fit["tau2"]) for i in range(len(ids))]
    return CovariatePrior(
        gamma=fit["gamma"].tolist(),
        tau2=fit["tau2"],
        covariate_names=names,
        log_likelihood=fit["ll"],
        iterations=fit["iterations"],
        at_boundary=fit["at_boundary"],
        centre_ids=ids,
        fitted_means=means.tolist(),
        posteriors=posts,
        tolerance_intervals=[posterior_interval(p, level) for p in posts],
        loglik_trace=fit["trace"],
    )


def profile_loglik(crudes: Sequence[CrudeEffect], tau2: float) -> Tuple[float, float]:
    """Log-likelihood at fixed tau2 with mu profiled out; returns (loglik, mu)."""
    _, theta, s2 = _arrays(crudes)
    return _profile(theta, s2, tau2)


def _profile(theta: np.ndarray, s2: np.ndarray, tau2: float) -> Tuple[float, float]:
    w = 1.0 / (s2 + tau2)
    mu = float(np.sum(w * theta) / np.sum(w))
    return marginal_loglik(theta, s2, mu, tau2), mu


def tau2_profile_ci(
    crudes: Sequence[CrudeEffect], level: Optional[float] = None
) -> Tuple[float, float]:
    """
    Profile-likelihood interval for tau2.

    All tau2 with 2 (l_max - l_profile(tau2)) <= chi2_1(level); the lower
    end is 0 when the boundary lies inside.
    """
    level = settings.CONFIDENCE_LEVEL if level is None else level
    _, theta, s2 = _arrays(crudes)
    prior = fit_prior_mle(crudes)
    l_max = max(prior.log_likelihood, _profile(theta, s2, prior.tau2)[0])
    target = l_max - chi2.ppf(level, df=1) / 2.0

    def excess(tau2: float) -> float:
        return _profile(theta, s2, tau2)[0] - target

    if excess(0.0) >= 0.0:
        lower = 0.0
    else:
        lower = brentq(excess, 0.0, prior.tau2, xtol=1e-12)

    step = max(prior.tau2, float(np.median(s2)))
    upper = prior.tau2 + step
    for _ in range(200):
        if excess(upper) < 0.0:
            break
        step *= 2.0
        upper = prior.tau2 + step
    else:
        logger.warning("Upper profile limit for tau2 not found; interval is unbounded")
        return float(lower), float("inf")
    return float(lower), float(brentq(excess, prior.tau2, upper, xtol=1e-12))


def sensitivity_sweep(
    crudes: Sequence[CrudeEffect], tau2_grid: Sequence[float]
) -> List[SensitivityRow]:
    """Recompute posteriors, EPC and RA at fixed tau2 values, mu re-profiled."""
    grid = [float(t) for t in tau2_grid]
    if not grid:
        raise InputValidationError("tau2 grid must not be empty")
    if min(grid) < 0:
        raise InputValidationError("tau2 grid values must be non-negative")

    ids, theta, s2 = _arrays(crudes)
    rows = []
    for tau2 in grid:
        ll, mu = _profile(theta, s2, tau2)
        shrink = tau2 / (tau2 + s2)
        ebe = mu + shrink * (theta - mu)
        pv = shrink * s2
        epc_values = expected_percentiles(ebe, pv, mu, tau2)
        rows.append(
            SensitivityRow(
                tau2=tau2,
                mu=mu,
                ra=rankability(epc_values).ra,
                centre_ids=ids,
                epc=epc_values.tolist(),
            )
        )
    return rows
