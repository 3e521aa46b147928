"""
Longitudinal two-stage model for crude effects observed over several years.

The crude effects of centre i form a vector theta_hat_i ~ MVN(theta_i, S_i)
with diagonal S_i over the years the centre was observed, and the true
effects follow theta_i ~ MVN(M, T). All fits maximize the exact
observed-data likelihood by EM; a centre contributes only its observed
coordinates. Missing years are assumed missing at random.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize_scalar

from app.config import get_settings
from app.core.exceptions import (
    InputValidationError,
    NonIdentifiableError,
    SingularMatrixError,
)
from app.schemas.longitudinal import (
    CovarianceStructure,
    ExtrapolatedModel,
    ExtrapolationKind,
    ExtrapolationPolicy,
    FitStats,
    LongitudinalModel,
    Panel,
    PredictiveDistribution,
)
from app.schemas.ranking import RankabilityReport, RankingRow
from app.schemas.stage1 import CrudeEffect
from estimation.eb_univariate import fit_prior_mle
from estimation.ranking import ranking_from_normals

settings = get_settings()
logger = logging.getLogger("estimation")

STRUCTURED = (
    CovarianceStructure.COMPOUND_SYMMETRY,
    CovarianceStructure.AR1,
    CovarianceStructure.RANDOM_COEFFICIENTS,
)


def assemble_panel(
    crudes: Sequence[CrudeEffect],
    centres: Optional[Sequence[str]] = None,
    min_years: int = 2,
) -> Panel:
    """
    Lay crude effects out as a centre x year matrix with a missing mask.

    Args:
        crudes: Crude effects of any number of centres and years
        centres: Optional centre order; centres without any observed year
            are dropped with a log entry
        min_years: Minimum number of distinct years required

    Raises:
        InputValidationError: duplicate (centre, year) or too few years
    """
    seen: Dict[Tuple[str, int], CrudeEffect] = {}
    for crude in crudes:
        key = (crude.centre_id, crude.year)
        if key in seen:
            raise InputValidationError(f"Duplicate crude effect for centre {key[0]} in year {key[1]}")
        seen[key] = crude

    years = sorted({year for _, year in seen})
    if len(years) < min_years:
        raise InputValidationError(
            f"Longitudinal fitting needs at least {min_years} years, got {len(years)}"
        )

    present = sorted({centre for centre, _ in seen})
    if centres is None:
        order = present
    else:
        order = [c for c in centres if c in present]
        for dropped in sorted(set(centres) - set(present)):
            logger.warning(f"Centre {dropped} has no observed year and is dropped from the panel")

    theta = np.full((len(order), len(years)), np.nan)
    s2 = np.full_like(theta, np.nan)
    column = {year: j for j, year in enumerate(years)}
    row = {centre: i for i, centre in enumerate(order)}
    for (centre, year), crude in seen.items():
        if centre in row:
            theta[row[centre], column[year]] = crude.theta_hat
            s2[row[centre], column[year]] = crude.s2

    return Panel(centres=order, years=years, theta_hat=theta, s2=s2, observed=np.isfinite(theta))


def panel_column(panel: Panel, j: int) -> List[CrudeEffect]:
    """Observed crude effects of one year."""
    return [
        CrudeEffect(
            centre_id=centre,
            year=panel.years[j],
            theta_hat=float(panel.theta_hat[i, j]),
            s2=float(panel.s2[i, j]),
        )
        for i, centre in enumerate(panel.centres)
        if panel.observed[i, j]
    ]


# --- structured covariance matrices ---------------------------------------


def _gaps(years: Sequence[int]) -> np.ndarray:
    y = np.asarray(years, dtype=int)
    return np.abs(np.subtract.outer(y, y))


def build_structured_T(
    structure: CovarianceStructure,
    params: Dict[str, float],
    years: Sequence[int],
    time_origin: Optional[int] = None,
) -> np.ndarray:
    """
    Covariance matrix of a structured model.

    ar1: tau2 rho^|y_j - y_k| with actual year gaps.
    compound_symmetry: tau2 on the diagonal, tau2 rho_cs elsewhere.
    random_coefficients: tau_A2 + rho_AB tau_A tau_B (t_j + t_k) + tau_B2 t_j t_k
    with t = year - time_origin.

    Raises:
        InputValidationError: unknown structure or parameters out of range
    """
    structure = CovarianceStructure(structure)
    J = len(years)

    if structure == CovarianceStructure.AR1:
        tau2, rho = params["tau2"], params["rho"]
        if tau2 < 0 or abs(rho) >= 1:
            raise InputValidationError(f"ar1 needs tau2 >= 0 and |rho| < 1, got {tau2}, {rho}")
        return tau2 * np.power(rho, _gaps(years))

    if structure == CovarianceStructure.COMPOUND_SYMMETRY:
        tau2, rho = params["tau2"], params["rho_cs"]
        lower = -1.0 / (J - 1) if J > 1 else -1.0
        if tau2 < 0 or not lower - 1e-12 <= rho <= 1.0 + 1e-12:
            raise InputValidationError(
                f"compound_symmetry needs tau2 >= 0 and rho_cs in [{lower:.3g}, 1], got {tau2}, {rho}"
            )
        return tau2 * ((1.0 - rho) * np.eye(J) + rho * np.ones((J, J)))

    if structure == CovarianceStructure.RANDOM_COEFFICIENTS:
        tau_a2, tau_b2, rho_ab = params["tau_A2"], params["tau_B2"], params["rho_AB"]
        if tau_a2 < 0 or tau_b2 < 0 or abs(rho_ab) > 1:
            raise InputValidationError("random_coefficients needs tau_A2, tau_B2 >= 0 and |rho_AB| <= 1")
        t = _time(years, time_origin)
        cov_ab = rho_ab * np.sqrt(tau_a2 * tau_b2)
        return tau_a2 + cov_ab * np.add.outer(t, t) + tau_b2 * np.outer(t, t)

    raise InputValidationError(f"{structure.value} has no parametric covariance")


def _time(years: Sequence[int], time_origin: Optional[int]) -> np.ndarray:
    origin = default_time_origin(years) if time_origin is None else time_origin
    return np.asarray(years, dtype=float) - origin


def default_time_origin(years: Sequence[int]) -> int:
    """The year before the first panel year, so t runs 1..J for consecutive years."""
    return int(years[0]) - 1


def _design(years: Sequence[int], time_origin: int) -> np.ndarray:
    return np.column_stack([np.ones(len(years)), _time(years, time_origin)])


# --- EM engine -------------------------------------------------------------


@dataclass
class _Batch:
    """Centres sharing one missingness pattern."""

    rows: np.ndarray
    cols: np.ndarray
    theta: np.ndarray
    s2: np.ndarray


def _batches(panel: Panel) -> List[_Batch]:
    patterns: Dict[Tuple[bool, ...], List[int]] = {}
    for i, mask in enumerate(panel.observed):
        patterns.setdefault(tuple(bool(v) for v in mask), []).append(i)
    batches = []
    for pattern in sorted(patterns, reverse=True):
        rows = np.array(patterns[pattern])
        cols = np.flatnonzero(pattern)
        batches.append(
            _Batch(
                rows=rows,
                cols=cols,
                theta=panel.theta_hat[np.ix_(rows, cols)],
                s2=panel.s2[np.ix_(rows, cols)],
            )
        )
    return batches


def _marginal_cov(batch: _Batch, T: np.ndarray) -> np.ndarray:
    k = batch.cols.size
    sigma = np.repeat(T[np.ix_(batch.cols, batch.cols)][None], batch.rows.size, axis=0)
    sigma[:, np.arange(k), np.arange(k)] += batch.s2
    return sigma


def _e_step(
    batches: List[_Batch], n_centres: int, M: np.ndarray, T: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Observed-data log-likelihood and posterior moments of the true effects.

    Returns:
        Tuple of (loglik, posterior means N x J, sum of posterior covariances)
    """
    J = M.size
    loglik = 0.0
    means = np.empty((n_centres, J))
    cov_sum = np.zeros((J, J))

    for batch in batches:
        sigma = _marginal_cov(batch, T)
        sign, logdet = np.linalg.slogdet(sigma)
        if (sign <= 0).any():
            raise SingularMatrixError(
                "Marginal covariance of the crude effects is not positive definite",
                condition=float(np.max(np.linalg.cond(sigma))),
            )
        resid = batch.theta - M[batch.cols]
        solved = np.linalg.solve(sigma, resid[..., None])[..., 0]
        n, k = resid.shape
        loglik -= 0.5 * (n * k * np.log(2.0 * np.pi) + logdet.sum() + np.sum(resid * solved))

        cross = T[:, batch.cols]
        means[batch.rows] = M + solved @ cross.T
        gain = np.linalg.solve(sigma, np.repeat(cross.T[None], n, axis=0))
        cov_sum += n * T - np.einsum("jk,nkl->jl", cross, gain)

    return float(loglik), means, (cov_sum + cov_sum.T) / 2.0


def panel_loglik(panel: Panel, M: np.ndarray, T: np.ndarray) -> float:
    """sum_i log MVN(theta_hat_iO; M_O, T_OO + S_i)."""
    return _e_step(_batches(panel), panel.n_centres, np.asarray(M, float), np.asarray(T, float))[0]


@dataclass
class _EMResult:
    M: np.ndarray
    T: np.ndarray
    params: Dict[str, float]
    loglik: float
    trace: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    projected: bool = False


MStep = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray, Dict[str, float], bool]]


def _run_em(
    panel: Panel,
    batches: List[_Batch],
    M: np.ndarray,
    T: np.ndarray,
    params: Dict[str, float],
    m_step: MStep,
    tol: float,
    max_iter: int,
) -> _EMResult:
    trace: List[float] = []
    projected = False
    for iteration in range(1, max_iter + 1):
        loglik, means, cov_sum = _e_step(batches, panel.n_centres, M, T)
        trace.append(loglik)
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            return _EMResult(M, T, params, loglik, trace, iteration, True, projected)
        M, T, params, flag = m_step(means, cov_sum)
        projected = projected or flag

    loglik = _e_step(batches, panel.n_centres, M, T)[0]
    trace.append(loglik)
    logger.warning(f"Panel EM stopped after {max_iter} iterations without meeting tolerance {tol}")
    return _EMResult(M, T, params, loglik, trace, max_iter, False, projected)


def _moments(means: np.ndarray, cov_sum: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Updated mean and expected complete-data covariance C."""
    M = means.mean(axis=0)
    dev = means - M
    C = (dev.T @ dev + cov_sum) / means.shape[0]
    return M, (C + C.T) / 2.0


def _project_psd(T: np.ndarray) -> Tuple[np.ndarray, bool]:
    values, vectors = np.linalg.eigh(T)
    if values.min() >= 0:
        return T, False
    clipped = (vectors * np.clip(values, 0.0, None)) @ vectors.T
    return (clipped + clipped.T) / 2.0, True


def _starting_values(panel: Panel) -> Tuple[np.ndarray, np.ndarray]:
    """Column means and a diagonal method-of-moments covariance."""
    M0 = np.nanmean(panel.theta_hat, axis=0)
    floor = settings.EM_INIT_FLOOR * float(np.nanmedian(panel.s2))
    spread = np.array(
        [
            np.nanvar(panel.theta_hat[:, j]) - np.nanmean(panel.s2[:, j])
            if panel.observed[:, j].sum() > 1
            else 0.0
            for j in range(panel.n_years)
        ]
    )
    return M0, np.diag(np.maximum(spread, max(floor, np.finfo(float).tiny)))


def _tolerances(tol: Optional[float], max_iter: Optional[int]) -> Tuple[float, int]:
    return (
        settings.PANEL_EM_TOL if tol is None else tol,
        max_iter or settings.PANEL_EM_MAX_ITER,
    )


# --- fits ------------------------------------------------------------------


def _single_year_model(panel: Panel, structure: CovarianceStructure) -> LongitudinalModel:
    """J = 1: the panel is one year of crude effects and the univariate fit applies."""
    prior = fit_prior_mle(panel_column(panel, 0))
    params: Dict[str, float] = {"tau2": prior.tau2}
    if structure == CovarianceStructure.AR1:
        params["rho"] = 0.0
    elif structure == CovarianceStructure.COMPOUND_SYMMETRY:
        params["rho_cs"] = 0.0
    return LongitudinalModel(
        structure=structure,
        years=list(panel.years),
        M=np.array([prior.mu]),
        T=np.array([[prior.tau2]]),
        structure_params=params,
        log_likelihood=prior.log_likelihood,
        n_mean_params=1,
        n_cov_params=1,
        iterations=prior.iterations,
        converged=prior.converged,
        at_boundary=prior.at_boundary,
        loglik_trace=prior.loglik_trace,
    )


def check_identifiable(panel: Panel) -> None:
    """Every year pair needs at least 2 centres observed in both years."""
    joint = panel.observed.astype(int).T @ panel.observed.astype(int)
    for j in range(panel.n_years):
        for k in range(j, panel.n_years):
            if joint[j, k] < 2:
                raise NonIdentifiableError((panel.years[j], panel.years[k]), int(joint[j, k]))


def fit_unstructured(
    panel: Panel, tol: Optional[float] = None, max_iter: Optional[int] = None
) -> LongitudinalModel:
    """
    Saturated model: free mean per year and free covariance T.

    Raises:
        NonIdentifiableError: a year pair has fewer than 2 joint observations
    """
    if panel.n_years == 1:
        return _single_year_model(panel, CovarianceStructure.UNSTRUCTURED)
    check_identifiable(panel)
    tol, max_iter = _tolerances(tol, max_iter)

    def m_step(means, cov_sum):
        M, C = _moments(means, cov_sum)
        T, projected = _project_psd(C)
        return M, T, {}, projected

    M0, T0 = _starting_values(panel)
    result = _run_em(panel, _batches(panel), M0, T0, {}, m_step, tol, max_iter)
    if result.projected:
        logger.warning("Unstructured covariance was projected to the PSD cone during EM")

    J = panel.n_years
    return LongitudinalModel(
        structure=CovarianceStructure.UNSTRUCTURED,
        years=list(panel.years),
        M=result.M,
        T=result.T,
        log_likelihood=result.loglik,
        n_mean_params=J,
        n_cov_params=J * (J + 1) // 2,
        iterations=result.iterations,
        converged=result.converged,
        psd_projected=result.projected,
        loglik_trace=result.trace,
    )


def _fit_compound_symmetry(panel: Panel, tol: float, max_iter: int) -> _EMResult:
    J = panel.n_years

    def m_step(means, cov_sum):
        M, C = _moments(means, cov_sum)
        # Eigenvalues of a CS matrix: one along 1, the rest shared
        lam1 = float(np.sum(C)) / J
        lam2 = max((float(np.trace(C)) - lam1) / (J - 1), 0.0)
        # rho_cs >= -1/J keeps the matrix extendable by one year; on that
        # boundary lam1 = lam2 / (J + 1) and the likelihood fixes lam2
        if lam1 < lam2 / (J + 1):
            lam2 = (lam1 * (J + 1) + (J - 1) * lam2) / J
            lam1 = lam2 / (J + 1)
        tau2 = (lam1 + (J - 1) * lam2) / J
        rho = (lam1 - lam2) / (J * tau2) if tau2 > 0 else 0.0
        rho = float(np.clip(rho, -1.0 / J, 1.0))
        params = {"tau2": tau2, "rho_cs": rho}
        return M, build_structured_T(CovarianceStructure.COMPOUND_SYMMETRY, params, panel.years), params, False

    M0, T0 = _starting_values(panel)
    tau2 = float(np.mean(np.diag(T0)))
    params = {"tau2": tau2, "rho_cs": 0.0}
    return _run_em(panel, _batches(panel), M0, tau2 * np.eye(J), params, m_step, tol, max_iter)


def _fit_ar1(panel: Panel, tol: float, max_iter: int) -> Tuple[_EMResult, bool]:
    """Golden-section (bounded Brent) search of the profile likelihood in rho."""
    batches = _batches(panel)
    gaps = _gaps(panel.years)
    J = panel.n_years
    M0, T0 = _starting_values(panel)
    warm = {"M": M0, "tau2": float(np.mean(np.diag(T0)))}

    def inner(rho: float) -> _EMResult:
        R = np.power(rho, gaps)

        def m_step(means, cov_sum):
            M, C = _moments(means, cov_sum)
            tau2 = float(np.trace(np.linalg.solve(R, C))) / J
            return M, tau2 * R, {"tau2": tau2, "rho": rho}, False

        result = _run_em(
            panel, batches, warm["M"], warm["tau2"] * R, {"tau2": warm["tau2"], "rho": rho},
            m_step, tol, max_iter,
        )
        warm["M"], warm["tau2"] = result.M, result.params["tau2"]
        return result

    bound = settings.PROFILE_RHO_BOUND
    search = minimize_scalar(
        lambda rho: -inner(rho).loglik,
        bounds=(-bound, bound),
        method="bounded",
        options={"xatol": settings.PROFILE_XTOL},
    )
    rho_hat = float(search.x)
    at_boundary = abs(rho_hat) >= bound - 10 * settings.PROFILE_XTOL
    if at_boundary:
        logger.warning(f"AR(1) profile maximum at the search boundary (rho = {rho_hat:.5f})")
    return inner(rho_hat), at_boundary


def _fit_random_coefficients(
    panel: Panel, time_origin: int, tol: float, max_iter: int
) -> _EMResult:
    """EM for theta_ij = A_i + B_i t_j; (A, B) recovered exactly as L theta with L = (Z'Z)^-1 Z'."""
    Z = _design(panel.years, time_origin)
    L = np.linalg.solve(Z.T @ Z, Z.T)

    def m_step(means, cov_sum):
        coefs = means @ L.T
        gamma = coefs.mean(axis=0)
        dev = coefs - gamma
        cov_ab = (dev.T @ dev + L @ cov_sum @ L.T) / means.shape[0]
        cov_ab = (cov_ab + cov_ab.T) / 2.0
        T = Z @ cov_ab @ Z.T
        return Z @ gamma, (T + T.T) / 2.0, _rc_params(gamma, cov_ab), False

    M0, T0 = _starting_values(panel)
    gamma0 = L @ M0
    cov0 = L @ T0 @ L.T
    T_start = Z @ cov0 @ Z.T
    return _run_em(
        panel, _batches(panel), Z @ gamma0, (T_start + T_start.T) / 2.0,
        _rc_params(gamma0, cov0), m_step, tol, max_iter,
    )


def _rc_params(gamma: np.ndarray, cov_ab: np.ndarray) -> Dict[str, float]:
    tau_a2, tau_b2 = float(cov_ab[0, 0]), float(cov_ab[1, 1])
    scale = np.sqrt(tau_a2 * tau_b2)
    rho_ab = float(np.clip(cov_ab[0, 1] / scale, -1.0, 1.0)) if scale > 0 else 0.0
    return {
        "tau_A2": tau_a2,
        "tau_B2": tau_b2,
        "rho_AB": rho_ab,
        "alpha": float(gamma[0]),
        "beta": float(gamma[1]),
    }


def fit_structured(
    panel: Panel,
    structure: CovarianceStructure,
    time_origin: Optional[int] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> LongitudinalModel:
    """
    Fit a structured covariance model.

    ar1 and compound_symmetry keep a free mean per year; random_coefficients
    uses the linear mean alpha + beta t.

    Raises:
        InputValidationError: structure is unstructured, or random
            coefficients on a single year
    """
    structure = CovarianceStructure(structure)
    if structure not in STRUCTURED:
        raise InputValidationError(f"fit_structured does not handle {structure.value}; use fit_unstructured")
    if panel.n_years == 1:
        if structure == CovarianceStructure.RANDOM_COEFFICIENTS:
            raise InputValidationError("random_coefficients needs at least 2 years")
        return _single_year_model(panel, structure)

    tol, max_iter = _tolerances(tol, max_iter)
    J = panel.n_years
    at_boundary = False
    origin = 0

    if structure == CovarianceStructure.AR1:
        result, at_boundary = _fit_ar1(panel, tol, max_iter)
        n_mean, n_cov = J, 2
    elif structure == CovarianceStructure.COMPOUND_SYMMETRY:
        result = _fit_compound_symmetry(panel, tol, max_iter)
        n_mean, n_cov = J, 2
    else:
        origin = default_time_origin(panel.years) if time_origin is None else time_origin
        result = _fit_random_coefficients(panel, origin, tol, max_iter)
        n_mean, n_cov = 2, 3

    logger.info(
        f"Fitted {structure.value} in {result.iterations} EM iterations, "
        f"loglik {result.loglik:.4f}"
    )
    return LongitudinalModel(
        structure=structure,
        years=list(panel.years),
        M=result.M,
        T=result.T,
        structure_params=result.params,
        log_likelihood=result.loglik,
        n_mean_params=n_mean,
        n_cov_params=n_cov,
        time_origin=origin,
        iterations=result.iterations,
        converged=result.converged,
        at_boundary=at_boundary,
        loglik_trace=result.trace,
    )


def fit_model(panel: Panel, structure: CovarianceStructure, **kwargs) -> LongitudinalModel:
    """Dispatch to fit_unstructured or fit_structured."""
    if CovarianceStructure(structure) == CovarianceStructure.UNSTRUCTURED:
        kwargs.pop("time_origin", None)
        return fit_unstructured(panel, **kwargs)
    return fit_structured(panel, structure, **kwargs)


def model_from_params(
    structure: CovarianceStructure,
    params: Dict[str, float],
    years: Sequence[int],
    log_likelihood: float,
    M: Optional[Sequence[float]] = None,
    time_origin: Optional[int] = None,
) -> LongitudinalModel:
    """
    Build a structured model from given parameters without fitting.

    ar1 and compound_symmetry need the per-year mean M; random_coefficients
    takes its mean from alpha and beta.
    """
    structure = CovarianceStructure(structure)
    if structure not in STRUCTURED:
        raise InputValidationError("Only structured models can be built from parameters")
    years = [int(y) for y in years]
    J = len(years)
    origin = default_time_origin(years) if time_origin is None else int(time_origin)

    if structure == CovarianceStructure.RANDOM_COEFFICIENTS:
        mean = _design(years, origin) @ np.array([params["alpha"], params["beta"]])
        n_mean, n_cov = 2, 3
    else:
        if M is None or len(M) != J:
            raise InputValidationError(f"{structure.value} needs a mean for each of the {J} years")
        mean = np.asarray(M, dtype=float)
        n_mean, n_cov = J, 2

    return LongitudinalModel(
        structure=structure,
        years=years,
        M=mean,
        T=build_structured_T(structure, params, years, origin),
        structure_params={k: float(v) for k, v in params.items()},
        log_likelihood=log_likelihood,
        n_mean_params=n_mean,
        n_cov_params=n_cov,
        time_origin=origin if structure == CovarianceStructure.RANDOM_COEFFICIENTS else 0,
    )


# --- reporting and prediction ---------------------------------------------


def fit_stats(log_likelihood: float, n_params: int) -> FitStats:
    """aic = loglik - k (larger is better); aic_textbook = -2 loglik + 2k."""
    return FitStats(
        log_likelihood=log_likelihood,
        aic=log_likelihood - n_params,
        aic_textbook=-2.0 * log_likelihood + 2.0 * n_params,
        n_params=n_params,
    )


def model_fit_stats(model: LongitudinalModel) -> FitStats:
    return fit_stats(model.log_likelihood, model.n_params)


def extrapolate(
    model: LongitudinalModel, policy: Optional[ExtrapolationPolicy] = None
) -> ExtrapolatedModel:
    """
    Extend (M, T) to the year after the last panel year.

    Defaults to carry_last; random_coefficients always follows its own
    linear trend.

    Raises:
        InputValidationError: unstructured model, or manual policy without value
    """
    if model.structure not in STRUCTURED:
        raise InputValidationError(
            "An unstructured covariance cannot be extrapolated; fit cs, ar1 or rc instead"
        )
    requested = policy
    policy = policy or ExtrapolationPolicy()
    next_year = model.years[-1] + 1
    years = [*model.years, next_year]
    params = model.structure_params

    if model.structure == CovarianceStructure.RANDOM_COEFFICIENTS:
        if requested is not None and requested.kind != ExtrapolationKind.LINEAR_TREND:
            logger.warning("random_coefficients extrapolates its own linear trend; policy ignored")
        policy = ExtrapolationPolicy(kind=ExtrapolationKind.LINEAR_TREND)
        mu_next = params["alpha"] + params["beta"] * (next_year - model.time_origin)
    elif policy.kind == ExtrapolationKind.MANUAL:
        if policy.value is None:
            raise InputValidationError("Manual extrapolation needs a value (manual=<v>)")
        mu_next = float(policy.value)
    elif policy.kind == ExtrapolationKind.LINEAR_TREND:
        if len(model.years) < 2:
            raise InputValidationError("Linear trend extrapolation needs at least 2 years")
        slope, intercept = np.polyfit(np.asarray(model.years, float), model.M, 1)
        mu_next = float(intercept + slope * next_year)
    else:
        mu_next = float(model.M[-1])

    T_ext = build_structured_T(model.structure, params, years, model.time_origin)
    return ExtrapolatedModel(
        model=model,
        next_year=next_year,
        mu_next=float(mu_next),
        M_extended=np.append(model.M, mu_next),
        T_extended=(T_ext + T_ext.T) / 2.0,
        policy=policy,
    )


def predict_next(
    extended: ExtrapolatedModel,
    centre_id: str,
    years: Sequence[int],
    theta_hat: Sequence[float],
    s2: Sequence[float],
) -> PredictiveDistribution:
    """
    Conditional law of the next-year effect given a centre's observed history.

    Uses only the observed rows and columns of T_extended + diag(s2);
    an empty history gives the extrapolated marginal.

    Raises:
        SingularMatrixError: conditioning matrix not numerically positive definite
    """
    years = [int(y) for y in years]
    if not years:
        return PredictiveDistribution(
            centre_id=centre_id, mean=extended.mu_next, variance=extended.tau2_next, years_used=[]
        )

    position = {year: j for j, year in enumerate(extended.model.years)}
    unknown = [y for y in years if y not in position]
    if unknown:
        raise InputValidationError(f"Centre {centre_id} has years outside the model: {unknown}")
    idx = np.array([position[y] for y in years])
    nxt = len(extended.model.years)

    sigma = extended.T_extended[np.ix_(idx, idx)] + np.diag(np.asarray(s2, dtype=float))
    cross = extended.T_extended[nxt, idx]
    try:
        factor = cho_factor(sigma, lower=True)
    except LinAlgError as exc:
        raise SingularMatrixError(
            f"Conditioning matrix for centre {centre_id} is singular", condition=float(np.linalg.cond(sigma))
        ) from exc

    resid = np.asarray(theta_hat, dtype=float) - extended.M_extended[idx]
    mean = extended.mu_next + float(cross @ cho_solve(factor, resid))
    variance = extended.tau2_next - float(cross @ cho_solve(factor, cross))
    return PredictiveDistribution(
        centre_id=centre_id, mean=mean, variance=max(variance, 0.0), years_used=years
    )


def predict_panel(extended: ExtrapolatedModel, panel: Panel) -> List[PredictiveDistribution]:
    """predict_next for every centre of a panel, in panel order."""
    if list(panel.years) != list(extended.model.years):
        raise InputValidationError("Panel years differ from the years the model was fitted on")
    predictions = []
    for i, centre in enumerate(panel.centres):
        mask = panel.observed[i]
        predictions.append(
            predict_next(
                extended,
                centre,
                [y for y, seen in zip(panel.years, mask) if seen],
                panel.theta_hat[i, mask],
                panel.s2[i, mask],
            )
        )
    return predictions


def predictive_ranking(
    predictions: Sequence[PredictiveDistribution], mu_next: float, tau2_next: float
) -> Tuple[List[RankingRow], RankabilityReport]:
    """Rank predicted next-year effects with the same measures as posteriors."""
    rows, report, _ = ranking_from_normals(
        [p.centre_id for p in predictions],
        np.array([p.mean for p in predictions]),
        np.array([p.variance for p in predictions]),
        mu_next,
        tau2_next,
    )
    return rows, report


def _correlations(T: np.ndarray) -> np.ndarray:
    sd = np.sqrt(np.clip(np.diag(T), 0.0, None))
    scale = np.outer(sd, sd)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(scale > 0, T / np.where(scale > 0, scale, 1.0), 0.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def model_report(model: LongitudinalModel, extended: Optional[ExtrapolatedModel] = None) -> dict:
    """JSON-ready summary: means, variances, correlations, fit statistics and extrapolation."""
    stats = model_fit_stats(model)
    report = {
        "structure": model.structure.value,
        "years": list(model.years),
        "mean": model.M.tolist(),
        "variance": np.diag(model.T).tolist(),
        "correlation": _correlations(model.T).tolist(),
        "T": model.T.tolist(),
        "structure_params": dict(model.structure_params),
        "log_likelihood": stats.log_likelihood,
        "aic": stats.aic,
        "aic_textbook": stats.aic_textbook,
        "n_params": stats.n_params,
        "n_mean_params": model.n_mean_params,
        "n_cov_params": model.n_cov_params,
        "iterations": model.iterations,
        "converged": model.converged,
        "at_boundary": model.at_boundary,
        "psd_projected": model.psd_projected,
    }
    if model.structure == CovarianceStructure.RANDOM_COEFFICIENTS:
        report["time_origin"] = model.time_origin
    if extended is not None:
        report["extrapolation"] = {
            "year": extended.next_year,
            "policy": extended.policy.kind.value,
            "mean": extended.mu_next,
            "variance": extended.tau2_next,
        }
    return report
