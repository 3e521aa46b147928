"""
Stage 1 - patient-level logistic model and crude centre effects.

The patient-mix regression is fitted once without centre terms. With the
coefficients held fixed, each centre-year is reduced to observed and
expected counts and the Bernoulli information, from which the score
statistic (O - E) / var gives a crude log-odds effect with likelihood
variance 1 / var.
"""

import logging
import re
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.special import expit, logit
from scipy.stats import norm

from app.config import get_settings
from app.core.exceptions import (
    ConvergenceError,
    InputValidationError,
    RankDeficientError,
    SeparationError,
    SingularMatrixError,
    UninformativeCentreError,
)
from app.schemas.stage1 import (
    BetaModel,
    CentreYearSummary,
    CrudeEffect,
    ExclusionRecord,
    PatientRecord,
    ScoringResult,
)

settings = get_settings()
logger = logging.getLogger("estimation")

REQUIRED_PATIENT_COLUMNS = ("centre_id", "year", "outcome")
COVARIATE_PATTERN = re.compile(r"^x\d+$")

Patients = Union[pd.DataFrame, Sequence[PatientRecord]]


def covariate_columns(patients: pd.DataFrame) -> List[str]:
    """Covariate columns ``x1..xp`` in file order."""
    return [str(c) for c in patients.columns if COVARIATE_PATTERN.match(str(c))]


def patients_frame(patients: Patients) -> pd.DataFrame:
    """
    Patient table from validated records; tables pass through unchanged.

    Raises:
        InputValidationError: covariate length differs between records
    """
    if isinstance(patients, pd.DataFrame):
        return patients
    records = list(patients)
    widths = {len(r.covariates) for r in records}
    if len(widths) > 1:
        raise InputValidationError(f"Covariate length differs between patients: {sorted(widths)}")
    p = widths.pop() if widths else 1
    return pd.DataFrame(
        [
            {
                "centre_id": r.centre_id,
                "year": r.year,
                "outcome": r.outcome,
                **{f"x{k + 1}": v for k, v in enumerate(r.covariates)},
            }
            for r in records
        ],
        columns=["centre_id", "year", "outcome", *[f"x{k + 1}" for k in range(p)]],
    )


def check_patients(patients: pd.DataFrame) -> List[str]:
    """
    Validate a patient table and return its covariate columns.

    Raises:
        InputValidationError: naming the offending column
    """
    for column in REQUIRED_PATIENT_COLUMNS:
        if column not in patients.columns:
            raise InputValidationError(f"Missing required column: {column}")
    if patients.empty:
        raise InputValidationError("At least one patient is required")

    columns = covariate_columns(patients)
    if not columns or columns[0] != "x1":
        raise InputValidationError("Missing required column: x1 (the constant term)")

    for column in ("outcome", *columns):
        if patients[column].isna().any():
            raise InputValidationError(f"Column '{column}' contains missing values")
    if not patients["outcome"].isin([0, 1]).all():
        raise InputValidationError("Column 'outcome' must be binary (0/1)")
    if not np.allclose(patients["x1"].to_numpy(dtype=float), 1.0):
        raise InputValidationError("Column 'x1' must be the constant 1")
    return columns


def _loglik(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def check_full_rank(X: np.ndarray, names: Sequence[str]) -> None:
    """Raise RankDeficientError naming the first collinear column."""
    for j in range(X.shape[1]):
        if np.linalg.matrix_rank(X[:, : j + 1]) <= j:
            raise RankDeficientError(names[j])


def fit_logistic_arrays(
    X: np.ndarray,
    y: np.ndarray,
    names: Sequence[str],
    max_iter: Optional[int] = None,
    score_tol: Optional[float] = None,
    loglik_tol: Optional[float] = None,
) -> BetaModel:
    """
    Fit a Bernoulli logistic regression by IRLS with step-halving.

    Args:
        X: Design matrix, first column the constant
        y: Binary outcomes
        names: Column names, used in error messages

    Returns:
        BetaModel with coefficients, standard errors and the
        log-likelihood trace

    Raises:
        RankDeficientError: design is collinear
        SeparationError: outcome constant or linear predictor diverging
        ConvergenceError: iteration cap reached
    """
    max_iter = max_iter or settings.IRLS_MAX_ITER
    score_tol = score_tol if score_tol is not None else settings.IRLS_SCORE_TOL
    loglik_tol = loglik_tol if loglik_tol is not None else settings.IRLS_LOGLIK_TOL

    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < 1:
        raise InputValidationError("At least one patient is required")
    check_full_rank(X, names)

    beta = np.zeros(p)
    ybar = float(y.mean())
    if ybar <= 0.0 or ybar >= 1.0:
        raise SeparationError(
            f"Outcome is constant ({ybar:.0f}); the maximum likelihood estimate diverges",
            last_iterate=beta,
            iterations=0,
        )
    beta[0] = logit(ybar)

    ll = _loglik(X, y, beta)
    trace = [ll]
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        prob = expit(X @ beta)
        score = X.T @ (y - prob)
        if np.max(np.abs(score)) < score_tol:
            converged = True
            break

        info = (X * (prob * (1.0 - prob))[:, None]).T @ X
        try:
            step = linalg.solve(info, score, assume_a="pos")
        except linalg.LinAlgError as e:
            raise SingularMatrixError(
                "Fisher information is singular", condition=float(np.linalg.cond(info))
            ) from e

        # Step-halving keeps the log-likelihood non-decreasing
        t = 1.0
        candidate, ll_new = beta + step, _loglik(X, y, beta + step)
        while ll_new < ll:
            t *= 0.5
            if t < 1e-10:
                candidate, ll_new = beta, ll
                break
            candidate = beta + t * step
            ll_new = _loglik(X, y, candidate)

        change = abs(ll_new - ll) / max(abs(ll), np.finfo(float).tiny)
        beta, ll = candidate, ll_new
        trace.append(ll)

        if np.max(np.abs(X @ beta)) > settings.SEPARATION_ETA_BOUND:
            raise SeparationError(
                "Linear predictor diverges (quasi-separation)",
                last_iterate=beta,
                iterations=iterations,
            )
        if change < loglik_tol:
            converged = True
            break

    if not converged:
        raise ConvergenceError(
            f"IRLS did not converge in {max_iter} iterations (possible quasi-separation)",
            last_iterate=beta,
            iterations=iterations,
        )

    prob = expit(X @ beta)
    info = (X * (prob * (1.0 - prob))[:, None]).T @ X
    standard_errors = np.sqrt(np.clip(np.diag(linalg.pinvh(info)), 0.0, None))

    logger.debug(f"IRLS converged in {iterations} iterations, loglik={ll:.6f}")
    return BetaModel(
        coefficients=beta.tolist(),
        standard_errors=standard_errors.tolist(),
        covariate_names=list(names),
        converged=True,
        iterations=iterations,
        log_likelihood=ll,
        loglik_trace=trace,
    )


def fit_logistic(patients: Patients, **kwargs) -> BetaModel:
    """Fit the patient-mix model ignoring centre effects."""
    patients = patients_frame(patients)
    columns = check_patients(patients)
    X = patients[columns].to_numpy(dtype=float)
    y = patients["outcome"].to_numpy(dtype=float)
    logger.info(f"Fitting logistic model on {len(y):,} patients, {len(columns)} covariates")
    return fit_logistic_arrays(X, y, columns, **kwargs)


def linear_predictor(patients: pd.DataFrame, beta: BetaModel) -> np.ndarray:
    """X'beta for every patient."""
    columns = covariate_columns(patients)
    if columns != list(beta.covariate_names):
        raise InputValidationError(
            f"Covariates {columns} do not match the fitted model {beta.covariate_names}"
        )
    return patients[columns].to_numpy(dtype=float) @ np.asarray(beta.coefficients)


def summarize(patients: Patients, beta: BetaModel) -> List[CentreYearSummary]:
    """
    Reduce patients to per centre-year O, E and information.

    Groups without patients do not appear.
    """
    patients = patients_frame(patients)
    prob = expit(linear_predictor(patients, beta))
    frame = pd.DataFrame(
        {
            "centre_id": patients["centre_id"].astype(str).to_numpy(),
            "year": patients["year"].astype(int).to_numpy(),
            "n": 1,
            "observed": patients["outcome"].to_numpy(dtype=float),
            "expected": prob,
            "information": prob * (1.0 - prob),
        }
    )
    grouped = frame.groupby(["centre_id", "year"], sort=True).sum().reset_index()
    return [
        CentreYearSummary(
            centre_id=row.centre_id,
            year=int(row.year),
            n=int(row.n),
            observed=float(row.observed),
            expected=float(row.expected),
            information=float(row.information),
        )
        for row in grouped.itertuples(index=False)
    ]


def crude_effect(
    summary: CentreYearSummary, min_information: Optional[float] = None
) -> CrudeEffect:
    """theta_hat = (O - E) / var with s2 = 1 / var."""
    threshold = settings.MIN_INFORMATION if min_information is None else min_information
    if summary.information <= threshold:
        raise UninformativeCentreError(summary.centre_id, summary.year, summary.information)
    return CrudeEffect(
        centre_id=summary.centre_id,
        year=summary.year,
        theta_hat=(summary.observed - summary.expected) / summary.information,
        s2=1.0 / summary.information,
    )


def crude_effects(
    summaries: Sequence[CentreYearSummary], min_information: Optional[float] = None
) -> Tuple[List[CrudeEffect], List[ExclusionRecord]]:
    """Crude effects for all summaries; uninformative ones become exclusions."""
    crudes: List[CrudeEffect] = []
    exclusions: List[ExclusionRecord] = []
    for summary in summaries:
        try:
            crudes.append(crude_effect(summary, min_information))
        except UninformativeCentreError as e:
            logger.warning(f"Excluded: {e.message}")
            exclusions.append(
                ExclusionRecord(
                    centre_id=summary.centre_id,
                    year=summary.year,
                    reason="information below threshold",
                    information=summary.information,
                )
            )
    return crudes, exclusions


def w_statistic(summary: CentreYearSummary) -> Tuple[float, float]:
    """W = (O - E) / n with standard error sqrt(var) / n."""
    w = (summary.observed - summary.expected) / summary.n
    se = np.sqrt(summary.information) / summary.n
    return float(w), float(se)


def confidence_interval(crude: CrudeEffect, level: Optional[float] = None) -> Tuple[float, float]:
    """theta_hat +/- z * s."""
    level = settings.CONFIDENCE_LEVEL if level is None else level
    if not 0 <= level < 1:
        raise InputValidationError(f"Level must lie in [0, 1): {level}")
    half = norm.ppf((1.0 + level) / 2.0) * np.sqrt(crude.s2)
    return float(crude.theta_hat - half), float(crude.theta_hat + half)


def offset_loglik(theta: float, outcomes: np.ndarray, offsets: np.ndarray) -> float:
    """Exact Bernoulli log-likelihood of one centre with fixed offsets X'beta."""
    eta = np.asarray(offsets, dtype=float) + theta
    return float(np.sum(np.asarray(outcomes) * eta - np.logaddexp(0.0, eta)))


def exact_centre_effect(
    outcomes: np.ndarray, offsets: np.ndarray, tol: float = 1e-12, max_iter: int = 100
) -> float:
    """
    Maximum likelihood theta of one centre by 1-D Newton.

    Raises:
        SeparationError: all or none of the outcomes are events
    """
    y = np.asarray(outcomes, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    if y.sum() <= 0 or y.sum() >= len(y):
        raise SeparationError("Centre effect is unbounded for a constant outcome", last_iterate=0.0)

    theta = 0.0
    ll = offset_loglik(theta, y, offsets)
    for _ in range(max_iter):
        prob = expit(offsets + theta)
        score = float(np.sum(y - prob))
        info = float(np.sum(prob * (1.0 - prob)))
        if abs(score) < tol:
            return theta
        step = score / info
        while offset_loglik(theta + step, y, offsets) < ll and abs(step) > 1e-15:
            step *= 0.5
        theta += step
        ll = offset_loglik(theta, y, offsets)
    raise ConvergenceError("Newton iteration for the centre effect did not converge", theta, max_iter)


def taylor_check(patients: pd.DataFrame, beta: BetaModel) -> pd.DataFrame:
    """Crude against exact centre effects for every centre-year."""
    offsets = linear_predictor(patients, beta)
    frame = patients.assign(_offset=offsets, centre_id=patients["centre_id"].astype(str))
    rows = []
    for (centre_id, year), group in frame.groupby(["centre_id", "year"], sort=True):
        y = group["outcome"].to_numpy(dtype=float)
        prob = expit(group["_offset"].to_numpy())
        information = float(np.sum(prob * (1.0 - prob)))
        crude = (y.sum() - prob.sum()) / information if information > 0 else np.nan
        try:
            exact = exact_centre_effect(y, group["_offset"].to_numpy())
        except ConvergenceError:
            exact = np.nan
        rows.append(
            {
                "centre_id": centre_id,
                "year": int(year),
                "theta_hat": crude,
                "theta_exact": exact,
                "difference": crude - exact,
            }
        )
    return pd.DataFrame(rows, columns=["centre_id", "year", "theta_hat", "theta_exact", "difference"])


def score_patients(patients: Patients, per_year: bool = False) -> ScoringResult:
    """
    Full stage-1 pipeline for one stratum.

    Args:
        patients: Patient table
        per_year: Re-estimate the coefficients each year

    Returns:
        ScoringResult with fitted models, summaries, crudes and exclusions
    """
    patients = patients_frame(patients)
    check_patients(patients)
    betas: Dict[str, BetaModel] = {}
    summaries: List[CentreYearSummary] = []

    if per_year:
        for year, group in patients.groupby("year", sort=True):
            beta = fit_logistic(group)
            betas[str(int(year))] = beta
            summaries.extend(summarize(group, beta))
        summaries.sort(key=lambda s: (s.centre_id, s.year))
    else:
        beta = fit_logistic(patients)
        betas["pooled"] = beta
        summaries = summarize(patients, beta)

    crudes, exclusions = crude_effects(summaries)
    logger.info(
        f"Scored {len(summaries)} centre-years: {len(crudes)} crude effects, "
        f"{len(exclusions)} excluded"
    )
    return ScoringResult(betas=betas, summaries=summaries, crudes=crudes, exclusions=exclusions)
