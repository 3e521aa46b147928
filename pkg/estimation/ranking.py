"""
Ranking measures from normal posterior (or predictive) summaries.

Expected ranks are reported as they are and never re-ranked; the expected
percentile EPC is the headline measure and its spread gives rankability.
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm, rankdata

from app.core.exceptions import InputValidationError
from app.schemas.prior import PosteriorSummary, PriorEstimate
from app.schemas.ranking import RankabilityReport, RankingRow
from app.schemas.stage1 import CrudeEffect

logger = logging.getLogger("estimation")

UNIFORM_PERCENTILE_VARIANCE = 100.0**2 / 12.0


def expected_rank_arrays(ebe: np.ndarray, pv: np.ndarray) -> np.ndarray:
    """ER_i = 1 + sum_{j != i} Phi((ebe_i - ebe_j) / sqrt(pv_i + pv_j))."""
    ebe = np.asarray(ebe, dtype=float)
    pv = np.asarray(pv, dtype=float)
    if ebe.size < 1:
        raise InputValidationError("Expected ranks need at least one centre")

    diff = ebe[:, None] - ebe[None, :]
    sd = np.sqrt(pv[:, None] + pv[None, :])
    degenerate = sd == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        prob = norm.cdf(diff / np.where(degenerate, 1.0, sd))

    if degenerate.any():
        # Point-mass pairs: indicator, 0.5 for exact ties
        prob = np.where(degenerate, np.where(diff == 0.0, 0.5, (diff > 0.0).astype(float)), prob)
        ties = degenerate & (diff == 0.0)
        np.fill_diagonal(ties, False)
        if ties.any():
            logger.info(f"{int(ties.sum()) // 2} degenerate tied pair(s) counted as 0.5")

    np.fill_diagonal(prob, 0.0)
    return 1.0 + prob.sum(axis=1)


def expected_rank(posteriors: Sequence[PosteriorSummary]) -> np.ndarray:
    """Closed-form expected ranks of a set of posteriors."""
    return expected_rank_arrays(
        np.array([p.ebe for p in posteriors]), np.array([p.pv for p in posteriors])
    )


def pcer(er: np.ndarray, n: Optional[int] = None) -> np.ndarray:
    """Percentiles based on expected ranks, 100 (ER - 0.5) / n."""
    er = np.asarray(er, dtype=float)
    n = er.size if n is None else n
    return 100.0 * (er - 0.5) / n


def expected_percentiles(
    ebe: np.ndarray, pv: np.ndarray, mu: Union[float, np.ndarray], tau2: float
) -> np.ndarray:
    """EPC_i = 100 Phi((ebe_i - mu) / sqrt(tau2 + pv_i)); 50 where the variance is 0."""
    ebe = np.asarray(ebe, dtype=float)
    total = tau2 + np.asarray(pv, dtype=float)
    degenerate = total <= 0.0
    if degenerate.any():
        logger.info(f"{int(degenerate.sum())} centre(s) with zero prior and posterior variance get EPC 50")
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (ebe - mu) / np.sqrt(np.where(degenerate, 1.0, total))
    return np.where(degenerate, 50.0, 100.0 * norm.cdf(z))


def epc(post: PosteriorSummary, prior: PriorEstimate) -> float:
    """Expected percentile of one centre in the population of centres."""
    return float(expected_percentiles(np.array([post.ebe]), np.array([post.pv]), prior.mu, prior.tau2)[0])


def rankability(epc_values: Sequence[float]) -> RankabilityReport:
    """RA = 12 var(EPC) / 100^2 with the population variance."""
    values = np.asarray(epc_values, dtype=float)
    if values.size < 1:
        raise InputValidationError("Rankability needs at least one centre")
    return RankabilityReport(ra=float(np.var(values) / UNIFORM_PERCENTILE_VARIANCE), n=int(values.size))


def crude_percentile(values: Sequence[float]) -> np.ndarray:
    """Midrank percentiles 100 (rank - 0.5) / n, ties averaged."""
    values = np.asarray(values, dtype=float)
    return 100.0 * (rankdata(values, method="average") - 0.5) / values.size


def normal_rankability(rho: float) -> float:
    """
    Rankability of a normal-normal model with equal error variances.

    With proportion true variation rho the EPC values are
    Phi(z) with var(z) = rho / (2 - rho), which gives
    RA = (6 / pi) arcsin(rho / 2).
    """
    return float(6.0 / np.pi * np.arcsin(rho / 2.0))


def ranking_from_normals(
    centre_ids: Sequence[str],
    means: np.ndarray,
    variances: np.ndarray,
    mu: Union[float, np.ndarray],
    tau2: float,
    crude_values: Optional[np.ndarray] = None,
) -> Tuple[List[RankingRow], RankabilityReport, np.ndarray]:
    """
    Ranking rows for centres with N(mean, variance) laws.

    Rows come back sorted by mean ascending, ties by centre_id.

    Returns:
        Tuple of (rows, rankability report, EPC in input order)
    """
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    n = means.size

    er = expected_rank_arrays(means, variances)
    pc = pcer(er, n)
    epc_values = expected_percentiles(means, variances, mu, tau2)
    mean_pct = crude_percentile(means)
    crude_pct = crude_percentile(crude_values) if crude_values is not None else None

    rows = [
        RankingRow(
            centre_id=centre_ids[i],
            crude_pct=None if crude_pct is None else float(crude_pct[i]),
            ebe_pct=float(mean_pct[i]),
            er=float(er[i]),
            pcer=float(pc[i]),
            epc=float(epc_values[i]),
        )
        for i in range(n)
    ]
    order = sorted(range(n), key=lambda i: (means[i], centre_ids[i]))
    return [rows[i] for i in order], rankability(epc_values), epc_values


def build_ranking(
    crudes: Sequence[CrudeEffect],
    posteriors: Sequence[PosteriorSummary],
    prior: PriorEstimate,
) -> Tuple[List[RankingRow], RankabilityReport]:
    """Ranking table for one year's posteriors."""
    if [c.centre_id for c in crudes] != [p.centre_id for p in posteriors]:
        raise InputValidationError("Crude effects and posteriors must list the same centres")
    rows, report, _ = ranking_from_normals(
        [p.centre_id for p in posteriors],
        np.array([p.ebe for p in posteriors]),
        np.array([p.pv for p in posteriors]),
        prior.mu,
        prior.tau2,
        crude_values=np.array([c.theta_hat for c in crudes]),
    )
    return rows, report
