"""
Synthetic monitoring data and Monte-Carlo oracles.

Every draw comes from a Philox stream keyed by (seed, label, centre), so a
centre's data do not depend on how many other centres are generated or in
which order.
"""

import hashlib
import logging
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit, logit
from scipy.stats import rankdata

from app.core.exceptions import InputValidationError
from app.schemas.prior import PosteriorSummary
from app.schemas.scenario import PanelPrior, ScenarioConfig, SyntheticDataset
from app.schemas.stage1 import CrudeEffect
from estimation.stage1 import score_patients

logger = logging.getLogger("estimation")


def substream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for a labelled part of a simulation."""
    key = tuple(
        int.from_bytes(hashlib.sha256(str(label).encode()).digest()[:4], "little") for label in labels
    )
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def centre_ids(n_centres: int) -> List[str]:
    width = max(3, len(str(n_centres)))
    return [f"C{i + 1:0{width}d}" for i in range(n_centres)]


def _prior_moments(config: ScenarioConfig) -> Tuple[np.ndarray, np.ndarray]:
    J = len(config.years)
    if isinstance(config.prior, PanelPrior):
        return np.asarray(config.prior.M, dtype=float), np.asarray(config.prior.T, dtype=float)
    mu = np.broadcast_to(np.asarray(config.prior.mu, dtype=float), (J,)).copy()
    tau2 = np.broadcast_to(np.asarray(config.prior.tau2, dtype=float), (J,))
    return mu, np.diag(tau2)


def _true_effects(config: ScenarioConfig, ids: Sequence[str]) -> np.ndarray:
    M, T = _prior_moments(config)
    effects = np.empty((len(ids), len(config.years)))
    for i, centre in enumerate(ids):
        rng = substream(config.seed, "effect", centre)
        effects[i] = rng.multivariate_normal(M, T, method="eigh")
    return effects


def _patient_count(config: ScenarioConfig, rng: np.random.Generator) -> int:
    count = config.patients_per_centre_year
    if count.distribution == "fixed":
        return int(round(count.mean))
    return int(rng.poisson(count.mean))


def _simulate_patients(config: ScenarioConfig, ids: Sequence[str], effects: np.ndarray) -> pd.DataFrame:
    intercept = float(logit(config.baseline_rate))
    slopes = np.asarray(config.covariate_effects, dtype=float)
    names = [f"x{k + 2}" for k in range(slopes.size)]
    frames = []
    for i, centre in enumerate(ids):
        for j, year in enumerate(config.years):
            rng = substream(config.seed, "patients", centre, year)
            n = _patient_count(config, rng)
            if n == 0:
                continue
            X = rng.standard_normal((n, slopes.size))
            eta = intercept + X @ slopes + effects[i, j]
            outcome = (rng.random(n) < expit(eta)).astype(int)
            frame = pd.DataFrame(X, columns=names)
            frame.insert(0, "x1", 1.0)
            frame.insert(0, "outcome", outcome)
            frame.insert(0, "year", year)
            frame.insert(0, "centre_id", centre)
            frames.append(frame)
    if not frames:
        raise InputValidationError("Scenario produced no patients")
    return pd.concat(frames, ignore_index=True)


def _simulate_crudes(config: ScenarioConfig, ids: Sequence[str], effects: np.ndarray) -> List[CrudeEffect]:
    p = config.baseline_rate
    crudes = []
    for i, centre in enumerate(ids):
        for j, year in enumerate(config.years):
            rng = substream(config.seed, "crude", centre, year)
            n = _patient_count(config, rng)
            if n == 0:
                continue
            s2 = 1.0 / (n * p * (1.0 - p))
            crudes.append(
                CrudeEffect(
                    centre_id=centre,
                    year=year,
                    theta_hat=float(effects[i, j] + np.sqrt(s2) * rng.standard_normal()),
                    s2=s2,
                )
            )
    return crudes


def simulate(config: ScenarioConfig) -> SyntheticDataset:
    """
    Draw true effects from the prior, then either patients or crude effects.

    Patient mode: Y ~ Bernoulli(expit(logit(baseline_rate) + x'beta + theta))
    with standard-normal covariates x2.., and crude effects derived by
    scoring the patients. Crude mode: theta_hat ~ N(theta, s2) with
    s2 = 1 / (n p (1 - p)) at the baseline rate.
    """
    ids = centre_ids(config.n_centres)
    effects = _true_effects(config, ids)
    if config.mode == "crude":
        return SyntheticDataset(
            centres=ids,
            years=list(config.years),
            true_effects=effects,
            crudes=_simulate_crudes(config, ids, effects),
        )

    patients = _simulate_patients(config, ids, effects)
    scoring = score_patients(patients)
    return SyntheticDataset(
        centres=ids,
        years=list(config.years),
        true_effects=effects,
        patients=patients,
        crudes=scoring.crudes,
    )


def mc_expected_rank(
    posteriors: Sequence[PosteriorSummary], n_draws: int, seed: int, chunk: int = 10_000
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Monte-Carlo expected ranks: draw every centre independently, rank per draw.

    Returns:
        Tuple of (expected ranks, Monte-Carlo standard errors)
    """
    if n_draws < 2:
        raise InputValidationError("mc_expected_rank needs at least 2 draws")
    ebe = np.array([p.ebe for p in posteriors])
    sd = np.sqrt(np.array([p.pv for p in posteriors]))
    rng = substream(seed, "mc_expected_rank")

    total = np.zeros(ebe.size)
    total_sq = np.zeros(ebe.size)
    done = 0
    while done < n_draws:
        size = min(chunk, n_draws - done)
        draws = ebe + sd * rng.standard_normal((size, ebe.size))
        ranks = rankdata(draws, method="average", axis=1)
        total += ranks.sum(axis=0)
        total_sq += (ranks**2).sum(axis=0)
        done += size

    er = total / n_draws
    var = np.clip(total_sq / n_draws - er**2, 0.0, None) * n_draws / (n_draws - 1)
    return er, np.sqrt(var / n_draws)


def mvn_condition_oracle(
    joint_mean: np.ndarray,
    joint_cov: np.ndarray,
    observed_indices: Sequence[int],
    observed_values: Sequence[float],
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Conditional law of the unobserved coordinates through the precision matrix.

    With Q = Sigma^-1 the conditional covariance is Q_uu^-1 and the mean is
    mu_u - Q_uu^-1 Q_uo (x_o - mu_o).

    Returns:
        Tuple of (conditional mean, conditional covariance) of the unobserved
        coordinates in index order
    """
    mean = np.asarray(joint_mean, dtype=float)
    cov = np.asarray(joint_cov, dtype=float)
    obs = np.asarray(observed_indices, dtype=int)
    if obs.size == 0:
        return mean.copy(), cov.copy()
    rest = np.setdiff1d(np.arange(mean.size), obs)

    precision = np.linalg.inv(cov)
    q_uu = precision[np.ix_(rest, rest)]
    q_uo = precision[np.ix_(rest, obs)]
    cond_cov = np.linalg.inv(q_uu)
    shift = np.asarray(observed_values, dtype=float) - mean[obs]
    cond_mean = mean[rest] - cond_cov @ q_uo @ shift
    return cond_mean, (cond_cov + cond_cov.T) / 2.0
