"""
Per-stratum pipelines behind the score, rank and longitudinal commands.

Each pipeline reads one stratum's table, writes its files through an
OutputWriter and returns a small summary for cross-stratum reporting.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from app.core.exceptions import InputValidationError
from app.schemas.longitudinal import CovarianceStructure, LongitudinalModel
from app.schemas.run import InputMode, RunConfig
from app.schemas.stage1 import CentreYearSummary, CrudeEffect, ScoringResult
from app.services.table_service import TableService
from estimation import eb_univariate, longitudinal, ranking, stage1
from worker.data_handler import OutputWriter

logger = logging.getLogger(__name__)

Log = Callable[[str], None]


# --- stage 1 ---------------------------------------------------------------


def _score(frame: pd.DataFrame, config: RunConfig) -> Tuple[Optional[ScoringResult], List[CentreYearSummary], list, list]:
    """Crude effects from any input mode: (scoring, summaries, crudes, exclusions)."""
    if config.mode == InputMode.PATIENT:
        result = stage1.score_patients(frame, per_year=config.beta_per_year)
        return result, result.summaries, result.crudes, result.exclusions
    if config.mode == InputMode.SUMMARY:
        summaries = sorted(TableService.summaries_from_frame(frame), key=lambda s: (s.centre_id, s.year))
        crudes, exclusions = stage1.crude_effects(summaries)
        return None, summaries, crudes, exclusions
    crudes = sorted(TableService.crudes_from_frame(frame), key=lambda c: (c.centre_id, c.year))
    return None, [], crudes, []


def crude_frame(crudes: List[CrudeEffect]) -> pd.DataFrame:
    return pd.DataFrame(
        [c.model_dump() for c in crudes], columns=["centre_id", "year", "theta_hat", "s2"]
    )


def _beta_frame(result: ScoringResult) -> pd.DataFrame:
    rows = []
    for label, beta in result.betas.items():
        for name, coef, se in zip(beta.covariate_names, beta.coefficients, beta.standard_errors):
            rows.append(
                {
                    "model": label,
                    "covariate": name,
                    "coefficient": coef,
                    "std_error": se,
                    "converged": beta.converged,
                    "iterations": beta.iterations,
                    "log_likelihood": beta.log_likelihood,
                }
            )
    return pd.DataFrame(rows)


def _summary_frame(summaries: List[CentreYearSummary], crudes: List[CrudeEffect], level: float) -> pd.DataFrame:
    by_key = {(c.centre_id, c.year): c for c in crudes}
    rows = []
    for s in summaries:
        w, w_se = stage1.w_statistic(s)
        crude = by_key.get((s.centre_id, s.year))
        lo, hi = stage1.confidence_interval(crude, level) if crude else (np.nan, np.nan)
        rows.append(
            {
                **s.model_dump(),
                "theta_hat": crude.theta_hat if crude else np.nan,
                "s2": crude.s2 if crude else np.nan,
                "w": w,
                "w_se": w_se,
                "ci_lo": lo,
                "ci_hi": hi,
            }
        )
    return pd.DataFrame(rows)


def run_score(frame: pd.DataFrame, config: RunConfig, writer: OutputWriter, log: Log) -> dict:
    """Stage 1 for one stratum: crude.csv, summary.csv, exclusions.csv and beta.csv."""
    if config.mode == InputMode.CRUDE:
        raise InputValidationError("score needs patient or summary input, not crude effects")

    result, summaries, crudes, exclusions = _score(frame, config)
    log(f"{len(summaries)} centre-years, {len(crudes)} crude effects, {len(exclusions)} excluded")

    writer.write_csv(crude_frame(crudes), "crude.csv")
    writer.write_csv(_summary_frame(summaries, crudes, config.level), "summary.csv")
    writer.write_csv(
        pd.DataFrame([e.model_dump() for e in exclusions], columns=["centre_id", "year", "reason", "information"]),
        "exclusions.csv",
    )
    if result is not None:
        writer.write_csv(_beta_frame(result), "beta.csv")
        if not config.beta_per_year:
            writer.write_csv(stage1.taylor_check(frame, result.betas["pooled"]), "taylor_check.csv")
    return {"n_crudes": len(crudes), "n_excluded": len(exclusions)}


# --- univariate ranking ----------------------------------------------------


def _group_by_year(crudes: List[CrudeEffect]) -> Dict[int, List[CrudeEffect]]:
    years: Dict[int, List[CrudeEffect]] = {}
    for crude in crudes:
        years.setdefault(crude.year, []).append(crude)
    return {year: sorted(group, key=lambda c: c.centre_id) for year, group in sorted(years.items())}


def _interval_frame(year: int, ids, estimates, bounds) -> pd.DataFrame:
    frame = pd.DataFrame(
        {
            "year": year,
            "centre_id": list(ids),
            "estimate": list(estimates),
            "lo": [b[0] for b in bounds],
            "hi": [b[1] for b in bounds],
        }
    )
    return frame.sort_values(["estimate", "centre_id"], kind="mergesort")


def _rank_year(
    year: int,
    crudes: List[CrudeEffect],
    config: RunConfig,
    covariates: Optional[pd.DataFrame],
    log: Log,
) -> Dict[str, pd.DataFrame]:
    prior = eb_univariate.fit_prior(crudes, config.estimator)
    posts = eb_univariate.posteriors(crudes, prior)
    rows, report = ranking.build_ranking(crudes, posts, prior)
    rho = eb_univariate.proportion_true_variation(prior, crudes)
    tau2_lo, tau2_hi = eb_univariate.tau2_profile_ci(crudes, config.level)

    log(
        f"year {year}: n={len(crudes)} mu={prior.mu:.4g} tau2={prior.tau2:.4g} "
        f"rho={rho:.3f} RA={report.ra:.3f}"
    )
    if not prior.converged:
        log(f"year {year}: prior EM stopped at {prior.iterations} iterations without converging")

    ids = [c.centre_id for c in crudes]
    out = {
        "ranking": pd.DataFrame([{"year": year, **r.model_dump()} for r in rows]),
        "summary": pd.DataFrame(
            [
                {
                    "year": year,
                    "ra": report.ra,
                    "n": report.n,
                    "rho": rho,
                    "mu": prior.mu,
                    "tau2": prior.tau2,
                    "tau2_lo": tau2_lo,
                    "tau2_hi": tau2_hi,
                    "ra_normal": ranking.normal_rankability(rho),
                    "estimator": prior.method.value,
                    "at_boundary": prior.at_boundary,
                    "converged": prior.converged,
                }
            ]
        ),
        "report": pd.DataFrame(
            [
                {
                    "year": year,
                    "centre_id": c.centre_id,
                    "theta_hat": c.theta_hat,
                    "s2": c.s2,
                    "ebe": p.ebe,
                    "pv": p.pv,
                    "shrinkage": p.shrinkage,
                    "ci_lo": ci[0],
                    "ci_hi": ci[1],
                    "ppi_lo": ppi[0],
                    "ppi_hi": ppi[1],
                }
                for c, p, ci, ppi in zip(
                    crudes,
                    posts,
                    [stage1.confidence_interval(c, config.level) for c in crudes],
                    [eb_univariate.posterior_interval(p, config.level) for p in posts],
                )
            ]
        ),
        "intervals_crude": _interval_frame(
            year, ids, [c.theta_hat for c in crudes], [stage1.confidence_interval(c, config.level) for c in crudes]
        ),
        "intervals_posterior": _interval_frame(
            year, ids, [p.ebe for p in posts], [eb_univariate.posterior_interval(p, config.level) for p in posts]
        ),
        "percentiles": pd.DataFrame(
            [
                {
                    "year": year,
                    "centre_id": r.centre_id,
                    "crude_pct": r.crude_pct,
                    "ebe_pct": r.ebe_pct,
                    "pcer": r.pcer,
                    "epc": r.epc,
                }
                for r in sorted(rows, key=lambda r: r.centre_id)
            ]
        ),
    }

    grid = [("lower", tau2_lo), ("mle", prior.tau2), ("upper", tau2_hi)]
    grid = [(label, value) for label, value in grid if math.isfinite(value)]
    sweep = eb_univariate.sensitivity_sweep(crudes, [value for _, value in grid])
    out["sensitivity"] = pd.DataFrame(
        [
            {"year": year, "label": label, "tau2": row.tau2, "mu": row.mu, "ra": row.ra}
            for (label, _), row in zip(grid, sweep)
        ]
    )

    if covariates is not None:
        fit = eb_univariate.fit_prior_with_covariates(crudes, covariates, config.level)
        out["covariate_prior"] = pd.DataFrame(
            [
                *({"year": year, "term": n, "estimate": g} for n, g in zip(fit.covariate_names, fit.gamma)),
                {"year": year, "term": "tau2", "estimate": fit.tau2},
            ]
        )
        out["intervals_tolerance"] = pd.DataFrame(
            {
                "year": year,
                "centre_id": fit.centre_ids,
                "fitted_mean": fit.fitted_means,
                "ebe": [p.ebe for p in fit.posteriors],
                "lo": [t[0] for t in fit.tolerance_intervals],
                "hi": [t[1] for t in fit.tolerance_intervals],
            }
        )
        log(f"year {year}: covariate prior tau2={fit.tau2:.4g} against {prior.tau2:.4g} without covariates")
    return out


def _overview_rows(summaries: List[CentreYearSummary], year: int) -> Dict[str, float]:
    chosen = [s for s in summaries if s.year == year]
    if not chosen:
        return {"mean_patients": np.nan, "event_rate": np.nan}
    patients = sum(s.n for s in chosen)
    return {
        "mean_patients": patients / len(chosen),
        "event_rate": sum(s.observed for s in chosen) / patients,
    }


def run_rank(frame: pd.DataFrame, config: RunConfig, writer: OutputWriter, log: Log) -> dict:
    """
    Univariate ranking for every year of one stratum.

    Writes ranking.csv, ranking_summary.csv, report.csv, intervals_crude.csv,
    intervals_posterior.csv, percentiles.csv and sensitivity.csv, plus
    covariate_prior.csv and intervals_tolerance.csv with centre covariates.
    """
    _, summaries, crudes, exclusions = _score(frame, config)
    if exclusions:
        log(f"{len(exclusions)} centre-year(s) excluded for lack of information")
    covariates = TableService.load_covariates(config.centre_covariates) if config.centre_covariates else None

    tables: Dict[str, List[pd.DataFrame]] = {}
    overview = []
    for year, group in _group_by_year(crudes).items():
        if len(group) < 2:
            log(f"year {year}: only {len(group)} centre, not ranked")
            continue
        for name, table in _rank_year(year, group, config, covariates, log).items():
            tables.setdefault(name, []).append(table)
        summary = tables["summary"][-1].iloc[0]
        overview.append(
            {
                "year": year,
                "n_centres": len(group),
                **_overview_rows(summaries, year),
                "mu": summary["mu"],
                "tau2": summary["tau2"],
                "rho": summary["rho"],
                "ra": summary["ra"],
            }
        )

    if not tables:
        raise InputValidationError("No year has at least 2 centres to rank")
    for name, parts in tables.items():
        target = "ranking_summary" if name == "summary" else name
        writer.write_csv(pd.concat(parts, ignore_index=True), f"{target}.csv")
    return {"overview": overview}


# --- longitudinal ----------------------------------------------------------


def _fit_or_load(panel, config: RunConfig, log: Log) -> List[LongitudinalModel]:
    if config.model_fixture is not None:
        model = TableService.load_model_fixture(config.model_fixture)
        log(f"Loaded {model.structure.value} model from {config.model_fixture}; fitting skipped")
        return [model]
    models = []
    for structure in config.structures:
        model = longitudinal.fit_model(panel, structure)
        log(
            f"{structure.value}: loglik={model.log_likelihood:.4f} params={model.n_params} "
            f"iterations={model.iterations} converged={model.converged}"
        )
        models.append(model)
    return models


def _comparison_row(model: LongitudinalModel, extended) -> dict:
    stats = longitudinal.model_fit_stats(model)
    return {
        "structure": model.structure.value,
        "log_likelihood": stats.log_likelihood,
        "n_params": stats.n_params,
        "aic": stats.aic,
        "aic_textbook": stats.aic_textbook,
        "next_year": extended.next_year if extended else np.nan,
        "mu_next": extended.mu_next if extended else np.nan,
        "tau2_next": extended.tau2_next if extended else np.nan,
    }


def run_longitudinal(frame: Optional[pd.DataFrame], config: RunConfig, writer: OutputWriter, log: Log) -> dict:
    """
    Fit, extrapolate and predict for one stratum.

    Writes model_<structure>.json, comparison.csv and, when panel data are
    present, predictions_<structure>.csv, predicted_intervals_<structure>.csv
    and paired_epc.csv for two or more predictive rankings.
    """
    panel = None
    if frame is not None:
        _, _, crudes, _ = _score(frame, config)
        n_years = len({c.year for c in crudes})
        if n_years < 2:
            raise InputValidationError(
                f"Longitudinal modelling needs at least 2 years, got {n_years}; use the rank command"
            )
        panel = longitudinal.assemble_panel(crudes)
        log(f"Panel with {panel.n_centres} centres over years {panel.years}")
    elif config.model_fixture is None:
        raise InputValidationError("longitudinal needs --input or --model-fixture")

    comparison = []
    paired: Dict[str, pd.Series] = {}
    predictive_ra: Dict[str, float] = {}
    for model in _fit_or_load(panel, config, log):
        label = model.structure.value
        extended = None
        if model.structure in longitudinal.STRUCTURED:
            extended = longitudinal.extrapolate(model, config.extrapolation)
            log(f"{label}: year {extended.next_year} mean={extended.mu_next:.4g} variance={extended.tau2_next:.4g}")
        else:
            log(f"{label}: no extrapolation for an unstructured covariance")
        writer.write_json(longitudinal.model_report(model, extended), f"model_{label}.json")
        comparison.append(_comparison_row(model, extended))

        if extended is None or panel is None:
            continue
        if list(panel.years) != list(model.years):
            log(f"{label}: model years {model.years} differ from panel years; no predictions")
            continue
        predictions = longitudinal.predict_panel(extended, panel)
        rows, report = longitudinal.predictive_ranking(predictions, extended.mu_next, extended.tau2_next)
        epc_by_centre = {r.centre_id: r.epc for r in rows}
        predictive_ra[label] = report.ra
        log(f"{label}: predictive RA={report.ra:.3f}")

        writer.write_csv(
            pd.DataFrame(
                {
                    "centre_id": [p.centre_id for p in predictions],
                    "pred_mean": [p.mean for p in predictions],
                    "pred_var": [p.variance for p in predictions],
                    "years_used": [";".join(str(y) for y in p.years_used) for p in predictions],
                    "epc": [epc_by_centre[p.centre_id] for p in predictions],
                }
            ),
            f"predictions_{label}.csv",
        )
        bounds = [
            eb_univariate.posterior_interval_from(p.mean, p.variance, config.level) for p in predictions
        ]
        writer.write_csv(
            _interval_frame(extended.next_year, [p.centre_id for p in predictions], [p.mean for p in predictions], bounds),
            f"predicted_intervals_{label}.csv",
        )
        paired[label] = pd.Series(epc_by_centre)

    writer.write_csv(pd.DataFrame(comparison), "comparison.csv")
    if len(paired) >= 2:
        frame_epc = pd.DataFrame({f"epc_{k}": v for k, v in paired.items()})
        frame_epc.index.name = "centre_id"
        writer.write_csv(frame_epc.sort_index().reset_index(), "paired_epc.csv")
    return {"predictive_ra": predictive_ra}


PIPELINES = {
    "score": run_score,
    "rank": run_rank,
    "longitudinal": run_longitudinal,
}
