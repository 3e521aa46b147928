"""Tests for the patient-level logistic model and crude effects."""

import numpy as np
import pandas as pd
import pytest
from scipy.special import expit

from app.core.exceptions import InputValidationError, RankDeficientError, SeparationError
from app.schemas.stage1 import CentreYearSummary, CrudeEffect, PatientRecord
from estimation import stage1


class TestCheckPatients:
    """Validation of patient tables."""

    def test_missing_column_is_named(self, patients):
        """A missing required column is reported by name."""
        with pytest.raises(InputValidationError, match="outcome"):
            stage1.check_patients(patients.drop(columns=["outcome"]))

    def test_non_binary_outcome(self, patients):
        """Outcomes must be 0/1."""
        bad = patients.assign(outcome=patients["outcome"] * 2)
        with pytest.raises(InputValidationError, match="binary"):
            stage1.check_patients(bad)

    def test_x1_must_be_constant(self, patients):
        """x1 is the intercept column."""
        bad = patients.assign(x1=np.arange(len(patients), dtype=float))
        with pytest.raises(InputValidationError, match="x1"):
            stage1.check_patients(bad)

    def test_returns_covariates_in_order(self, patients):
        assert stage1.check_patients(patients) == ["x1", "x2"]


class TestFitLogistic:
    """IRLS fit of the patient-mix model."""

    def test_recovers_coefficients(self, rng):
        """Large sample recovers the generating coefficients."""
        n = 20_000
        x2 = rng.standard_normal(n)
        y = (rng.random(n) < expit(-0.5 + 1.2 * x2)).astype(float)
        X = np.column_stack([np.ones(n), x2])

        fit = stage1.fit_logistic_arrays(X, y, ["x1", "x2"])

        assert fit.converged
        for estimate, se, truth in zip(fit.coefficients, fit.standard_errors, [-0.5, 1.2]):
            assert abs(estimate - truth) < 4 * se

    def test_loglik_trace_non_decreasing(self, patients):
        """Step-halving keeps every iterate at least as good as the last."""
        fit = stage1.fit_logistic(patients)
        assert np.all(np.diff(fit.loglik_trace) >= -1e-10)

    def test_collinear_column_named(self, patients):
        """Rank deficiency names the collinear column."""
        bad = patients.assign(x3=2.0 * patients["x2"])
        with pytest.raises(RankDeficientError, match="x3"):
            stage1.fit_logistic(bad)

    def test_constant_outcome_raises_separation(self, patients):
        with pytest.raises(SeparationError):
            stage1.fit_logistic(patients.assign(outcome=0))

    def test_perfect_separation_detected(self):
        """Outcome determined by the covariate makes the predictor diverge."""
        x2 = np.linspace(-2, 2, 40)
        X = np.column_stack([np.ones(40), x2])
        y = (x2 > 0).astype(float)
        with pytest.raises(SeparationError) as excinfo:
            stage1.fit_logistic_arrays(X, y, ["x1", "x2"])
        assert excinfo.value.last_iterate is not None

    def test_intercept_only_matches_logit_of_rate(self):
        y = np.array([1, 0, 0, 1, 0, 0, 0, 1, 0, 0], dtype=float)
        fit = stage1.fit_logistic_arrays(np.ones((10, 1)), y, ["x1"])
        assert fit.coefficients[0] == pytest.approx(np.log(0.3 / 0.7), abs=1e-10)

    def test_patient_records_fit_like_the_table(self, patients):
        records = [
            PatientRecord(
                centre_id=r.centre_id, year=int(r.year), outcome=int(r.outcome), covariates=[float(r.x1), float(r.x2)]
            )
            for r in patients.itertuples(index=False)
        ]

        from_records = stage1.fit_logistic(records)
        from_table = stage1.fit_logistic(patients)

        assert from_records.coefficients == pytest.approx(from_table.coefficients)
        assert stage1.summarize(records, from_table) == stage1.summarize(patients, from_table)

    def test_patient_records_need_equal_covariate_lengths(self):
        records = [
            PatientRecord(centre_id="A", year=1995, outcome=1, covariates=[1.0, 0.2]),
            PatientRecord(centre_id="A", year=1995, outcome=0, covariates=[1.0]),
        ]
        with pytest.raises(InputValidationError, match="Covariate length"):
            stage1.fit_logistic(records)


class TestSummaries:
    """Per centre-year O, E and information."""

    def test_one_row_per_centre_year(self, patients):
        beta = stage1.fit_logistic(patients)
        summaries = stage1.summarize(patients, beta)

        assert len(summaries) == 16
        assert [(s.centre_id, s.year) for s in summaries] == sorted((s.centre_id, s.year) for s in summaries)

    def test_observed_minus_expected_sums_to_zero(self, patients):
        """With an intercept the pooled score equation gives sum(O - E) = 0."""
        beta = stage1.fit_logistic(patients)
        summaries = stage1.summarize(patients, beta)
        assert sum(s.observed - s.expected for s in summaries) == pytest.approx(0.0, abs=1e-6)

    def test_single_centre_gives_one_crude(self, patients):
        one = patients[(patients["centre_id"] == "C001") & (patients["year"] == 1995)]
        result = stage1.score_patients(one)
        assert len(result.crudes) == 1

    def test_information_bounds_enforced(self):
        """Information above n/4 is impossible for Bernoulli outcomes."""
        with pytest.raises(ValueError):
            CentreYearSummary(centre_id="A", year=1995, n=4, observed=1, expected=2, information=1.5)

    def test_additive_over_patient_split(self, patients):
        """Summaries of two disjoint halves add up to the summary of the union."""
        beta = stage1.fit_logistic(patients)
        even = patients.iloc[::2]
        odd = patients.iloc[1::2]

        whole = {(s.centre_id, s.year): s for s in stage1.summarize(patients, beta)}
        halves = stage1.summarize(even, beta) + stage1.summarize(odd, beta)

        for key, total in whole.items():
            parts = [s for s in halves if (s.centre_id, s.year) == key]
            assert sum(s.n for s in parts) == total.n
            assert sum(s.observed for s in parts) == pytest.approx(total.observed)
            assert sum(s.expected for s in parts) == pytest.approx(total.expected)
            assert sum(s.information for s in parts) == pytest.approx(total.information)


class TestCrudeEffect:
    """Score-statistic crude effect and exclusions."""

    def test_crude_formula(self):
        summary = CentreYearSummary(
            centre_id="A", year=1995, n=100, observed=30, expected=25, information=18.75
        )
        crude = stage1.crude_effect(summary)
        assert crude.theta_hat == pytest.approx(5 / 18.75)
        assert crude.s2 == pytest.approx(1 / 18.75)

    def test_uninformative_centre_excluded(self):
        """Information at or below the threshold becomes an exclusion record."""
        good = CentreYearSummary(centre_id="A", year=1995, n=50, observed=10, expected=12, information=9)
        empty = CentreYearSummary(centre_id="B", year=1995, n=1, observed=0, expected=1e-9, information=1e-9)

        crudes, exclusions = stage1.crude_effects([good, empty])

        assert [c.centre_id for c in crudes] == ["A"]
        assert len(exclusions) == 1
        assert exclusions[0].centre_id == "B"

    def test_w_statistic(self):
        summary = CentreYearSummary(centre_id="A", year=1995, n=100, observed=30, expected=25, information=16)
        w, se = stage1.w_statistic(summary)
        assert w == pytest.approx(0.05)
        assert se == pytest.approx(0.04)

    def test_confidence_interval_level_zero_is_a_point(self):
        crude = CrudeEffect(centre_id="A", year=1995, theta_hat=0.3, s2=0.04)
        assert stage1.confidence_interval(crude, 0.0) == pytest.approx((0.3, 0.3))

    @pytest.mark.parametrize("p", [0.1, 0.3, 0.5])
    def test_w_over_binomial_variance_matches_crude(self, p):
        """With a common patient probability p, theta_hat = W / (p (1 - p))."""
        n = 200
        summary = CentreYearSummary(
            centre_id="A", year=1995, n=n, observed=n * p + 7, expected=n * p, information=n * p * (1 - p)
        )
        w, _ = stage1.w_statistic(summary)
        crude = stage1.crude_effect(summary)
        assert w / (p * (1 - p)) == pytest.approx(crude.theta_hat, rel=0.01)

    @pytest.mark.slow
    def test_confidence_interval_coverage(self, rng):
        """Nominal 95% intervals cover a small true effect about 95% of the time."""
        n, p0, theta, replicates = 2000, 0.3, 0.1, 1000
        observed = rng.binomial(n, expit(np.log(p0 / (1 - p0)) + theta), size=replicates)

        covered = 0
        for i, o in enumerate(observed):
            summary = CentreYearSummary(
                centre_id=f"C{i}", year=1995, n=n, observed=float(o), expected=n * p0, information=n * p0 * (1 - p0)
            )
            lo, hi = stage1.confidence_interval(stage1.crude_effect(summary), 0.95)
            covered += lo <= theta <= hi

        # three binomial standard errors around 0.95
        assert abs(covered / replicates - 0.95) < 3 * np.sqrt(0.95 * 0.05 / replicates)

    def test_confidence_interval_95(self):
        crude = CrudeEffect(centre_id="A", year=1995, theta_hat=0.0, s2=0.04)
        lo, hi = stage1.confidence_interval(crude, 0.95)
        assert hi == pytest.approx(1.959964 * 0.2, rel=1e-6)
        assert lo == pytest.approx(-hi)


class TestExactLikelihood:
    """Offset-logistic likelihood as an oracle for the crude effect."""

    def test_score_and_information_identity(self, rng):
        """Finite differences at theta = 0 reproduce O - E and -var for 100 random centres."""
        for _ in range(100):
            n = int(rng.integers(5, 400))
            offsets = rng.normal(-1.0, 1.0, size=n)
            y = (rng.random(n) < expit(offsets + rng.normal(0, 0.3))).astype(float)
            prob = expit(offsets)
            o_minus_e = y.sum() - prob.sum()
            info = float(np.sum(prob * (1 - prob)))

            h1, h2 = 1e-5, 1e-4
            first = (stage1.offset_loglik(h1, y, offsets) - stage1.offset_loglik(-h1, y, offsets)) / (2 * h1)
            second = (
                stage1.offset_loglik(h2, y, offsets)
                - 2 * stage1.offset_loglik(0.0, y, offsets)
                + stage1.offset_loglik(-h2, y, offsets)
            ) / h2**2

            assert first == pytest.approx(o_minus_e, rel=1e-6, abs=1e-7)
            assert second == pytest.approx(-info, rel=1e-4)

    def test_exact_effect_solves_score_equation(self, rng):
        offsets = rng.normal(-0.5, 0.5, size=300)
        y = (rng.random(300) < expit(offsets + 0.2)).astype(float)

        theta = stage1.exact_centre_effect(y, offsets)

        assert np.sum(y - expit(offsets + theta)) == pytest.approx(0.0, abs=1e-9)

    def test_crude_close_to_exact_for_small_effects(self, patients):
        """The one-step approximation is accurate when centre effects are small."""
        beta = stage1.fit_logistic(patients)
        check = stage1.taylor_check(patients, beta)

        assert len(check) == 16
        assert check["difference"].abs().median() < 0.05
        assert check["difference"].abs().max() < 0.3

    def test_constant_centre_outcome_has_no_exact_effect(self):
        with pytest.raises(SeparationError):
            stage1.exact_centre_effect(np.zeros(10), np.zeros(10))


class TestScorePatients:
    """End-to-end stage 1."""

    def test_pooled_and_per_year_models(self, patients):
        pooled = stage1.score_patients(patients)
        per_year = stage1.score_patients(patients, per_year=True)

        assert list(pooled.betas) == ["pooled"]
        assert list(per_year.betas) == ["1994", "1995"]
        assert len(pooled.crudes) == len(per_year.crudes) == 16

    def test_summary_route_matches_patient_route(self, patients):
        """Crude effects computed from the summaries equal the patient-level pipeline."""
        result = stage1.score_patients(patients)
        crudes, _ = stage1.crude_effects(result.summaries)
        assert [c.theta_hat for c in crudes] == [c.theta_hat for c in result.crudes]

    def test_every_centre_year_accounted_for(self):
        """Each centre-year yields a crude effect or an exclusion."""
        frame = pd.DataFrame(
            {
                "centre_id": ["A"] * 6 + ["B"] * 6,
                "year": 1995,
                "outcome": [1, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0],
                "x1": 1.0,
            }
        )
        result = stage1.score_patients(frame)
        assert len(result.crudes) + len(result.exclusions) == 2
