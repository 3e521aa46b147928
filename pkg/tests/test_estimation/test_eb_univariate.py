"""Tests for the univariate empirical Bayes model."""

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.core.exceptions import InputValidationError, RankDeficientError
from app.schemas.prior import PriorEstimate, PriorMethod
from app.schemas.stage1 import CrudeEffect
from estimation import eb_univariate as eb
from estimation import ranking

crude_sets = st.integers(min_value=3, max_value=40).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(-3, 3, allow_nan=False), min_size=n, max_size=n),
        st.lists(st.floats(0.01, 2.0, allow_nan=False), min_size=n, max_size=n),
    )
)


def _prior(mu: float, tau2: float) -> PriorEstimate:
    return PriorEstimate(mu=mu, tau2=tau2, method=PriorMethod.MLE_EM, log_likelihood=0.0)


class TestFitPriorMle:
    """Maximum likelihood fit of (mu, tau2) by EM."""

    def test_equal_effects_hit_the_boundary(self, make_crudes):
        """All crude effects equal gives tau2 = 0 and mu = the common value."""
        prior = eb.fit_prior_mle(make_crudes([0.4] * 6, [0.1, 0.2, 0.3, 0.1, 0.5, 0.2]))

        assert prior.tau2 == 0.0
        assert prior.at_boundary
        assert prior.mu == pytest.approx(0.4)

    def test_equal_variances_closed_form(self, make_crudes):
        """Equal s2: tau2 = mean squared deviation - s2."""
        prior = eb.fit_prior_mle(make_crudes([-1, 1] * 5, 0.5))

        assert prior.mu == pytest.approx(0.0, abs=1e-12)
        assert prior.tau2 == pytest.approx(0.5, abs=1e-4)
        assert not prior.at_boundary

    def test_needs_two_centres(self, make_crudes):
        with pytest.raises(InputValidationError, match="2 centres"):
            eb.fit_prior_mle(make_crudes([0.1], 0.2))

    def test_iteration_cap_reported_as_not_converged(self, rng, make_crudes):
        crudes = make_crudes(rng.normal(0.0, 1.0, size=40), rng.uniform(0.05, 0.3, size=40))

        capped = eb.fit_prior_mle(crudes, tol=1e-14, max_iter=2)

        assert not capped.converged
        assert capped.iterations == 2
        assert eb.fit_prior_mle(crudes).converged

    def test_duplicate_centre_rejected(self):
        crudes = [CrudeEffect(centre_id="A", year=1995, theta_hat=t, s2=0.1) for t in (0.1, 0.2)]
        with pytest.raises(InputValidationError, match="A"):
            eb.fit_prior_mle(crudes)

    def test_recovers_at_term_regime(self, rng, make_crudes):
        """112 centres with s2 near 0.0107 recover tau2 = 0.124 within sampling error."""
        s2 = 1.0 / (rng.poisson(695, size=112) * 0.16 * 0.84)
        theta = rng.normal(0.038, np.sqrt(0.124), size=112) + rng.normal(0, np.sqrt(s2))

        prior = eb.fit_prior_mle(make_crudes(theta, s2))

        assert prior.tau2 == pytest.approx(0.124, abs=0.05)
        assert prior.mu == pytest.approx(0.038, abs=0.1)

    @settings(max_examples=50, deadline=None)
    @given(crude_sets)
    def test_em_monotone(self, data):
        """Marginal log-likelihood never decreases along the EM path."""
        theta, s2 = data
        crudes = [
            CrudeEffect(centre_id=f"C{i}", year=1995, theta_hat=t, s2=v)
            for i, (t, v) in enumerate(zip(theta, s2))
        ]
        prior = eb.fit_prior_mle(crudes)
        assert np.all(np.diff(prior.loglik_trace) >= -1e-9)

    @settings(max_examples=30, deadline=None)
    @given(crude_sets, st.floats(-5, 5), st.floats(0.2, 5))
    def test_location_scale_equivariance(self, data, shift, scale):
        """Shifting moves mu and EBE; scaling theta and s scales mu by k and tau2 by k^2."""
        theta, s2 = np.array(data[0]), np.array(data[1])

        def fit(t, v):
            crudes = [
                CrudeEffect(centre_id=f"C{i}", year=1995, theta_hat=float(a), s2=float(b))
                for i, (a, b) in enumerate(zip(t, v))
            ]
            prior = eb.fit_prior_mle(crudes)
            return prior, eb.posteriors(crudes, prior)

        base, base_post = fit(theta, s2)
        shifted, shifted_post = fit(theta + shift, s2)
        scaled, _ = fit(theta * scale, s2 * scale**2)

        tol = 1e-4 * max(1.0, base.tau2)
        assert shifted.mu == pytest.approx(base.mu + shift, abs=1e-4)
        assert shifted.tau2 == pytest.approx(base.tau2, abs=tol)
        assert scaled.mu == pytest.approx(base.mu * scale, abs=1e-4 * scale)
        assert scaled.tau2 == pytest.approx(base.tau2 * scale**2, abs=tol * scale**2)
        for a, b in zip(base_post, shifted_post):
            assert b.ebe == pytest.approx(a.ebe + shift, abs=1e-4)


class TestFitPriorMoment:
    """DerSimonian-Laird moment estimator."""

    def test_equal_effects_give_zero(self, make_crudes):
        prior = eb.fit_prior_moment(make_crudes([0.2] * 5, [0.1, 0.2, 0.3, 0.4, 0.5]))
        assert prior.tau2 == 0.0
        assert prior.method == PriorMethod.MOMENT

    def test_equal_variances_share_mu_with_mle(self, rng, make_crudes):
        crudes = make_crudes(rng.normal(0, 1, size=30), 0.3)
        assert eb.fit_prior_moment(crudes).mu == pytest.approx(eb.fit_prior_mle(crudes).mu, abs=1e-12)

    def test_close_to_mle_on_large_instance(self, rng, make_crudes):
        s2 = rng.uniform(0.05, 0.5, size=200)
        theta = rng.normal(0, np.sqrt(0.3), size=200) + rng.normal(0, np.sqrt(s2))
        crudes = make_crudes(theta, s2)

        mle, moment = eb.fit_prior_mle(crudes), eb.fit_prior_moment(crudes)

        assert moment.tau2 == pytest.approx(mle.tau2, rel=0.25)

    def test_dispatch(self, make_crudes):
        crudes = make_crudes([0.1, 0.5, -0.3], 0.1)
        assert eb.fit_prior(crudes, PriorMethod.MOMENT).method == PriorMethod.MOMENT
        assert eb.fit_prior(crudes).method == PriorMethod.MLE_EM


class TestPosterior:
    """Posterior mean, variance and intervals."""

    def test_worked_example(self):
        crude = CrudeEffect(centre_id="A", year=1995, theta_hat=0.5, s2=0.05)
        post = eb.posterior(crude, _prior(0.038, 0.124))

        assert post.ebe == pytest.approx(0.36724, abs=1e-5)
        assert post.pv == pytest.approx(0.035632, abs=1e-6)
        assert post.shrinkage == pytest.approx(0.712644, abs=1e-6)

    def test_zero_tau2_shrinks_to_mu(self, make_crudes):
        for post in eb.posteriors(make_crudes([0.3, -1.0, 2.0], 0.2), _prior(0.1, 0.0)):
            assert post.ebe == 0.1
            assert post.pv == 0.0

    def test_tiny_s2_keeps_crude(self):
        crude = CrudeEffect(centre_id="A", year=1995, theta_hat=0.7, s2=1e-12)
        post = eb.posterior(crude, _prior(0.0, 0.5))
        assert post.ebe == pytest.approx(0.7, abs=1e-9)
        assert post.pv == pytest.approx(0.0, abs=1e-9)

    def test_interval_worked_example(self):
        post = eb.posterior(CrudeEffect(centre_id="A", year=1995, theta_hat=0.5, s2=0.05), _prior(0.038, 0.124))
        lo, hi = eb.posterior_interval(post, 0.95)
        assert lo == pytest.approx(-0.0027, abs=2e-4)
        assert hi == pytest.approx(0.7372, abs=2e-4)

    def test_interval_with_zero_pv_is_a_point(self):
        post = eb.posterior(CrudeEffect(centre_id="A", year=1995, theta_hat=0.5, s2=0.05), _prior(0.0, 0.0))
        lo, hi = eb.posterior_interval(post)
        assert lo == hi == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 3), st.floats(1e-3, 3), st.floats(-3, 3), st.floats(1e-3, 3))
    def test_convexity_and_variance_bounds(self, theta, s2, mu, tau2):
        """EBE lies between mu and theta_hat; pv below both s2 and tau2."""
        post = eb.posterior(CrudeEffect(centre_id="A", year=1995, theta_hat=theta, s2=s2), _prior(mu, tau2))

        assert min(mu, theta) - 1e-12 <= post.ebe <= max(mu, theta) + 1e-12
        assert post.pv < s2
        assert post.pv < tau2
        assert post.shrinkage * s2 == pytest.approx(post.pv)

    def test_equal_s2_preserves_crude_order(self, rng, make_crudes):
        crudes = make_crudes(rng.normal(size=25), 0.2)
        posts = eb.posteriors(crudes, eb.fit_prior_mle(crudes))
        assert np.argsort([p.ebe for p in posts]).tolist() == np.argsort([c.theta_hat for c in crudes]).tolist()


class TestProportionTrueVariation:
    """rho = tau2 / (tau2 + median s2)."""

    def test_zero_tau2(self, make_crudes):
        assert eb.proportion_true_variation(_prior(0.0, 0.0), make_crudes([0, 1], [0.1, 0.2])) == 0.0

    def test_at_term_numbers(self, make_crudes):
        rho = eb.proportion_true_variation(_prior(0.0, 0.124), make_crudes([0, 0, 0], [0.01, 0.01226, 0.02]))
        assert rho == pytest.approx(0.91, abs=0.005)

    def test_very_preterm_numbers(self, make_crudes):
        rho = eb.proportion_true_variation(_prior(0.0, 0.336), make_crudes([0, 0, 0], [1.0, 1.43, 2.0]))
        assert rho == pytest.approx(0.19, abs=0.005)

    def test_even_count_averages_central_values(self, make_crudes):
        rho = eb.proportion_true_variation(_prior(0.0, 2.5), make_crudes([0] * 4, [1, 2, 3, 4]))
        assert rho == pytest.approx(0.5)


class TestCovariatePrior:
    """Centre-level covariates in the prior mean."""

    def test_no_covariates_reproduces_mle(self, rng, make_crudes):
        crudes = make_crudes(rng.normal(0, 0.7, size=30), rng.uniform(0.1, 0.4, size=30))
        covariates = pd.DataFrame(index=[c.centre_id for c in crudes])

        fit = eb.fit_prior_with_covariates(crudes, covariates)
        prior = eb.fit_prior_mle(crudes)

        assert fit.gamma == [prior.mu]
        assert fit.tau2 == prior.tau2
        assert fit.log_likelihood == prior.log_likelihood

    def test_explained_variation_leaves_no_tau2(self, rng, make_crudes):
        v = rng.normal(0, 1, size=60)
        theta = 1.0 + 0.5 * v + rng.normal(0, 0.1, size=60)
        crudes = make_crudes(theta, 0.01)
        covariates = pd.DataFrame({"size": v}, index=[c.centre_id for c in crudes])

        fit = eb.fit_prior_with_covariates(crudes, covariates)

        assert fit.tau2 < 0.005
        assert fit.gamma[1] == pytest.approx(0.5, abs=0.05)
        assert fit.covariate_names == ["intercept", "size"]

    def test_irrelevant_covariate(self, rng, make_crudes):
        """An unrelated covariate cannot lower the likelihood and barely moves tau2."""
        s2 = rng.uniform(0.05, 0.2, size=100)
        crudes = make_crudes(rng.normal(0, np.sqrt(0.3), size=100) + rng.normal(0, np.sqrt(s2)), s2)
        covariates = pd.DataFrame({"noise": rng.normal(size=100)}, index=[c.centre_id for c in crudes])

        fit = eb.fit_prior_with_covariates(crudes, covariates)
        prior = eb.fit_prior_mle(crudes)

        assert fit.log_likelihood >= prior.log_likelihood - 1e-6
        assert fit.tau2 == pytest.approx(prior.tau2, rel=0.1)

    def test_tolerance_intervals_per_centre(self, rng, make_crudes):
        crudes = make_crudes(rng.normal(size=10), 0.2)
        covariates = pd.DataFrame({"v": rng.normal(size=10)}, index=[c.centre_id for c in crudes])

        fit = eb.fit_prior_with_covariates(crudes, covariates, level=0.9)

        assert len(fit.tolerance_intervals) == 10
        for post, (lo, hi) in zip(fit.posteriors, fit.tolerance_intervals):
            assert lo <= post.ebe <= hi

    def test_collinear_covariate(self, make_crudes):
        crudes = make_crudes([0.1, 0.4, -0.2, 0.3], 0.1)
        covariates = pd.DataFrame({"flat": [2.0] * 4}, index=[c.centre_id for c in crudes])
        with pytest.raises(RankDeficientError, match="flat"):
            eb.fit_prior_with_covariates(crudes, covariates)

    def test_missing_centre_row(self, make_crudes):
        crudes = make_crudes([0.1, 0.4, -0.2], 0.1)
        covariates = pd.DataFrame({"v": [1.0, 2.0]}, index=["C001", "C002"])
        with pytest.raises(InputValidationError, match="C003"):
            eb.fit_prior_with_covariates(crudes, covariates)


class TestProfileInterval:
    """Profile-likelihood interval for tau2."""

    def test_identical_effects_include_zero(self, make_crudes):
        crudes = make_crudes([0.2] * 8, [0.01] + [1.0] * 7)
        lo, hi = eb.tau2_profile_ci(crudes)
        assert lo == 0.0
        assert hi > 0.0

    def test_brackets_mle(self, rng, make_crudes):
        s2 = rng.uniform(0.05, 0.3, size=50)
        crudes = make_crudes(rng.normal(0, np.sqrt(0.4), size=50) + rng.normal(0, np.sqrt(s2)), s2)

        lo, hi = eb.tau2_profile_ci(crudes)
        tau2 = eb.fit_prior_mle(crudes).tau2

        assert lo < tau2 < hi

    @pytest.mark.slow
    def test_coverage(self, make_crudes):
        """Nominal 95% interval covers tau2 = 0.3 in roughly 95% of replicates."""
        rng = np.random.default_rng(77)
        covered = 0
        for _ in range(200):
            s2 = rng.uniform(0.05, 0.3, size=100)
            theta = rng.normal(0, np.sqrt(0.3), size=100) + rng.normal(0, np.sqrt(s2))
            lo, hi = eb.tau2_profile_ci(make_crudes(theta, s2), 0.95)
            covered += lo <= 0.3 <= hi
        assert 0.90 <= covered / 200 <= 1.0


class TestSensitivitySweep:
    """Ranking measures re-computed over fixed tau2 values."""

    def test_mle_value_reproduces_baseline(self, rng, make_crudes):
        s2 = rng.uniform(0.05, 0.3, size=20)
        crudes = make_crudes(rng.normal(0, 0.5, size=20), s2)
        prior = eb.fit_prior_mle(crudes)
        posts = eb.posteriors(crudes, prior)
        baseline = [ranking.epc(p, prior) for p in posts]

        row = eb.sensitivity_sweep(crudes, [prior.tau2])[0]

        assert row.mu == pytest.approx(prior.mu, abs=1e-4)
        assert row.epc == pytest.approx(baseline, abs=1e-2)

    def test_zero_tau2_gives_no_rankability(self, make_crudes):
        row = eb.sensitivity_sweep(make_crudes([0.3, -0.2, 0.8], [0.1, 0.2, 0.3]), [0.0])[0]
        assert row.ra == 0.0
        assert row.epc == [50.0, 50.0, 50.0]

    def test_ra_increases_with_tau2(self, rng, make_crudes):
        """Equal s2: RA is non-decreasing for tau2 up to s2."""
        crudes = make_crudes(rng.normal(0, np.sqrt(0.25), size=30), 0.2)
        rows = eb.sensitivity_sweep(crudes, np.linspace(0.0, 0.2, 11))
        assert np.all(np.diff([r.ra for r in rows]) >= -1e-12)

    def test_rejects_negative_grid(self, make_crudes):
        with pytest.raises(InputValidationError):
            eb.sensitivity_sweep(make_crudes([0.1, 0.2], 0.1), [-0.1])
