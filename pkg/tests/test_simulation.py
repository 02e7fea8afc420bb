import numpy as np
import pytest

from dpmliv.data_model import ModelConfig
from dpmliv.simulation import (
    _MIXTURE_LAW,
    ErrorLaw,
    SimDesign,
    calibrate_treatment_intercept,
    named_design,
    pci_shaped_design,
    replicate,
    simulate,
)


class TestErrorLaw:
    def test_gamma_moments(self):
        g = np.random.default_rng(0)
        law = ErrorLaw.gamma(3.0, 0.1)  # rate parameterization: mean 30
        x = law.draw(g, 400000)
        assert law.mean() == pytest.approx(30.0)
        assert x.mean() == pytest.approx(30.0, abs=0.2)
        assert x.var() == pytest.approx(300.0, rel=0.02)

    def test_normal_moments(self):
        g = np.random.default_rng(1)
        law = ErrorLaw.normal(0.0, 0.5)
        x = law.draw(g, 400000)
        assert x.mean() == pytest.approx(0.0, abs=0.01)
        assert x.var() == pytest.approx(0.5, rel=0.02)

    def test_mixture_mean_matches_weighted_components(self):
        g = np.random.default_rng(2)
        w, mu, _ = _MIXTURE_LAW.params
        assert sum(w) == pytest.approx(1.0, abs=1e-12)
        expected = float(np.dot(w, mu))
        # raw weight-mean products sum to 1.135 before weight normalization
        assert expected == pytest.approx(1.135 / 0.85, rel=1e-12)
        x = _MIXTURE_LAW.draw(g, 400000)
        assert x.mean() == pytest.approx(expected, abs=0.02)

    def test_mixture_rejects_unnormalized_weights(self):
        with pytest.raises(ValueError, match="sum to 1"):
            ErrorLaw.mixture((0.15, 0.4, 0.25, 0.05), (0, 0, 0, 0), (1, 1, 1, 1))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ErrorLaw("cauchy", ()).draw(np.random.default_rng(0), 5)


class TestCalibration:
    def test_treated_fraction_near_target(self):
        design = named_design("gamma_strong", n=5000, seed=3)
        _, truth = simulate(design)
        assert truth.treated_fraction == pytest.approx(0.3, abs=0.07)

    def test_calibration_cached_and_deterministic(self):
        d1 = named_design("gamma_strong", n=500, seed=1)
        d2 = named_design("gamma_strong", n=2000, seed=99)
        # same generative parameters -> identical calibrated intercept
        assert calibrate_treatment_intercept(d1) == calibrate_treatment_intercept(d2)

    def test_disabled_calibration_uses_given_intercept(self):
        design = SimDesign(n=500, treated_fraction_target=None, betaD_0=-0.7)
        assert calibrate_treatment_intercept(design) == -0.7

    def test_pci_design_treated_fraction(self):
        _, truth = simulate(pci_shaped_design(n=20000, seed=4))
        assert truth.treated_fraction == pytest.approx(0.23, abs=0.02)


class TestSimulatedTruth:
    def test_true_ate_in_expected_band(self):
        # intercept gap 10 plus the x3 slope gap 10 * P(x3=1)=0.4 gives a
        # population ATE of 14; sample truth at n=2000 stays in [12, 16]
        _, truth = simulate(named_design("gamma_strong", n=2000, seed=5))
        assert 12.0 <= truth.true_ate <= 16.0
        assert truth.true_cate["x3==1"] > truth.true_cate["x3==0"]

    def test_no_confounding_observed_difference_matches_truth(self):
        # with all loadings zero and no covariates in the treatment index,
        # assignment is independent of the potential outcomes, so the
        # observed group difference estimates ATE
        design = SimDesign(n=200000, alpha_d=0.0, alpha1=0.0, alpha0=0.0,
                           betaD=(0.0, 0.0, 0.0),
                           error_law=ErrorLaw.normal(0.0, 0.5), seed=6)
        data, truth = simulate(design)
        diff = data.y[data.d == 1].mean() - data.y[data.d == 0].mean()
        assert diff == pytest.approx(truth.true_ate, abs=0.15)

    def test_determinism_and_seed_sensitivity(self):
        d = named_design("gamma_strong", n=300, seed=7)
        data1, t1 = simulate(d)
        data2, t2 = simulate(d)
        np.testing.assert_array_equal(data1.y, data2.y)
        assert t1.true_ate == t2.true_ate
        data3, _ = simulate(named_design("gamma_strong", n=300, seed=8))
        assert not np.array_equal(data1.y, data3.y)

    def test_potential_outcomes_consistent_with_observed(self):
        data, truth = simulate(named_design("normal_strong", n=400, seed=9))
        np.testing.assert_array_equal(
            data.y, np.where(data.d == 1, truth.y1, truth.y0))

    def test_named_design_unknown(self):
        with pytest.raises(KeyError):
            named_design("nonexistent_design")

    def test_design_validation(self):
        with pytest.raises(ValueError):
            SimDesign(n=5)
        with pytest.raises(ValueError):
            SimDesign(theta_sd=0.0)


class TestReplicationHarness:
    def test_oracle_self_check(self):
        # the oracle method reports the simulated truth back, so the harness
        # must score it with zero bias and full coverage
        design = named_design("gamma_strong", n=300, seed=10)
        cfg = ModelConfig(n_iter=40, burn_in=10, thin=2, n_chains=1, seed=0,
                          dpm_truncation=3)
        report = replicate(design, n_reps=4, methods=("oracle",), config=cfg,
                           workers=1)
        assert report.n_failures == 0
        for est in ("ate", "cate(x3==1)"):
            row = report.lookup(est, "oracle")
            assert row["bias"] == pytest.approx(0.0, abs=1e-12)
            assert row["coverage"] == 100.0

    def test_2sls_rows_and_dataframe_layout(self):
        design = named_design("gamma_strong", n=800, seed=11)
        cfg = ModelConfig(n_iter=40, burn_in=10, thin=2, n_chains=1, seed=0,
                          dpm_truncation=3)
        report = replicate(design, n_reps=3, methods=("2sls",), config=cfg,
                           workers=1)
        df = report.to_dataframe()
        assert list(df.columns) == ["estimand", "n", "method", "bias",
                                    "width", "coverage"]
        assert set(df["estimand"]) == {"ate", "cate(x3==1)"}
        assert np.all(df["width"] > 0)

    def test_sub_seeds_distinct_and_reproducible(self):
        design = named_design("gamma_strong", n=300, seed=12)
        cfg = ModelConfig(n_iter=40, burn_in=10, thin=2, n_chains=1, seed=0,
                          dpm_truncation=3)
        r1 = replicate(design, n_reps=3, methods=("oracle",), config=cfg,
                       workers=1)
        r2 = replicate(design, n_reps=3, methods=("oracle",), config=cfg,
                       workers=1)
        assert r1.rows == r2.rows

    def test_rep_failure_recorded_not_fatal(self):
        design = named_design("gamma_strong", n=300, seed=13)
        cfg = ModelConfig(n_iter=40, burn_in=10, thin=2, n_chains=1, seed=0,
                          dpm_truncation=3)
        report = replicate(design, n_reps=2, methods=("not_a_method",),
                           config=cfg, workers=1)
        assert report.n_failures == 2
        assert report.rows == []

    def test_rejects_zero_reps(self):
        design = named_design("gamma_strong", n=300, seed=14)
        cfg = ModelConfig(n_iter=40, burn_in=10, thin=2, n_chains=1, seed=0)
        with pytest.raises(ValueError):
            replicate(design, n_reps=0, methods=("oracle",), config=cfg)
