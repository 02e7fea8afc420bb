import numpy as np
import pytest
from scipy import integrate, stats

from dpmliv.data_model import Dataset, DpmState, ModelConfig, ParamState
from dpmliv.liv_sampler import (
    DPM_LIV,
    NORMAL_LIV,
    FitRequest,
    RankDeficiencyError,
    _ridge_draw,
    gibbs_run,
    log_likelihood,
    sign_switch,
    treatment_index,
    treatment_noise_var,
    update_dstar,
    update_theta,
)
from dpmliv.rand_kernel import Rng


def make_state(n, p, alpha_d=0.3, alpha1=0.2, alpha0=0.1, gamma=1.0,
               H=2, rng=None, d=None):
    g = (rng or Rng(0, 0)).generator
    if d is None:
        n1 = n - n // 2
    else:
        n1 = int(np.sum(d == 1))
    arm_sizes = {1: n1, 0: n - n1}

    def dpm(arm):
        return DpmState(weights=np.full(H, 1.0 / H), cluster_means=np.zeros(H),
                        cluster_vars=np.ones(H),
                        allocations=np.zeros(arm_sizes[arm], dtype=np.int64),
                        concentration=1.0, base_mean=0.0, base_var=1.0)

    return ParamState(gamma=gamma, beta_d=g.standard_normal(p + 1) * 0.2,
                      beta1=g.standard_normal(p + 1), beta0=g.standard_normal(p + 1),
                      alpha_d=alpha_d, alpha1=alpha1, alpha0=alpha0,
                      theta=g.standard_normal(n), d_star=g.standard_normal(n),
                      dpm1=dpm(1), dpm0=dpm(0))


def make_data(n=40, p=2, seed=0):
    g = np.random.default_rng(seed)
    x = g.standard_normal((n, p))
    z = g.integers(0, 2, n).astype(float)
    d = np.concatenate([np.zeros(n // 2), np.ones(n - n // 2)]).astype(np.int64)
    g.shuffle(d)
    y = g.standard_normal(n)
    return Dataset(y=y, d=d, z=z, x=x,
                   column_names=tuple(f"x{j+1}" for j in range(p)))


class TestTreatmentNoiseVar:
    def test_unit_total_variance(self):
        state = make_state(4, 1, alpha_d=0.6)
        assert treatment_noise_var(state) == pytest.approx(1.0 - 0.36)

    def test_floor(self):
        state = make_state(4, 1, alpha_d=0.9999999999)
        assert treatment_noise_var(state) >= 1e-10


class TestUpdateDstar:
    def test_sign_respects_treatment(self):
        rng = Rng(2, 0)
        data = make_data(200)
        state = make_state(200, 2)
        for _ in range(5):
            d_star = update_dstar(rng, state, data)
            assert np.all(d_star[data.d == 1] > 0)
            assert np.all(d_star[data.d == 0] <= 0)

    def test_truncated_mean_oracle(self):
        # single unit, d = 1: E[d*] is the mean of N(eta, sigma^2)
        # truncated to (0, inf); closed form eta + sigma phi(a)/ (1 - Phi(a))
        rng = Rng(3, 0)
        data = Dataset(y=np.array([0.0, 0.0]), d=np.array([1, 0]),
                       z=np.array([1.0, 0.0]), x=np.zeros((2, 1)),
                       column_names=("x1",))
        state = make_state(2, 1, alpha_d=0.5)
        eta = treatment_index(state, data)
        sigma = np.sqrt(treatment_noise_var(state))
        a = -eta[0] / sigma
        expected = eta[0] + sigma * stats.norm.pdf(a) / stats.norm.sf(a)
        draws = np.array([update_dstar(rng, state, data)[0] for _ in range(40000)])
        assert draws.mean() == pytest.approx(expected, abs=0.02)


class TestUpdateTheta:
    def test_prior_only_when_loadings_zero(self):
        rng = Rng(4, 0)
        data = make_data(2000)
        state = make_state(2000, 2, alpha_d=0.0, alpha1=0.0, alpha0=0.0)
        draws = np.concatenate([update_theta(rng, state, data) for _ in range(30)])
        assert draws.mean() == pytest.approx(0.0, abs=0.02)
        assert draws.var() == pytest.approx(1.0, abs=0.03)

    def test_single_unit_quadrature_oracle(self):
        # E[theta | d*, y] for one treated unit, computed by numerical
        # integration of prior x treatment-residual x outcome-residual
        rng = Rng(5, 0)
        data = Dataset(y=np.array([2.3, 0.0]), d=np.array([1, 0]),
                       z=np.array([1.0, 0.0]), x=np.array([[0.4], [0.0]]),
                       column_names=("x1",))
        state = make_state(2, 1, alpha_d=0.5, alpha1=0.8, alpha0=0.3)
        state.d_star = np.array([1.7, -0.2])
        state.dpm1.cluster_means[:] = [0.5, -0.5]
        state.dpm1.cluster_vars[:] = [0.7, 1.3]
        state.dpm1.allocations[:] = [0]  # the single treated unit uses atom 0
        sd_d = np.sqrt(treatment_noise_var(state))
        r_d = state.d_star[0] - (state.beta_d[0] + state.gamma * 1.0
                                 + 0.4 * state.beta_d[1])
        r_y = data.y[0] - (state.beta1[0] + 0.4 * state.beta1[1]
                           + state.dpm1.cluster_means[0])

        def dens(t):
            return (stats.norm.pdf(t)
                    * stats.norm.pdf(r_d, state.alpha_d * t, sd_d)
                    * stats.norm.pdf(r_y, state.alpha1 * t,
                                     np.sqrt(state.dpm1.cluster_vars[0])))

        z0, _ = integrate.quad(dens, -12, 12)
        m_oracle, _ = integrate.quad(lambda t: t * dens(t), -12, 12)
        m_oracle /= z0

        draws = np.array([update_theta(rng, state, data)[0] for _ in range(60000)])
        assert draws.mean() == pytest.approx(m_oracle, abs=1e-2)
        # analytic conditional mean must match the quadrature to 1e-3
        prec = (1.0 + state.alpha_d ** 2 / sd_d ** 2
                + state.alpha1 ** 2 / state.dpm1.cluster_vars[0])
        mean = (state.alpha_d * r_d / sd_d ** 2
                + state.alpha1 * r_y / state.dpm1.cluster_vars[0]) / prec
        assert mean == pytest.approx(m_oracle, abs=1e-3)


class TestRidgeDraw:
    def test_noiseless_limit_recovers_coefficients(self):
        rng = Rng(6, 0)
        g = np.random.default_rng(1)
        design = np.column_stack([np.ones(500), g.standard_normal(500)])
        response = design @ np.array([2.0, 3.0])
        coef = _ridge_draw(rng, design, response, 1e-10, 1e8)
        np.testing.assert_allclose(coef, [2.0, 3.0], atol=1e-2)

    def test_empty_design_is_prior_draw(self):
        rng = Rng(7, 0)
        draws = np.array([_ridge_draw(rng, np.empty((0, 2)), np.empty(0),
                                      1.0, 4.0) for _ in range(20000)])
        assert draws.mean() == pytest.approx(0.0, abs=0.05)
        assert draws.var() == pytest.approx(4.0, abs=0.1)

    def test_posterior_moments_match_closed_form(self):
        rng = Rng(8, 0)
        g = np.random.default_rng(2)
        design = np.column_stack([np.ones(30), g.standard_normal(30)])
        response = g.standard_normal(30)
        obs_var, prior_var = 2.0, 5.0
        a = design.T @ design / obs_var + np.eye(2) / prior_var
        mean = np.linalg.solve(a, design.T @ response / obs_var)
        draws = np.array([_ridge_draw(rng, design, response, obs_var, prior_var)
                          for _ in range(40000)])
        np.testing.assert_allclose(draws.mean(axis=0), mean, atol=0.02)
        np.testing.assert_allclose(np.cov(draws.T), np.linalg.inv(a), atol=0.02)


class TestSignSwitch:
    def test_involution(self):
        state = make_state(10, 2)
        ref = state.copy()
        sign_switch(Rng(0, 0), state, force=True)
        sign_switch(Rng(0, 0), state, force=True)
        np.testing.assert_array_equal(state.theta, ref.theta)
        assert state.alpha_d == ref.alpha_d
        assert state.alpha1 == ref.alpha1 and state.alpha0 == ref.alpha0

    def test_likelihood_invariant(self):
        data = make_data(30)
        state = make_state(30, 2)
        before = log_likelihood(state, data)
        sign_switch(Rng(0, 0), state, force=True)
        after = log_likelihood(state, data)
        assert abs(before - after) < 1e-9

    def test_flip_probability_half(self):
        rng = Rng(9, 0)
        flips = 0
        for _ in range(4000):
            state = make_state(3, 1, alpha_d=0.5)
            sign_switch(rng, state)
            flips += state.alpha_d < 0
        assert abs(flips / 4000 - 0.5) < 0.03

    def test_symmetrizes_loading_posterior(self):
        # after many switched sweeps the marginal of alpha_1 is symmetric
        data = make_data(40, seed=3)
        cfg = ModelConfig(n_iter=600, burn_in=100, thin=1, n_chains=1,
                          seed=11, dpm_truncation=3)
        draws = gibbs_run(FitRequest(data=data, config=cfg, variant=DPM_LIV))
        a1 = draws.scalar_series("alpha1")
        pos = a1[a1 > 0]
        neg = -a1[a1 < 0]
        if len(pos) > 20 and len(neg) > 20:
            assert stats.ks_2samp(pos, neg).pvalue > 1e-4


class TestVariantsAndDeterminism:
    def test_normal_variant_equals_truncation_one(self):
        data = make_data(30, seed=5)
        cfg = ModelConfig(n_iter=60, burn_in=20, thin=2, n_chains=1, seed=21,
                          dpm_truncation=50)
        normal = gibbs_run(FitRequest(data=data, config=cfg, variant=NORMAL_LIV))
        collapsed = gibbs_run(FitRequest(
            data=data, config=cfg.replace(dpm_truncation=1), variant=DPM_LIV))
        for a, b in zip(normal.iterations, collapsed.iterations):
            assert a.gamma == b.gamma
            np.testing.assert_array_equal(a.beta1, b.beta1)
            np.testing.assert_array_equal(a.theta, b.theta)
            np.testing.assert_array_equal(a.dpm1.cluster_vars, b.dpm1.cluster_vars)

    def test_same_seed_bit_identical(self):
        data = make_data(25, seed=6)
        cfg = ModelConfig(n_iter=50, burn_in=10, thin=4, n_chains=1, seed=33,
                          dpm_truncation=4)
        r1 = gibbs_run(FitRequest(data=data, config=cfg, variant=DPM_LIV))
        r2 = gibbs_run(FitRequest(data=data, config=cfg, variant=DPM_LIV))
        for a, b in zip(r1.iterations, r2.iterations):
            assert a.gamma == b.gamma and a.alpha_d == b.alpha_d
            np.testing.assert_array_equal(a.theta, b.theta)

    def test_different_chain_ids_differ(self):
        data = make_data(25, seed=6)
        cfg = ModelConfig(n_iter=50, burn_in=10, thin=4, n_chains=1, seed=33,
                          dpm_truncation=4)
        r1 = gibbs_run(FitRequest(data=data, config=cfg), chain_id=0)
        r2 = gibbs_run(FitRequest(data=data, config=cfg), chain_id=1)
        assert r1.iterations[0].gamma != r2.iterations[0].gamma


class TestLatentCovariance:
    def test_shared_factor_induces_cross_equation_covariance(self):
        # cov(alpha_D theta, alpha_1 theta) = alpha_D alpha_1 var(theta)
        g = np.random.default_rng(12)
        theta = g.standard_normal(200000)
        a_d, a_1 = 0.4, 0.7
        c = np.cov(a_d * theta, a_1 * theta)[0, 1]
        assert c == pytest.approx(a_d * a_1 * theta.var(ddof=1), rel=1e-10)


class TestRankDeficiency:
    def test_duplicate_column_named_in_error(self):
        g = np.random.default_rng(7)
        x = g.standard_normal((30, 1))
        x = np.column_stack([x, x])  # x2 duplicates x1
        d = (g.random(30) < 0.5).astype(np.int64)
        d[:2] = [0, 1]
        data = Dataset(y=g.standard_normal(30), d=d,
                       z=g.integers(0, 2, 30).astype(float), x=x,
                       column_names=("x1", "x2"))
        cfg = ModelConfig(n_iter=20, burn_in=5, thin=1, n_chains=1, seed=1,
                          dpm_truncation=2)
        with pytest.raises(RankDeficiencyError, match="rank deficient"):
            gibbs_run(FitRequest(data=data, config=cfg))
