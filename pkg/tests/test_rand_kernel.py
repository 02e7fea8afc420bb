import hashlib

import numpy as np
import pytest
from scipy.stats import ks_2samp

from dpmliv.rand_kernel import (
    Rng,
    sample_beta,
    sample_categorical,
    sample_gamma,
    sample_inverse_gamma,
    sample_normal,
    sample_truncated_normal,
)

N = 100_000


def _se(draws):
    return draws.std(ddof=1) / np.sqrt(len(draws))


class TestNormal:
    def test_mean(self, rng):
        draws = np.array([sample_normal(rng, 5.0, 1e-6) for _ in range(1000)])
        assert abs(draws.mean() - 5.0) < 4 * _se(draws) + 1e-4

    def test_variance(self, rng):
        draws = rng.generator.standard_normal(N)
        assert abs(draws.var() - 1.0) < 4 * np.sqrt(2.0 / N)

    def test_determinism(self):
        a = [sample_normal(Rng(3, 1), 0, 1) for _ in range(1)]
        b = [sample_normal(Rng(3, 1), 0, 1) for _ in range(1)]
        assert a == b
        seq1 = Rng(9, 2).generator.random(100)
        seq2 = Rng(9, 2).generator.random(100)
        np.testing.assert_array_equal(seq1, seq2)

    def test_rejects_bad_variance(self, rng):
        with pytest.raises(ValueError):
            sample_normal(rng, 0.0, -1.0)
        with pytest.raises(ValueError):
            sample_normal(rng, 0.0, 0.0)


class TestTruncatedNormal:
    def test_half_normal_mean(self, rng):
        draws = sample_truncated_normal(rng, np.zeros(N), 1.0, 0.0, np.inf)
        # analytic half-normal mean sqrt(2/pi)
        target = np.sqrt(2.0 / np.pi)
        assert abs(draws.mean() - target) < 4 * _se(draws)

    def test_untruncated_matches_normal(self, rng):
        a = sample_truncated_normal(rng, np.zeros(10_000), 1.0, -np.inf, np.inf)
        b = rng.generator.standard_normal(10_000)
        assert ks_2samp(a, b).pvalue > 0.01

    def test_support(self, rng):
        draws = sample_truncated_normal(rng, np.zeros(1000), 1.0, 5.0, np.inf)
        assert np.all(draws > 5.0)

    def test_deep_tail_is_finite(self, rng):
        draws = sample_truncated_normal(rng, np.full(100, -40.0), 1.0, 0.0, np.inf)
        assert np.all(np.isfinite(draws)) and np.all(draws > 0)

    def test_empty_interval(self, rng):
        with pytest.raises(ValueError):
            sample_truncated_normal(rng, 0.0, 1.0, 2.0, 1.0)


class TestOtherSamplers:
    def test_beta_uniform_mean(self, rng):
        draws = np.array(sample_beta(rng, np.ones(N), np.ones(N)))
        assert abs(draws.mean() - 0.5) < 4 * _se(draws)

    def test_gamma_rate_parameterization(self, rng):
        draws = np.array([sample_gamma(rng, 3.0, 0.1) for _ in range(N)])
        assert abs(draws.mean() - 30.0) < 4 * _se(draws)

    def test_inverse_gamma_mean(self, rng):
        # InvGamma(shape=3, scale=4) has mean scale/(shape-1) = 2
        draws = np.array([sample_inverse_gamma(rng, 3.0, 4.0) for _ in range(N)])
        assert abs(draws.mean() - 2.0) < 4 * _se(draws)

    def test_categorical_degenerate(self, rng):
        assert all(sample_categorical(rng, np.array([0.0, 1.0, 0.0])) == 1
                   for _ in range(100))

    def test_categorical_normalizes(self, rng):
        draws = np.array([sample_categorical(rng, np.array([2.0, 2.0]))
                          for _ in range(2000)])
        assert abs(draws.mean() - 0.5) < 0.05

    def test_invalid_parameters(self, rng):
        with pytest.raises(ValueError):
            sample_beta(rng, -1.0, 1.0)
        with pytest.raises(ValueError):
            sample_gamma(rng, 0.0, 1.0)
        with pytest.raises(ValueError):
            sample_inverse_gamma(rng, 1.0, -1.0)
        with pytest.raises(ValueError):
            sample_categorical(rng, np.array([0.0, 0.0]))
        with pytest.raises(ValueError):
            sample_categorical(rng, np.array([1.0, -1.0]))


class TestStreamSplitting:
    def test_chains_do_not_collide(self):
        digests = set()
        for chain_id in range(8):
            prefix = Rng(42, chain_id).generator.random(4096)
            digests.add(hashlib.sha256(prefix.tobytes()).hexdigest())
        assert len(digests) == 8

    def test_same_chain_same_stream(self):
        a = Rng(42, 3).generator.random(64)
        b = Rng(42, 3).generator.random(64)
        np.testing.assert_array_equal(a, b)
