"""Seedable random number generation for the Gibbs samplers.

A counter-based generator (Philox) is used so that per-chain streams derived
from (seed, chain_id) are reproducible independently of scheduling.  All
samplers take the Rng explicitly; an Rng is never shared between chains.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import truncnorm

__all__ = [
    "Rng",
    "sample_normal",
    "sample_truncated_normal",
    "sample_beta",
    "sample_gamma",
    "sample_inverse_gamma",
    "sample_categorical",
]


class Rng:
    """Seedable random stream.

    Identical (seed, chain_id) and identical call sequence give an identical
    stream.  Distinct chain_ids give statistically independent streams.
    """

    def __init__(self, seed: int, chain_id: int = 0):
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(chain_id),))
        self.seed = int(seed)
        self.chain_id = int(chain_id)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):  # pragma: no cover
        return f"Rng(seed={self.seed}, chain_id={self.chain_id})"


def sample_normal(rng: Rng, mean, var):
    """Draw from Normal(mean, var).  Scalar or elementwise over arrays."""
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise ValueError("sample_normal requires var > 0")
    return rng.generator.normal(mean, np.sqrt(var))


def sample_truncated_normal(rng: Rng, mean, var, lower=-np.inf, upper=np.inf):
    """Draw from Normal(mean, var) truncated to (lower, upper).

    Broadcasts over array arguments.  Accurate in the far tails (the
    underlying sampler switches away from the naive inverse CDF there).
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(var <= 0):
        raise ValueError("sample_truncated_normal requires var > 0")
    if np.any(lower >= upper):
        raise ValueError("empty truncation interval: lower must be < upper")
    sd = np.sqrt(var)
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    shape = np.broadcast_shapes(mean.shape, sd.shape, a.shape, b.shape)
    draws = truncnorm.rvs(a, b, loc=mean, scale=sd, size=shape or None,
                          random_state=rng.generator)
    return draws


def sample_beta(rng: Rng, a, b):
    """Beta draw.  Scalar or elementwise over arrays."""
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise ValueError("sample_beta requires a, b > 0")
    out = rng.generator.beta(a, b)
    return float(out) if np.isscalar(a) and np.isscalar(b) else out


def sample_gamma(rng: Rng, shape: float, rate: float) -> float:
    """Gamma draw parameterized by shape and *rate* (mean = shape/rate)."""
    if shape <= 0 or rate <= 0:
        raise ValueError("sample_gamma requires shape, rate > 0")
    return float(rng.generator.gamma(shape, 1.0 / rate))


def sample_inverse_gamma(rng: Rng, shape: float, scale: float) -> float:
    """Inverse-gamma draw with density scale^shape x^-(shape+1) e^(-scale/x)."""
    if shape <= 0 or scale <= 0:
        raise ValueError("sample_inverse_gamma requires shape, scale > 0")
    return float(scale / rng.generator.gamma(shape, 1.0))


def sample_categorical(rng: Rng, weights) -> int:
    """Draw an index proportional to weights (normalized internally)."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("sample_categorical requires nonnegative weights")
    total = w.sum()
    if total <= 0:
        raise ValueError("sample_categorical requires weights summing > 0")
    cdf = np.cumsum(w / total)
    u = rng.generator.random()
    return int(np.searchsorted(cdf, u, side="right"))
