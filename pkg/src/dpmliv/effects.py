"""Causal estimands computed from posterior draws: ATE, CATE, ATT, PB.

All estimands are deterministic functions of (draws, data, request); each
returns the per-draw series plus its posterior median and central 95%
credible interval.
"""

from __future__ import annotations

import warnings
from typing import Iterable, Optional

import numpy as np
from scipy.stats import norm

from .data_model import Dataset, EffectEstimate, ParamState, PosteriorDraws

__all__ = ["ate", "cate", "att", "pb", "effect_table"]


def _combine(draws: PosteriorDraws | Iterable[PosteriorDraws]) -> list[ParamState]:
    if isinstance(draws, PosteriorDraws):
        return list(draws.iterations)
    states: list[ParamState] = []
    for chain in draws:
        states.extend(chain.iterations)
    if not states:
        raise ValueError("no posterior draws supplied")
    return states


def _summaries(dstate) -> tuple[float, float]:
    """Allocation-weighted mean atom mean and mean atom variance."""
    counts = dstate.allocation_counts()
    total = max(counts.sum(), 1)
    mu_bar = float(counts @ dstate.cluster_means / total)
    var_bar = float(counts @ dstate.cluster_vars / total)
    return mu_bar, var_bar


def _unit_gains(state: ParamState, data: Dataset) -> np.ndarray:
    """Per-unit expected outcome gain under this draw."""
    mu1, _ = _summaries(state.dpm1)
    mu0, _ = _summaries(state.dpm0)
    m1 = state.beta1[0] + data.x @ state.beta1[1:] + state.alpha1 * state.theta + mu1
    m0 = state.beta0[0] + data.x @ state.beta0[1:] + state.alpha0 * state.theta + mu0
    return m1 - m0


def _estimate(name: str, condition, series: np.ndarray, **meta) -> EffectEstimate:
    lo, med, hi = np.percentile(series, [2.5, 50.0, 97.5])
    return EffectEstimate(
        estimand=name,
        condition=condition,
        posterior_median=float(med),
        ci_low=float(lo),
        ci_high=float(hi),
        draws=series,
        metadata=meta,
    )


def ate(draws, data: Dataset) -> EffectEstimate:
    """Average treatment effect: per-draw mean of the unit-level gains."""
    states = _combine(draws)
    series = np.array([_unit_gains(s, data).mean() for s in states])
    return _estimate("ATE", None, series)


def cate(draws, data: Dataset, condition) -> EffectEstimate:
    """Conditional ATE over the units selected by the predicate."""
    mask = data.mask(condition)
    if not mask.any():
        raise ValueError(f"condition selects no units: {condition!r}")
    states = _combine(draws)
    series = np.array([_unit_gains(s, data)[mask].mean() for s in states])
    label = condition if isinstance(condition, str) else "<predicate>"
    return _estimate("CATE", label, series, n_units=int(mask.sum()))


def att(draws, data: Dataset, z_value: float,
        n_theta_draws: Optional[int] = None) -> EffectEstimate:
    """Treatment effect on the treated via selection-probability reweighting.

    Each unit's gain is weighted by Pr(D=1 | theta_i, x_i, z) over its
    theta-marginal selection probability; the marginal averages the probit
    index over the draw's own theta vector (all n values unless
    n_theta_draws caps it for large problems).
    """
    states = _combine(draws)
    dropped = 0
    series = []
    for s in states:
        gains = _unit_gains(s, data)
        base = s.beta_d[0] + s.gamma * z_value + data.x @ s.beta_d[1:]
        noise_sd = np.sqrt(max(1.0 - s.alpha_d ** 2, 1e-10))
        p_num = norm.cdf((base + s.alpha_d * s.theta) / noise_sd)
        theta_mc = s.theta
        if n_theta_draws is not None and n_theta_draws < len(theta_mc):
            step = len(theta_mc) / n_theta_draws
            theta_mc = theta_mc[(np.arange(n_theta_draws) * step).astype(int)]
        denom = norm.cdf((base[:, None] + s.alpha_d * theta_mc[None, :])
                         / noise_sd).mean(axis=1)
        if np.any(denom <= 1e-300):
            dropped += 1
            continue
        series.append(float(np.mean(gains * p_num / denom)))
    if dropped:
        warnings.warn(f"att: dropped {dropped} draws with underflowing "
                      "selection-probability denominators")
    if not series:
        raise ValueError("att: all draws dropped by denominator underflow")
    return _estimate("ATT", None, np.asarray(series),
                     z_value=float(z_value), dropped_draws=dropped)


def pb(draws, data: Dataset, threshold: float,
       full_mixture: bool = False, benefit_is_positive: bool = True) -> EffectEstimate:
    """Probability that the outcome gain exceeds the threshold.

    Uses the conditional independence of the two potential outcomes given the
    latent factor: per unit, the gain is normal around the unit-level mean
    with variance summing the two arms' error variances.  The default
    collapses each arm's mixture to its allocation-weighted mean variance;
    full_mixture sums over all atom pairs instead.  benefit_is_positive=False
    flips the gain's sign (Pr(Y(0) - Y(1) > threshold)); the convention is
    recorded in the metadata.
    """
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    states = _combine(draws)
    sign = 1.0 if benefit_is_positive else -1.0
    series = []
    for s in states:
        gains = sign * _unit_gains(s, data)
        if not full_mixture:
            _, v1 = _summaries(s.dpm1)
            _, v0 = _summaries(s.dpm0)
            sd = np.sqrt(v1 + v0)
            series.append(float(np.mean(norm.sf((threshold - gains) / sd))))
        else:
            c1 = s.dpm1.allocation_counts().astype(float)
            c0 = s.dpm0.allocation_counts().astype(float)
            w1, w0 = c1 / c1.sum(), c0 / c0.sum()
            # gains already include the allocation-weighted atom means; the
            # pairwise mixture shifts by the centered atom offsets
            off1 = s.dpm1.cluster_means - w1 @ s.dpm1.cluster_means
            off0 = s.dpm0.cluster_means - w0 @ s.dpm0.cluster_means
            val = 0.0
            for j in np.flatnonzero(w1):
                for k in np.flatnonzero(w0):
                    shift = sign * (off1[j] - off0[k])
                    sd = np.sqrt(s.dpm1.cluster_vars[j] + s.dpm0.cluster_vars[k])
                    val += w1[j] * w0[k] * np.mean(
                        norm.sf((threshold - gains - shift) / sd))
            series.append(float(val))
    return _estimate("PB", None, np.asarray(series),
                     threshold=float(threshold),
                     benefit_is_positive=benefit_is_positive,
                     full_mixture=full_mixture)


def effect_table(estimates: Iterable[EffectEstimate], method: str = "dpm_liv"):
    """Tidy rows (estimand, condition, median, ci_low, ci_high, method)."""
    import pandas as pd

    rows = []
    for e in estimates:
        rows.append({
            "estimand": e.estimand,
            "condition": e.condition or "",
            "median": e.posterior_median,
            "ci_low": e.ci_low,
            "ci_high": e.ci_high,
            "method": method,
        })
    return pd.DataFrame(rows)
