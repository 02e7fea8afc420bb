"""Instrument-validity checks and MCMC convergence diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .data_model import Dataset

__all__ = [
    "gelman_rubin",
    "psrf_table",
    "FStatResult",
    "instrument_f_stat",
    "complier_proportion",
    "balance_table",
    "FalsificationReport",
    "falsification_check",
]

_LARGE_F = 1e12


def gelman_rubin(chains: Sequence[np.ndarray]) -> float:
    """Potential scale reduction factor sqrt(Vhat/W) for one scalar parameter.

    Vhat mixes the within-chain variance W with the between-chain variance B
    including the finite-sample correction terms.  Values below 1.1 are the
    conventional convergence gate.
    """
    if len(chains) < 2:
        raise ValueError("gelman_rubin needs at least 2 chains")
    arrs = [np.asarray(c, dtype=float) for c in chains]
    lengths = {len(a) for a in arrs}
    if len(lengths) != 1:
        raise ValueError("chains must have equal lengths")
    n = lengths.pop()
    if n < 10:
        raise ValueError("chains must have length >= 10")
    m = len(arrs)
    means = np.array([a.mean() for a in arrs])
    variances = np.array([a.var(ddof=1) for a in arrs])
    w = variances.mean()
    b = n * means.var(ddof=1)
    if w == 0:
        return 1.0
    v_hat = (n - 1) / n * w + (1.0 + 1.0 / m) * b / n
    return float(np.sqrt(v_hat / w))


def psrf_table(chains_by_param: dict[str, Sequence[np.ndarray]]) -> pd.DataFrame:
    """R-hat per named parameter, with the < 1.1 convergence flag."""
    rows = []
    for name, chains in chains_by_param.items():
        r = gelman_rubin(chains)
        rows.append({"parameter": name, "r_hat": r, "converged": bool(r < 1.1)})
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class FStatResult:
    f_stat: float
    lr_chi2: float
    strong: bool
    note: str = ""


def instrument_f_stat(data: Dataset) -> FStatResult:
    """Incremental first-stage F statistic for the instrument.

    Compares linear first-stage fits of D with and without Z on top of the
    covariates; > 10 classifies the instrument as strong.  The likelihood
    ratio chi-square from the matching logistic fits is reported alongside
    for comparison.
    """
    n = data.n
    d = data.d.astype(float)
    full = np.column_stack([np.ones(n), data.z, data.x])
    reduced = np.column_stack([np.ones(n), data.x])
    if np.linalg.matrix_rank(full) < full.shape[1]:
        raise np.linalg.LinAlgError("singular first-stage design")

    def rss(design):
        coef, *_ = np.linalg.lstsq(design, d, rcond=None)
        r = d - design @ coef
        return float(r @ r)

    rss_full, rss_reduced = rss(full), rss(reduced)
    dof = n - full.shape[1]
    note = ""
    if rss_full <= 1e-12 * max(rss_reduced, 1.0) or dof <= 0:
        f = _LARGE_F
        note = "perfect separation: instrument predicts treatment exactly"
    else:
        f = (rss_reduced - rss_full) / (rss_full / dof)
    lr = _logistic_lr_chi2(d, full, reduced)
    return FStatResult(f_stat=float(max(f, 0.0)), lr_chi2=lr,
                       strong=bool(f > 10), note=note)


def _logistic_lr_chi2(d: np.ndarray, full: np.ndarray, reduced: np.ndarray) -> float:
    import statsmodels.api as sm

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            llf_full = sm.Logit(d, full).fit(disp=0).llf
            llf_reduced = sm.Logit(d, reduced).fit(disp=0).llf
        return float(2.0 * (llf_full - llf_reduced))
    except Exception:
        return float("inf")


def _binary_levels(z: np.ndarray) -> tuple[float, float]:
    levels = np.unique(z)
    if len(levels) != 2:
        raise ValueError("instrument must be binary with both levels present")
    return float(levels[0]), float(levels[1])


def complier_proportion(data: Dataset) -> float:
    """P(D=1 | Z=high) - P(D=1 | Z=low) for a binary instrument."""
    lo, hi = _binary_levels(data.z)
    return float(data.d[data.z == hi].mean() - data.d[data.z == lo].mean())


def balance_table(data: Dataset, grouping: str = "by_instrument") -> pd.DataFrame:
    """Absolute standardized mean differences per covariate.

    grouping selects the binary split: 'by_treatment' or 'by_instrument'.
    Covariates with zero pooled SD are reported as not computable.  Rows with
    SMD > 0.1 are flagged.
    """
    if grouping == "by_treatment":
        g = data.d.astype(float)
    elif grouping == "by_instrument":
        g = data.z
    else:
        raise ValueError("grouping must be 'by_treatment' or 'by_instrument'")
    lo, hi = _binary_levels(g)
    rows = []
    for j, name in enumerate(data.column_names):
        x1 = data.x[g == hi, j]
        x0 = data.x[g == lo, j]
        pooled = np.sqrt(0.5 * (x1.var(ddof=1) + x0.var(ddof=1)))
        if pooled == 0:
            rows.append({"covariate": name, "smd": np.nan,
                         "flagged": False, "computable": False})
            continue
        smd = abs(x1.mean() - x0.mean()) / pooled
        rows.append({"covariate": name, "smd": float(smd),
                     "flagged": bool(smd > 0.1), "computable": True})
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class FalsificationReport:
    difference: float
    ci_low: float
    ci_high: float
    passed: bool
    tolerance: Optional[float] = None


def falsification_check(data: Dataset, outcome: np.ndarray,
                        tolerance: Optional[float] = None) -> FalsificationReport:
    """Difference in a treatment-unaffected outcome across instrument levels.

    A valid instrument should not move such an outcome: the check passes if
    the normal-approximation 95% interval covers 0 (or the absolute
    difference is below the declared tolerance).
    """
    outcome = np.asarray(outcome, dtype=float)
    if len(outcome) != data.n:
        raise ValueError("outcome must have one value per unit")
    lo, hi = _binary_levels(data.z)
    y1 = outcome[data.z == hi]
    y0 = outcome[data.z == lo]
    diff = float(y1.mean() - y0.mean())
    se = float(np.sqrt(y1.var(ddof=1) / len(y1) + y0.var(ddof=1) / len(y0)))
    ci_low, ci_high = diff - 1.959963984540054 * se, diff + 1.959963984540054 * se
    passed = ci_low <= 0.0 <= ci_high
    if tolerance is not None:
        passed = passed or abs(diff) < tolerance
    return FalsificationReport(difference=diff, ci_low=ci_low, ci_high=ci_high,
                               passed=passed, tolerance=tolerance)
