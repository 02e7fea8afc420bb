"""Reference estimators: two-stage least squares and the Normal-LIV wrapper."""

from __future__ import annotations

import warnings
from typing import Optional

import numpy as np

from .data_model import Dataset, EffectEstimate, ModelConfig, PosteriorDraws
from .liv_sampler import NORMAL_LIV, FitRequest, gibbs_run

__all__ = ["two_stage_least_squares", "two_stage_least_squares_cate", "normal_liv"]

_Z95 = 1.959963984540054


def two_stage_least_squares(data: Dataset) -> EffectEstimate:
    """2SLS effect of D on Y instrumented by Z, controlling for X.

    Stage 1 regresses D on (1, Z, X); stage 2 regresses Y on (1, D_hat, X).
    The interval uses heteroskedasticity-robust (sandwich) standard errors,
    appropriate for skewed outcomes.
    """
    n = data.n
    stage1 = np.column_stack([np.ones(n), data.z, data.x])
    rank = np.linalg.matrix_rank(stage1)
    if rank < stage1.shape[1]:
        raise np.linalg.LinAlgError("singular first-stage design")
    coef1, *_ = np.linalg.lstsq(stage1, data.d.astype(float), rcond=None)
    d_hat = stage1 @ coef1

    _warn_if_weak(data)

    w = np.column_stack([np.ones(n), data.d.astype(float), data.x])
    w_hat = np.column_stack([np.ones(n), d_hat, data.x])
    a = w_hat.T @ w
    if abs(np.linalg.det(a)) < np.finfo(float).tiny * 1e10:
        raise np.linalg.LinAlgError("singular 2SLS design (instrument adds no variation)")
    a_inv = np.linalg.inv(a)
    beta = a_inv @ (w_hat.T @ data.y)
    resid = data.y - w @ beta
    meat = w_hat.T @ (w_hat * (resid ** 2)[:, None])
    vcov = a_inv @ meat @ a_inv.T
    est = float(beta[1])
    se = float(np.sqrt(vcov[1, 1]))
    return EffectEstimate(
        estimand="ATE",
        condition=None,
        posterior_median=est,
        ci_low=est - _Z95 * se,
        ci_high=est + _Z95 * se,
        draws=np.array([]),
        metadata={"method": "2sls", "se": se},
    )


def _warn_if_weak(data: Dataset) -> None:
    from .diagnostics import instrument_f_stat

    try:
        result = instrument_f_stat(data)
    except np.linalg.LinAlgError:
        return
    if result.f_stat < 10:
        warnings.warn(f"weak instrument: first-stage F = {result.f_stat:.2f} < 10")


def two_stage_least_squares_cate(data: Dataset, condition) -> EffectEstimate:
    """Subgroup effect by stratified refitting (2SLS has no direct CATE)."""
    mask = data.mask(condition)
    if not mask.any():
        raise ValueError(f"condition selects no units: {condition!r}")
    x_sub = data.x[mask]
    # covariates the condition makes constant would be collinear with the
    # intercept in the subgroup refit
    keep = np.ptp(x_sub, axis=0) > 0
    sub = Dataset(y=data.y[mask], d=data.d[mask], z=data.z[mask],
                  x=x_sub[:, keep],
                  column_names=tuple(np.asarray(data.column_names)[keep]))
    est = two_stage_least_squares(sub)
    est.estimand = "CATE"
    est.condition = condition if isinstance(condition, str) else "<predicate>"
    est.metadata["n_units"] = int(mask.sum())
    return est


def normal_liv(data: Dataset, config: ModelConfig, chain_id: int = 0) -> PosteriorDraws:
    """Latent factor model with a single normal error per arm.

    Same Gibbs kernel as the mixture model with the truncation forced to one
    component, which leaves one normal atom with an inverse-gamma variance.
    """
    request = FitRequest(data=data, config=config, variant=NORMAL_LIV)
    return gibbs_run(request, chain_id=chain_id)
