"""Gibbs MCMC for the full latent-index IV model with mixture errors.

One sweep updates, in fixed order: the latent treatment utilities, the latent
factor, the treatment coefficients, the outcome coefficients per arm, the
mixture (allocations, sticks/atoms, recentering, concentration, base measure)
per arm, and finally a random sign switch of the factor and its loadings.
The NORMAL_LIV variant is the same kernel with the mixture truncated to a
single component, which reduces to a single normal error per arm with an
inverse-gamma variance prior.
"""

from __future__ import annotations

import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from scipy.stats import norm

from . import dpm
from .data_model import Dataset, DpmState, ModelConfig, ParamState, PosteriorDraws
from .rand_kernel import Rng, sample_truncated_normal

__all__ = [
    "FitRequest",
    "RankDeficiencyError",
    "update_dstar",
    "update_theta",
    "update_coefficients",
    "sign_switch",
    "log_likelihood",
    "gibbs_run",
    "fit_chains",
]

DPM_LIV = "DPM_LIV"
NORMAL_LIV = "NORMAL_LIV"

# Intercepts are location parameters on the raw outcome scale; they get an
# effectively flat prior rather than the shrinkage prior used for slopes.
_INTERCEPT_PRIOR_VAR = 1e8


class RankDeficiencyError(ValueError):
    pass


@dataclass(frozen=True)
class FitRequest:
    data: Dataset
    config: ModelConfig
    variant: Literal["DPM_LIV", "NORMAL_LIV"] = DPM_LIV

    def __post_init__(self):
        if self.variant not in (DPM_LIV, NORMAL_LIV):
            raise ValueError(f"unknown variant {self.variant!r}")

    def effective_config(self) -> ModelConfig:
        if self.variant == NORMAL_LIV:
            return self.config.replace(dpm_truncation=1)
        return self.config


def _check_full_rank(design: np.ndarray, names: list[str]) -> None:
    if design.shape[0] == 0:
        return
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        _, rmat = np.linalg.qr(design)
        diag = np.abs(np.diag(rmat))
        tol = diag.max() * max(design.shape) * np.finfo(float).eps if diag.size else 0.0
        bad = [names[j] for j in range(len(names)) if j < len(diag) and diag[j] <= tol]
        raise RankDeficiencyError(
            f"design matrix is rank deficient (rank {rank} < {design.shape[1]}); "
            f"collinear columns: {bad or names}")


def treatment_index(state: ParamState, data: Dataset) -> np.ndarray:
    """Latent-utility mean eta_i = intercept + gamma z + x beta + alpha_D theta."""
    b = state.beta_d
    return b[0] + state.gamma * data.z + data.x @ b[1:] + state.alpha_d * state.theta


def _arm_mean_no_error(state: ParamState, data: Dataset, arm: int) -> np.ndarray:
    b = state.beta1 if arm == 1 else state.beta0
    a = state.alpha1 if arm == 1 else state.alpha0
    return b[0] + data.x @ b[1:] + a * state.theta


def _arm_members(data: Dataset, arm: int) -> np.ndarray:
    return np.flatnonzero(data.d == arm)


def treatment_noise_var(state: ParamState) -> float:
    """Residual variance of the latent index given theta.

    The total latent-utility residual alpha_D theta + eps_D has variance
    fixed at 1, so eps_D has variance 1 - alpha_D^2 and alpha_D lives in
    (-1, 1).  This pins the probit scale and keeps (gamma, beta_D)
    identified instead of drifting along a scale ridge with alpha_D.
    """
    return max(1.0 - state.alpha_d ** 2, 1e-10)


def update_dstar(rng: Rng, state: ParamState, data: Dataset) -> np.ndarray:
    """Probit data augmentation: truncated-normal redraw of each latent D*."""
    eta = treatment_index(state, data)
    lower = np.where(data.d == 1, 0.0, -np.inf)
    upper = np.where(data.d == 1, np.inf, 0.0)
    state.d_star = sample_truncated_normal(rng, eta, treatment_noise_var(state),
                                           lower, upper)
    return state.d_star


def update_theta(rng: Rng, state: ParamState, data: Dataset) -> np.ndarray:
    """Gibbs draw of the latent factor given everything else.

    The N(0,1) prior combines with the treatment and (observed-arm) outcome
    residuals; the conditional precision is
    1 + alpha_D^2/sigma_D^2 + alpha_d^2/var_d.
    """
    b = state.beta_d
    var_d_noise = treatment_noise_var(state)
    r_d = state.d_star - (b[0] + state.gamma * data.z + data.x @ b[1:])
    alpha_y = np.where(data.d == 1, state.alpha1, state.alpha0)
    mu_alloc = np.empty(data.n)
    var_alloc = np.empty(data.n)
    for arm, dstate in ((1, state.dpm1), (0, state.dpm0)):
        idx = _arm_members(data, arm)
        mu_alloc[idx] = dstate.cluster_means[dstate.allocations]
        var_alloc[idx] = dstate.cluster_vars[dstate.allocations]
    beta_y0 = np.where(data.d == 1, state.beta1[0], state.beta0[0])
    xb = np.where(data.d == 1, data.x @ state.beta1[1:], data.x @ state.beta0[1:])
    r_y = data.y - (beta_y0 + xb + mu_alloc)
    prec = 1.0 + state.alpha_d ** 2 / var_d_noise + alpha_y ** 2 / var_alloc
    mean = (state.alpha_d * r_d / var_d_noise + alpha_y * r_y / var_alloc) / prec
    state.theta = mean + rng.generator.standard_normal(data.n) / np.sqrt(prec)
    return state.theta


def _ridge_draw(rng: Rng, design: np.ndarray, response: np.ndarray,
                obs_var: np.ndarray | float, prior_var: float) -> np.ndarray:
    """Draw from the conjugate normal posterior of a linear regression.

    obs_var is the per-row observation variance (scalar or vector); the prior
    is N(0, diag(prior_var)) with prior_var scalar or per-coefficient.  With
    zero rows the draw comes from the prior.
    """
    k = design.shape[1]
    prior_var = np.ones(k) * prior_var
    if design.shape[0] == 0:
        return rng.generator.standard_normal(k) * np.sqrt(prior_var)
    w = 1.0 / (np.ones(design.shape[0]) * obs_var)
    a = design.T @ (design * w[:, None]) + np.diag(1.0 / prior_var)
    b = design.T @ (response * w)
    chol = np.linalg.cholesky(a)
    mean = np.linalg.solve(chol.T, np.linalg.solve(chol, b))
    noise = np.linalg.solve(chol.T, rng.generator.standard_normal(k))
    return mean + noise


def _update_alpha_d(rng: Rng, state: ParamState, data: Dataset,
                    prior_var: float) -> None:
    """Random-walk Metropolis step for the treatment loading alpha_D.

    The conditional density given (d*, theta) is not conjugate because
    alpha_D sets both the regression mean and the residual variance
    1 - alpha_D^2.  The kernel mixes a local random walk (proposals outside
    (-1, 1) rejected outright) with an independence proposal from the prior,
    which restores fast mixing across the whole support when the likelihood
    is weak.
    """
    b = state.beta_d
    resid_base = state.d_star - (b[0] + state.gamma * data.z + data.x @ b[1:])

    def log_lik(alpha: float) -> float:
        var = 1.0 - alpha ** 2
        resid = resid_base - alpha * state.theta
        return -0.5 * data.n * np.log(var) - 0.5 * float(resid @ resid) / var

    def log_prior(alpha: float) -> float:
        return -0.5 * alpha ** 2 / prior_var

    if rng.generator.random() < 0.5:
        # independence proposal from the prior; the prior density cancels
        proposal = float(sample_truncated_normal(rng, 0.0, prior_var, -1.0, 1.0))
        log_ratio = log_lik(proposal) - log_lik(state.alpha_d)
    else:
        step = min(0.25, max(0.01, 2.4 / np.sqrt(data.n)))
        proposal = state.alpha_d + step * rng.generator.standard_normal()
        if abs(proposal) >= 1.0:
            return
        log_ratio = (log_lik(proposal) + log_prior(proposal)
                     - log_lik(state.alpha_d) - log_prior(state.alpha_d))
    if np.log(rng.generator.random()) < log_ratio:
        state.alpha_d = float(proposal)


def update_coefficients(rng: Rng, state: ParamState, data: Dataset,
                        prior_var: float = 100.0) -> ParamState:
    """Conjugate multivariate-normal updates of all regression coefficients.

    Treatment block (intercept, gamma, beta_D) regresses D* - alpha_D theta
    with noise variance 1 - alpha_D^2; alpha_D itself is bounded in (-1, 1)
    and gets a Metropolis step because it appears in both the mean and the
    noise variance.  Each outcome block (intercept, beta_d, alpha_d)
    regresses the de-allocated outcome with per-unit atom variances.
    Intercepts get an effectively flat prior: the mixture locations absorb
    the outcome level, so shrinking the intercept toward 0 would fight the
    recentering step.
    """
    wd = np.column_stack([np.ones(data.n), data.z, data.x])
    pv_d = np.full(wd.shape[1], prior_var)
    pv_d[0] = _INTERCEPT_PRIOR_VAR
    coef = _ridge_draw(rng, wd, state.d_star - state.alpha_d * state.theta,
                       treatment_noise_var(state), pv_d)
    state.beta_d = np.concatenate(([coef[0]], coef[2:]))
    state.gamma = float(coef[1])
    _update_alpha_d(rng, state, data, prior_var)

    for arm in (1, 0):
        dstate = state.dpm1 if arm == 1 else state.dpm0
        idx = _arm_members(data, arm)
        mu_alloc = dstate.cluster_means[dstate.allocations]
        var_alloc = dstate.cluster_vars[dstate.allocations]
        wy = np.column_stack([np.ones(len(idx)), data.x[idx], state.theta[idx]])
        pv_y = np.full(wy.shape[1], prior_var)
        pv_y[0] = _INTERCEPT_PRIOR_VAR
        resp = data.y[idx] - mu_alloc
        coef = _ridge_draw(rng, wy, resp, var_alloc, pv_y)
        if arm == 1:
            state.beta1 = coef[:-1]
            state.alpha1 = float(coef[-1])
        else:
            state.beta0 = coef[:-1]
            state.alpha0 = float(coef[-1])
    return state


def sign_switch(rng: Rng, state: ParamState, force: Optional[bool] = None) -> ParamState:
    """Flip (theta, alpha_D, alpha_1, alpha_0) jointly with probability 1/2.

    The likelihood only involves loading-factor products, so the flip is
    likelihood-invariant; it resolves the sign nonidentifiability.
    """
    flip = force if force is not None else bool(rng.generator.random() < 0.5)
    if flip:
        state.theta = -state.theta
        state.alpha_d = -state.alpha_d
        state.alpha1 = -state.alpha1
        state.alpha0 = -state.alpha0
    return state


def log_likelihood(state: ParamState, data: Dataset) -> float:
    """Observed-data log likelihood given the current latent state."""
    eta = treatment_index(state, data) / np.sqrt(treatment_noise_var(state))
    ll = float(np.sum(np.where(data.d == 1, norm.logcdf(eta), norm.logcdf(-eta))))
    for arm, dstate in ((1, state.dpm1), (0, state.dpm0)):
        idx = _arm_members(data, arm)
        mean = _arm_mean_no_error(state, data, arm)[idx] \
            + dstate.cluster_means[dstate.allocations]
        var = dstate.cluster_vars[dstate.allocations]
        resid = data.y[idx] - mean
        ll += float(np.sum(-0.5 * np.log(2.0 * np.pi * var) - 0.5 * resid ** 2 / var))
    return ll


def _init_state(rng: Rng, data: Dataset, config: ModelConfig) -> ParamState:
    n, p = data.n, data.p
    H = config.dpm_truncation
    design = np.column_stack([np.ones(n), data.z, data.x])
    names = ["intercept", "z", *data.column_names]
    _check_full_rank(design, names)

    theta = rng.generator.standard_normal(n)
    d_star = np.where(data.d == 1, 0.5, -0.5)
    # least-squares warm starts keep early sweeps numerically tame
    coef_d, *_ = np.linalg.lstsq(design, d_star, rcond=None)
    dpms = {}
    betas = {}
    for arm in (1, 0):
        idx = _arm_members(data, arm)
        xo = np.column_stack([np.ones(len(idx)), data.x[idx]])
        coef, *_ = np.linalg.lstsq(xo, data.y[idx], rcond=None)
        resid = data.y[idx] - xo @ coef
        var0 = max(float(np.var(resid)), 1e-6)
        betas[arm] = coef
        if config.atom_variance_prior is not None:
            av_shape, av_scale = config.atom_variance_prior
        else:
            av_shape, av_scale = 2.0, var0  # prior mean = initial residual variance
        dpms[arm] = DpmState(
            weights=np.full(H, 1.0 / H),
            cluster_means=np.zeros(H),
            cluster_vars=np.full(H, var0),
            allocations=rng.generator.integers(0, H, size=len(idx)),
            concentration=config.concentration_prior[0] / config.concentration_prior[1],
            base_mean=0.0,
            base_var=max(var0, 1.0),
            atom_var_shape=av_shape,
            atom_var_scale=av_scale,
            base_mean_mean=config.base_mean_hyper[0],
            base_mean_var=config.base_mean_hyper[3] / max(config.base_mean_hyper[2], 1.0),
        )
    state = ParamState(
        gamma=float(coef_d[1]),
        beta_d=np.concatenate(([coef_d[0]], coef_d[2:])),
        beta1=betas[1],
        beta0=betas[0],
        alpha_d=0.1,
        alpha1=0.1,
        alpha0=0.1,
        theta=theta,
        d_star=d_star,
        dpm1=dpms[1],
        dpm0=dpms[0],
    )
    return state


def _residuals(state: ParamState, data: Dataset, arm: int) -> np.ndarray:
    idx = _arm_members(data, arm)
    return data.y[idx] - _arm_mean_no_error(state, data, arm)[idx]


def _log_level() -> str:
    return os.environ.get("LIV_LOG", "info").lower()


def gibbs_sweep(rng: Rng, state: ParamState, data: Dataset, config: ModelConfig,
                recenter: bool = True,
                concentration_update: str = "escobar_west") -> ParamState:
    """One full sweep in the fixed documented order."""
    a, b = config.concentration_prior
    nu, psi_inv = config.base_variance_prior
    m0_mean, m0_var, k_shape, k_scale = config.base_mean_hyper

    update_dstar(rng, state, data)
    update_theta(rng, state, data)
    update_coefficients(rng, state, data, prior_var=config.prior_coef_variance)
    for arm in (1, 0):
        dstate = state.dpm1 if arm == 1 else state.dpm0
        resid = _residuals(state, data, arm)
        dpm.update_allocations(rng, resid, dstate)
        dpm.update_sticks_and_atoms(rng, dstate, resid)
    if recenter:
        for arm in (1, 0):
            dstate = state.dpm1 if arm == 1 else state.dpm0
            _, shift = dpm.recenter(dstate)
            if arm == 1:
                state.beta1[0] += shift
            else:
                state.beta0[0] += shift
    for arm in (1, 0):
        dstate = state.dpm1 if arm == 1 else state.dpm0
        if concentration_update == "escobar_west":
            dpm.update_concentration(rng, dstate, len(dstate.allocations), a, b)
        else:
            dpm.update_concentration_stick_conjugate(rng, dstate, a, b)
        dpm.update_base_measure(rng, dstate, nu, psi_inv,
                                m0_mean, m0_var, k_shape, k_scale)
    sign_switch(rng, state)
    return state


def gibbs_run(request: FitRequest, chain_id: int = 0,
              recenter: bool = True,
              concentration_update: str = "escobar_west") -> PosteriorDraws:
    """Run one chain and return the retained post-burn-in, thinned draws.

    Progress lines go to stderr as `chain=<k> iter=<i> loglik=<v>` every 1000
    iterations unless LIV_LOG=quiet.  Aborts if the log likelihood becomes
    non-finite.
    """
    config = request.effective_config()
    data = request.data
    rng = Rng(config.seed, chain_id)
    state = _init_state(rng, data, config)
    retained: list[ParamState] = []
    verbose = _log_level() != "quiet"
    for it in range(config.n_iter):
        gibbs_sweep(rng, state, data, config, recenter=recenter,
                    concentration_update=concentration_update)
        if (it + 1) % 1000 == 0:
            ll = log_likelihood(state, data)
            if verbose:
                print(f"chain={chain_id} iter={it + 1} loglik={ll:.4f}", file=sys.stderr)
            if not np.isfinite(ll):
                raise FloatingPointError(
                    f"log likelihood became non-finite at iteration {it + 1}")
        if it >= config.burn_in and (it - config.burn_in) % config.thin == config.thin - 1:
            retained.append(state.copy())
    if retained and not np.isfinite(log_likelihood(retained[-1], data)):
        raise FloatingPointError("log likelihood became non-finite by the final iteration")
    return PosteriorDraws(iterations=retained, meta=config, chain_id=chain_id)


def _run_chain(args) -> PosteriorDraws:
    request, chain_id = args
    return gibbs_run(request, chain_id=chain_id)


def fit_chains(request: FitRequest, workers: Optional[int] = None) -> list[PosteriorDraws]:
    """Run the configured number of independent chains (optionally parallel)."""
    n_chains = request.config.n_chains
    jobs = [(request, k) for k in range(n_chains)]
    if n_chains == 1 or workers == 1:
        return [_run_chain(j) for j in jobs]
    max_workers = min(workers or os.cpu_count() or 1, n_chains)
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_chain, jobs))
