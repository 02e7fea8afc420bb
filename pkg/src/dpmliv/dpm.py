"""Blocked-Gibbs updates for the truncated stick-breaking mixture on the
outcome errors.

Each arm's error distribution is an H-component normal mixture whose weights
come from truncated stick-breaking with the last stick forced to absorb the
remainder.  All conditionals here are conjugate.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .data_model import DpmState
from .rand_kernel import (
    Rng,
    sample_beta,
    sample_gamma,
    sample_inverse_gamma,
    sample_normal,
)

__all__ = [
    "stick_weights",
    "update_allocations",
    "update_sticks_and_atoms",
    "update_concentration",
    "update_concentration_stick_conjugate",
    "update_base_measure",
    "recenter",
]


def stick_weights(v: np.ndarray) -> np.ndarray:
    """Weights w_j = v_j prod_{l<j} (1 - v_l), with v_H forced to 1.

    The final stick absorbs the remainder so the weights sum to exactly 1.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or len(v) < 1:
        raise ValueError("v must be a nonempty vector")
    if np.any(v[:-1] <= 0) or np.any(v[:-1] >= 1):
        raise ValueError("stick fractions before the last must lie in (0, 1)")
    v = v.copy()
    v[-1] = 1.0
    remainder = np.concatenate(([1.0], np.cumprod(1.0 - v[:-1])))
    w = v * remainder
    # force exact telescoping sum
    w[-1] = max(1.0 - w[:-1].sum(), 0.0)
    return w


def update_allocations(rng: Rng, residuals: np.ndarray, state: DpmState) -> DpmState:
    """Reallocate each unit to an atom with prob ∝ w_j N(residual; mu_j, var_j).

    Normalization happens in log space, so simultaneous pdf underflow across
    all atoms never errors out.
    """
    r = np.asarray(residuals, dtype=float)
    logw = np.full(state.truncation, -np.inf)
    pos = state.weights > 0
    logw[pos] = np.log(state.weights[pos])
    # n x H log joint
    logp = (logw[None, :]
            - 0.5 * np.log(2.0 * np.pi * state.cluster_vars)[None, :]
            - 0.5 * (r[:, None] - state.cluster_means[None, :]) ** 2
            / state.cluster_vars[None, :])
    logp -= logsumexp(logp, axis=1, keepdims=True)
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = rng.generator.random(len(r))
    alloc = (u[:, None] > cdf).sum(axis=1)
    state.allocations = np.minimum(alloc, state.truncation - 1).astype(np.int64)
    return state


def update_sticks_and_atoms(rng: Rng, state: DpmState, residuals: np.ndarray) -> DpmState:
    """Conjugate updates for the stick fractions and the (mu, var) atoms.

    v_j ~ Beta(1 + n_j, c + sum_{l>j} n_l); occupied atoms get normal /
    inverse-gamma posteriors given their residuals; empty atoms are fresh
    draws from the base measure.
    """
    r = np.asarray(residuals, dtype=float)
    H = state.truncation
    counts = state.allocation_counts()
    tail = counts[::-1].cumsum()[::-1]  # tail[j] = sum_{l>=j} n_l
    v = np.empty(H)
    for j in range(H - 1):
        v[j] = sample_beta(rng, 1.0 + counts[j], state.concentration + tail[j + 1])
        v[j] = min(max(v[j], 1e-12), 1.0 - 1e-12)
    v[-1] = 1.0
    state.weights = stick_weights(v)

    sums = np.bincount(state.allocations, weights=r, minlength=H)
    for j in range(H):
        n_j = counts[j]
        if n_j == 0:
            state.cluster_means[j] = sample_normal(rng, state.base_mean, state.base_var)
            state.cluster_vars[j] = sample_inverse_gamma(
                rng, state.atom_var_shape, state.atom_var_scale)
            continue
        prec = 1.0 / state.base_var + n_j / state.cluster_vars[j]
        mean = (state.base_mean / state.base_var + sums[j] / state.cluster_vars[j]) / prec
        state.cluster_means[j] = sample_normal(rng, mean, 1.0 / prec)
        sq = np.sum((r[state.allocations == j] - state.cluster_means[j]) ** 2)
        state.cluster_vars[j] = sample_inverse_gamma(
            rng, state.atom_var_shape + 0.5 * n_j, state.atom_var_scale + 0.5 * sq)
    return state


def update_concentration(rng: Rng, state: DpmState, n_units: int,
                         a: float, b: float) -> float:
    """Escobar-West auxiliary-variable update for the concentration.

    Uses the number of occupied clusters; with no units the draw falls back
    to the Gamma(a, b) prior.
    """
    if a <= 0 or b <= 0:
        raise ValueError("concentration prior needs a, b > 0")
    if n_units == 0:
        c = sample_gamma(rng, a, b)
    else:
        k = int(np.count_nonzero(state.allocation_counts()))
        eta = sample_beta(rng, state.concentration + 1.0, float(n_units))
        rate = b - np.log(eta)
        odds = (a + k - 1.0) / (n_units * rate)
        if odds > 0 and rng.generator.random() < odds / (1.0 + odds):
            c = sample_gamma(rng, a + k, rate)
        else:
            c = sample_gamma(rng, max(a + k - 1.0, 1e-8), rate)
    state.concentration = c
    return c


def update_concentration_stick_conjugate(rng: Rng, state: DpmState,
                                         a: float, b: float) -> float:
    """Exact conjugate concentration update for the truncated-stick model.

    c | v ~ Gamma(a + H - 1, b - sum_{j<H} log(1 - v_j)), reconstructing the
    stick fractions from the weights.  Used where exactness w.r.t. the
    truncated model matters (joint-distribution checks).
    """
    H = state.truncation
    if H == 1:
        c = sample_gamma(rng, a, b)
    else:
        # sum_j log(1 - v_j) over the free sticks telescopes to log(w_H)
        log_last = np.log(max(state.weights[-1], 1e-300))
        c = sample_gamma(rng, a + H - 1.0, b - log_last)
    state.concentration = c
    return c


def update_base_measure(rng: Rng, state: DpmState,
                        nu: float, psi_inv: float,
                        m0_mean: float, m0_var: float,
                        k_shape: float, k_scale: float) -> tuple[float, float]:
    """Update the base-measure mean/variance (and their own hyperparameters).

    The base variance has an inverse-gamma prior with prior mean
    psi_inv/(nu - 1); the base mean is normal around a hyper-mean m with
    hyper-variance K, themselves updated conjugately.  Every atom mean is a
    base-measure draw under the truncated mixture (empty atoms are refreshed
    from it each sweep), so all H atoms inform the updates.
    """
    atoms = state.cluster_means
    k = len(atoms)

    m, K = state.base_mean_mean, state.base_mean_var
    # omega | atoms, m, K
    prec = 1.0 / K + k / state.base_var
    mean = (m / K + atoms.sum() / state.base_var) / prec
    state.base_mean = sample_normal(rng, mean, 1.0 / prec)
    # tau | atoms, omega
    sq = np.sum((atoms - state.base_mean) ** 2)
    state.base_var = sample_inverse_gamma(rng, nu + 0.5 * k, psi_inv + 0.5 * sq)
    # m | omega, K  and  K | omega, m
    prec_m = 1.0 / m0_var + 1.0 / K
    mean_m = (m0_mean / m0_var + state.base_mean / K) / prec_m
    state.base_mean_mean = sample_normal(rng, mean_m, 1.0 / prec_m)
    state.base_mean_var = sample_inverse_gamma(
        rng, k_shape + 0.5, k_scale + 0.5 * (state.base_mean - state.base_mean_mean) ** 2)
    return state.base_mean, state.base_var


def recenter(state: DpmState) -> tuple[DpmState, float]:
    """Enforce a zero-mean error distribution for this arm.

    Subtracts the allocation-weighted mean of atom means from every atom and
    returns it as a shift; the caller absorbs the shift into the arm
    intercept, leaving the likelihood unchanged.
    """
    counts = state.allocation_counts()
    total = counts.sum()
    if total == 0:
        return state, 0.0
    shift = float(counts @ state.cluster_means / total)
    state.cluster_means = state.cluster_means - shift
    return state, shift
