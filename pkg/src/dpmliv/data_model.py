"""Domain types, dataset ingestion, and posterior-draw serialization."""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

__all__ = [
    "IngestionError",
    "ColumnSchema",
    "Dataset",
    "ModelConfig",
    "DpmState",
    "ParamState",
    "PosteriorDraws",
    "EffectEstimate",
    "load_csv",
    "write_draws",
    "read_draws",
]


class IngestionError(ValueError):
    """Raised whenever an input file cannot yield a valid Dataset."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ColumnSchema:
    """Column mapping for CSV ingestion.

    Covariates listed in `categorical` are one-hot expanded with the first
    level dropped; everything else must parse as numeric.
    """

    outcome: str
    treatment: str
    instrument: str
    covariates: tuple[str, ...]
    categorical: tuple[str, ...] = ()

    def __post_init__(self):
        unknown = set(self.categorical) - set(self.covariates)
        if unknown:
            raise ValueError(f"categorical columns not in covariates: {sorted(unknown)}")


@dataclass(frozen=True)
class Dataset:
    """Observed data (y, d, z, X).  Immutable after construction."""

    y: np.ndarray
    d: np.ndarray
    z: np.ndarray
    x: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self):
        y = _readonly(np.asarray(self.y, dtype=float))
        d = _readonly(np.asarray(self.d, dtype=int))
        z = _readonly(np.asarray(self.z, dtype=float))
        x = _readonly(np.atleast_2d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        n = len(y)
        if n < 2:
            raise IngestionError("dataset needs at least 2 rows")
        if len(d) != n or len(z) != n or x.shape[0] != n:
            raise IngestionError("y, d, z, x must have matching lengths")
        if x.shape[1] != len(self.column_names):
            raise IngestionError("column_names must match number of covariate columns")
        if not set(np.unique(d)) <= {0, 1}:
            raise IngestionError("treatment d must be binary 0/1")
        if d.sum() == 0 or d.sum() == n:
            raise IngestionError("treatment must include at least one treated and one control unit")
        for name, arr in (("y", y), ("z", z), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise IngestionError(f"non-finite values in {name}")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def frame(self) -> pd.DataFrame:
        """Covariates plus y/d/z as a DataFrame (for predicate evaluation)."""
        df = pd.DataFrame(np.asarray(self.x), columns=list(self.column_names))
        df["y"] = np.asarray(self.y)
        df["d"] = np.asarray(self.d)
        df["z"] = np.asarray(self.z)
        return df

    def mask(self, condition) -> np.ndarray:
        """Boolean unit mask from a predicate.

        `condition` is a pandas query string over covariate columns (plus
        y/d/z), a callable on the covariate frame, or a boolean array.
        """
        if condition is None:
            return np.ones(self.n, dtype=bool)
        if callable(condition):
            out = np.asarray(condition(self.frame()), dtype=bool)
        elif isinstance(condition, str):
            out = self.frame().eval(condition).to_numpy(dtype=bool)
        else:
            out = np.asarray(condition, dtype=bool)
        if out.shape != (self.n,):
            raise ValueError("condition must select over all units")
        return out


@dataclass(frozen=True)
class ModelConfig:
    """Priors, hyperpriors, and MCMC settings: the experiment contract.

    concentration_prior = (a, b) on each arm's Gamma concentration prior;
    base_variance_prior = (nu, psi_inv), the inverse-gamma prior on the base
    measure variance with prior mean psi_inv/(nu-1); base_mean_hyper =
    (m0_mean, m0_var, k_shape, k_scale) for the hierarchical prior on the
    base-measure mean.  atom_variance_prior = (shape, scale) on the mixture
    atom variances; None scales the prior to the initial residual variance.
    """

    n_iter: int = 20_000
    burn_in: int = 5_000
    thin: int = 10
    n_chains: int = 2
    seed: int = 0
    dpm_truncation: int = 50
    prior_coef_variance: float = 100.0
    concentration_prior: tuple[float, float] = (1.0, 1.0)
    base_variance_prior: tuple[float, float] = (1.0, 5.0)
    base_mean_hyper: tuple[float, float, float, float] = (0.0, 1.0, 1.0, 10.0)
    pb_threshold: float = 0.0
    atom_variance_prior: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if not self.n_iter > self.burn_in >= 0:
            raise ValueError("need n_iter > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.dpm_truncation < 1:
            raise ValueError("dpm_truncation must be >= 1")
        scales = [self.prior_coef_variance, *self.concentration_prior,
                  *self.base_variance_prior, self.base_mean_hyper[1],
                  self.base_mean_hyper[2], self.base_mean_hyper[3]]
        if self.atom_variance_prior is not None:
            scales += list(self.atom_variance_prior)
        if any(s <= 0 for s in scales):
            raise ValueError("all prior scales must be > 0")
        if not np.isfinite(self.pb_threshold):
            raise ValueError("pb_threshold must be finite")

    @property
    def n_retained(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        kw = dict(d)
        for k in ("concentration_prior", "base_variance_prior", "base_mean_hyper",
                  "atom_variance_prior"):
            if kw.get(k) is not None:
                kw[k] = tuple(kw[k])
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class DpmState:
    """Truncated stick-breaking mixture on one arm's outcome errors.

    `allocations` indexes units observed under this arm into [0, H).
    atom_var_shape/atom_var_scale are the inverse-gamma prior on the atom
    variances; base_mean_mean/base_mean_var are the current draws of the
    hyperparameters (m, K) on the base-measure mean.
    """

    weights: np.ndarray
    cluster_means: np.ndarray
    cluster_vars: np.ndarray
    allocations: np.ndarray
    concentration: float
    base_mean: float
    base_var: float
    atom_var_shape: float = 2.0
    atom_var_scale: float = 1.0
    base_mean_mean: float = 0.0
    base_mean_var: float = 1.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.cluster_means = np.asarray(self.cluster_means, dtype=float)
        self.cluster_vars = np.asarray(self.cluster_vars, dtype=float)
        self.allocations = np.asarray(self.allocations, dtype=np.int64)
        self.validate()

    @property
    def truncation(self) -> int:
        return len(self.weights)

    def validate(self) -> None:
        H = self.truncation
        if len(self.cluster_means) != H or len(self.cluster_vars) != H:
            raise ValueError("atoms must match truncation level")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("stick weights must be nonnegative and sum to 1")
        if np.any(self.cluster_vars <= 0):
            raise ValueError("cluster variances must be positive")
        if self.concentration <= 0 or self.base_var <= 0:
            raise ValueError("concentration and base variance must be positive")
        if len(self.allocations) and (self.allocations.min() < 0 or self.allocations.max() >= H):
            raise ValueError("allocations must index into [0, truncation)")

    def allocation_counts(self) -> np.ndarray:
        return np.bincount(self.allocations, minlength=self.truncation)

    def copy(self) -> "DpmState":
        return DpmState(
            weights=self.weights.copy(),
            cluster_means=self.cluster_means.copy(),
            cluster_vars=self.cluster_vars.copy(),
            allocations=self.allocations.copy(),
            concentration=self.concentration,
            base_mean=self.base_mean,
            base_var=self.base_var,
            atom_var_shape=self.atom_var_shape,
            atom_var_scale=self.atom_var_scale,
            base_mean_mean=self.base_mean_mean,
            base_mean_var=self.base_mean_var,
        )


@dataclass
class ParamState:
    """One sweep's parameter values.

    The treatment-error variance is fixed at 1 and therefore not stored.
    beta_d/beta1/beta0 carry the intercept as their first entry.
    """

    gamma: float
    beta_d: np.ndarray
    beta1: np.ndarray
    beta0: np.ndarray
    alpha_d: float
    alpha1: float
    alpha0: float
    theta: np.ndarray
    d_star: np.ndarray
    dpm1: DpmState
    dpm0: DpmState

    def __post_init__(self):
        self.beta_d = np.asarray(self.beta_d, dtype=float)
        self.beta1 = np.asarray(self.beta1, dtype=float)
        self.beta0 = np.asarray(self.beta0, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        self.d_star = np.asarray(self.d_star, dtype=float)

    def copy(self) -> "ParamState":
        return ParamState(
            gamma=self.gamma,
            beta_d=self.beta_d.copy(),
            beta1=self.beta1.copy(),
            beta0=self.beta0.copy(),
            alpha_d=self.alpha_d,
            alpha1=self.alpha1,
            alpha0=self.alpha0,
            theta=self.theta.copy(),
            d_star=self.d_star.copy(),
            dpm1=self.dpm1.copy(),
            dpm0=self.dpm0.copy(),
        )


@dataclass
class PosteriorDraws:
    """Retained post-burn-in, thinned states of one chain, in draw order."""

    iterations: list[ParamState]
    meta: ModelConfig
    chain_id: int = 0

    def __len__(self) -> int:
        return len(self.iterations)

    def scalar_series(self, name: str) -> np.ndarray:
        """Per-draw series of one scalar parameter (for convergence checks)."""
        return np.array([getattr(s, name) for s in self.iterations], dtype=float)


@dataclass
class EffectEstimate:
    """Posterior median and central 95% interval for one causal estimand."""

    estimand: str
    condition: Optional[str]
    posterior_median: float
    ci_low: float
    ci_high: float
    draws: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if not self.ci_low <= self.posterior_median <= self.ci_high:
            raise ValueError("need ci_low <= posterior_median <= ci_high")


def load_csv(path, schema: ColumnSchema) -> Dataset:
    """Read and validate a dataset.

    Categorical covariates are one-hot expanded (first level dropped).  No
    intercept column is added; the samplers add their own.  Every problem is
    reported as an IngestionError naming the offending row/column.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"file not found: {path}")
    df = pd.read_csv(path)
    needed = [schema.outcome, schema.treatment, schema.instrument, *schema.covariates]
    for col in needed:
        if col not in df.columns:
            raise IngestionError(f"missing column '{col}'")

    def numeric(col: str) -> np.ndarray:
        raw = df[col]
        if raw.isna().any():
            row = int(raw.isna().idxmax())
            raise IngestionError(f"missing value in column '{col}' at row {row}")
        vals = pd.to_numeric(raw, errors="coerce")
        if vals.isna().any():
            row = int(vals.isna().idxmax())
            raise IngestionError(f"non-numeric value in column '{col}' at row {row}")
        return vals.to_numpy(dtype=float)

    y = numeric(schema.outcome)
    d_raw = numeric(schema.treatment)
    bad = ~np.isin(d_raw, (0.0, 1.0))
    if bad.any():
        row = int(np.argmax(bad))
        raise IngestionError(f"treatment not binary at row {row}")
    d = d_raw.astype(int)
    if d.sum() == 0 or d.sum() == len(d):
        raise IngestionError("treatment column is all-treated or all-control")
    z = numeric(schema.instrument)

    blocks, names = [], []
    for col in schema.covariates:
        if col in schema.categorical:
            if df[col].isna().any():
                row = int(df[col].isna().idxmax())
                raise IngestionError(f"missing value in column '{col}' at row {row}")
            levels = sorted(df[col].astype(str).unique())
            for lev in levels[1:]:
                blocks.append((df[col].astype(str) == lev).to_numpy(dtype=float))
                names.append(f"{col}_{lev}")
        else:
            blocks.append(numeric(col))
            names.append(col)
    x = np.column_stack(blocks) if blocks else np.empty((len(y), 0))
    return Dataset(y=y, d=d, z=z, x=x, column_names=tuple(names))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _draw_columns(state: ParamState) -> list[tuple[str, object]]:
    cols: list[tuple[str, object]] = [("gamma", state.gamma)]
    for name, vec in (("beta_d", state.beta_d), ("beta1", state.beta1), ("beta0", state.beta0)):
        cols += [(f"{name}_{j}", v) for j, v in enumerate(vec)]
    cols += [("alpha_d", state.alpha_d), ("alpha1", state.alpha1), ("alpha0", state.alpha0)]
    cols += [(f"theta_{i}", v) for i, v in enumerate(state.theta)]
    cols += [(f"d_star_{i}", v) for i, v in enumerate(state.d_star)]
    for arm, dpm in (("1", state.dpm1), ("0", state.dpm0)):
        cols += [(f"dpm{arm}_w_{j}", v) for j, v in enumerate(dpm.weights)]
        cols += [(f"dpm{arm}_mu_{j}", v) for j, v in enumerate(dpm.cluster_means)]
        cols += [(f"dpm{arm}_var_{j}", v) for j, v in enumerate(dpm.cluster_vars)]
        cols += [(f"dpm{arm}_alloc_{i}", int(v)) for i, v in enumerate(dpm.allocations)]
        cols += [
            (f"dpm{arm}_concentration", dpm.concentration),
            (f"dpm{arm}_base_mean", dpm.base_mean),
            (f"dpm{arm}_base_var", dpm.base_var),
            (f"dpm{arm}_atom_var_shape", dpm.atom_var_shape),
            (f"dpm{arm}_atom_var_scale", dpm.atom_var_scale),
            (f"dpm{arm}_base_mean_mean", dpm.base_mean_mean),
            (f"dpm{arm}_base_mean_var", dpm.base_mean_var),
        ]
        counts = dpm.allocation_counts()
        mu_bar = float(counts @ dpm.cluster_means / max(counts.sum(), 1))
        cols.append((f"mu_bar_{arm}", mu_bar))
    return cols


def write_draws(draws: PosteriorDraws, path) -> None:
    """Flatten retained draws to CSV: one row per draw, one column per scalar.

    Summary columns mu_bar_1/mu_bar_0 carry the allocation-weighted mean of
    atom means per arm.  Floats are written with repr so the file round-trips
    bit-exactly through read_draws.
    """
    if not draws.iterations:
        raise ValueError("cannot write empty PosteriorDraws")
    header = [name for name, _ in _draw_columns(draws.iterations[0])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for state in draws.iterations:
            writer.writerow([_fmt(v) for _, v in _draw_columns(state)])


def _series(row: dict, prefix: str) -> np.ndarray:
    vals = []
    j = 0
    while f"{prefix}_{j}" in row:
        vals.append(float(row[f"{prefix}_{j}"]))
        j += 1
    return np.array(vals)


def read_draws(path, meta: ModelConfig, chain_id: int = 0) -> PosteriorDraws:
    """Inverse of write_draws.  `meta` supplies the config the file lacks."""
    states = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            dpms = {}
            for arm in ("1", "0"):
                alloc = _series(row, f"dpm{arm}_alloc").astype(np.int64)
                dpms[arm] = DpmState(
                    weights=_series(row, f"dpm{arm}_w"),
                    cluster_means=_series(row, f"dpm{arm}_mu"),
                    cluster_vars=_series(row, f"dpm{arm}_var"),
                    allocations=alloc,
                    concentration=float(row[f"dpm{arm}_concentration"]),
                    base_mean=float(row[f"dpm{arm}_base_mean"]),
                    base_var=float(row[f"dpm{arm}_base_var"]),
                    atom_var_shape=float(row[f"dpm{arm}_atom_var_shape"]),
                    atom_var_scale=float(row[f"dpm{arm}_atom_var_scale"]),
                    base_mean_mean=float(row[f"dpm{arm}_base_mean_mean"]),
                    base_mean_var=float(row[f"dpm{arm}_base_mean_var"]),
                )
            states.append(ParamState(
                gamma=float(row["gamma"]),
                beta_d=_series(row, "beta_d"),
                beta1=_series(row, "beta1"),
                beta0=_series(row, "beta0"),
                alpha_d=float(row["alpha_d"]),
                alpha1=float(row["alpha1"]),
                alpha0=float(row["alpha0"]),
                theta=_series(row, "theta"),
                d_star=_series(row, "d_star"),
                dpm1=dpms["1"],
                dpm0=dpms["0"],
            ))
    if not states:
        raise ValueError(f"no draws in {path}")
    return PosteriorDraws(iterations=states, meta=meta, chain_id=chain_id)
