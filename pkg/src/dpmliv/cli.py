"""Command-line interface.

Subcommands cover the full workflow: simulate data, fit chains, compute
effect estimates from saved draws, run diagnostics, compare methods by
replication, and sweep hyperpriors. All outputs are delimited files written
under --out, with a manifest.json recording hashes, seeds, and versions.
Figures are opt-in via --figures. Set LIV_LOG=quiet to silence progress.
"""

from __future__ import annotations

import functools
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import __version__, baselines, diagnostics, effects, report
from .data_model import (ColumnSchema, Dataset, ModelConfig, load_csv,
                         read_draws, write_draws)
from .liv_sampler import DPM_LIV, NORMAL_LIV, FitRequest, fit_chains
from .sensitivity import hyperprior_sweep
from .simulation import named_design, replicate, simulate


def _fail_cleanly(fn):
    """Convert exceptions into a single machine-parsable stderr line."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except Exception as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, config: ModelConfig | None = None,
                    data_path: Path | None = None, **extra) -> None:
    manifest = {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "pandas_version": pd.__version__,
        **extra,
    }
    if config is not None:
        payload = json.dumps(config.to_dict(), sort_keys=True).encode()
        manifest["config"] = config.to_dict()
        manifest["config_sha256"] = hashlib.sha256(payload).hexdigest()
        manifest["seed"] = config.seed
    if data_path is not None:
        manifest["data_path"] = str(data_path)
        manifest["data_sha256"] = _sha256(Path(data_path))
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def _out_dir(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


_schema_options = [
    click.option("--outcome", default="y", show_default=True,
                 help="Outcome column name."),
    click.option("--treatment", default="d", show_default=True,
                 help="Binary treatment column name."),
    click.option("--instrument", default="z", show_default=True,
                 help="Instrument column name."),
    click.option("--covariates", default=None,
                 help="Comma-separated covariate columns "
                      "(default: all remaining columns)."),
    click.option("--categorical", default=None,
                 help="Comma-separated categorical covariates to one-hot "
                      "encode."),
]


def _with_schema(fn):
    for opt in reversed(_schema_options):
        fn = opt(fn)
    return fn


def _load_data(data, outcome, treatment, instrument, covariates, categorical) -> Dataset:
    if covariates is None:
        header = pd.read_csv(data, nrows=0).columns
        covariates = [c for c in header if c not in (outcome, treatment, instrument)]
    else:
        covariates = [c.strip() for c in covariates.split(",") if c.strip()]
    categorical = tuple(c.strip() for c in categorical.split(",")) if categorical else ()
    schema = ColumnSchema(outcome=outcome, treatment=treatment,
                          instrument=instrument, covariates=tuple(covariates),
                          categorical=categorical)
    return load_csv(data, schema)


def _load_config(config, seed, chains) -> ModelConfig:
    cfg = ModelConfig.from_json(config) if config else ModelConfig()
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if chains is not None:
        overrides["n_chains"] = chains
    return cfg.replace(**overrides) if overrides else cfg


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Heterogeneous treatment-effect estimation with an instrumental
    variable and nonparametric outcome-error mixtures."""


@main.command("simulate")
@click.option("--design", default="gamma_strong", show_default=True,
              help="Named scenario (gamma_strong, gamma_weak, normal_strong, "
                   "normal_weak, mixture_strong, mixture_weak, pci_shaped).")
@click.option("--n", default=500, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, help="Output directory.")
@_fail_cleanly
def simulate_cmd(design: str, n: int, seed: int, out: str) -> None:
    """Generate a synthetic dataset and record its exact truth."""
    out_dir = _out_dir(out)
    scenario = named_design(design, n=n, seed=seed)
    data, truth = simulate(scenario)
    data.frame().to_csv(out_dir / "data.csv", index=False)
    with open(out_dir / "truth.json", "w") as fh:
        json.dump({
            "true_ate": truth.true_ate,
            "true_cate": truth.true_cate,
            "treated_fraction": truth.treated_fraction,
            "calibrated_intercept": truth.calibrated_intercept,
        }, fh, indent=2)
    _write_manifest(out_dir, data_path=out_dir / "data.csv",
                    design=design, n=scenario.n, seed=seed)
    click.echo(f"wrote {out_dir / 'data.csv'} (n={data.n}, "
               f"treated={truth.treated_fraction:.3f})")


@main.command("fit")
@click.option("--data", required=True, type=click.Path(exists=True))
@_with_schema
@click.option("--config", default=None, type=click.Path(exists=True),
              help="Model configuration JSON.")
@click.option("--seed", default=None, type=int)
@click.option("--chains", default=None, type=int)
@click.option("--variant", default="dpm", show_default=True,
              type=click.Choice(["dpm", "normal"]))
@click.option("--workers", default=None, type=int)
@click.option("--out", required=True)
@_fail_cleanly
def fit_cmd(data, outcome, treatment, instrument, covariates, categorical,
            config, seed, chains, variant, workers, out) -> None:
    """Run the Gibbs sampler and save per-chain posterior draws."""
    out_dir = _out_dir(out)
    dataset = _load_data(data, outcome, treatment, instrument, covariates,
                         categorical)
    cfg = _load_config(config, seed, chains)
    request = FitRequest(data=dataset, config=cfg,
                         variant=DPM_LIV if variant == "dpm" else NORMAL_LIV)
    chains_out = fit_chains(request, workers=workers)
    for chain in chains_out:
        write_draws(chain, out_dir / f"draws_chain{chain.chain_id}.csv")
    cfg.to_json(out_dir / "config.json")
    _write_manifest(out_dir, config=cfg, data_path=Path(data),
                    variant=variant, n_chains=len(chains_out))
    click.echo(f"wrote {len(chains_out)} chain(s) of "
               f"{cfg.n_retained} retained draws to {out_dir}")


def _read_fit(draws_dir: Path) -> tuple[list, ModelConfig]:
    cfg = ModelConfig.from_json(draws_dir / "config.json")
    chains = []
    for path in sorted(draws_dir.glob("draws_chain*.csv")):
        chain_id = int(path.stem.removeprefix("draws_chain"))
        chains.append(read_draws(path, cfg, chain_id=chain_id))
    if not chains:
        raise FileNotFoundError(f"no draws_chain*.csv files in {draws_dir}")
    return chains, cfg


@main.command("effects")
@click.option("--draws", "draws_dir", required=True, type=click.Path(exists=True),
              help="Directory written by `fit`.")
@click.option("--data", required=True, type=click.Path(exists=True))
@_with_schema
@click.option("--estimand", "estimands", multiple=True,
              type=click.Choice(["ate", "cate", "att", "pb"]),
              default=("ate",), show_default=True)
@click.option("--where", default=None,
              help="Subgroup condition for cate (pandas query syntax).")
@click.option("--z-value", default=1.0, show_default=True, type=float,
              help="Instrument level defining the treated-group weighting "
                   "for att.")
@click.option("--threshold", default=None, type=float,
              help="Benefit threshold for pb (default: configured value).")
@click.option("--out", required=True)
@_fail_cleanly
def effects_cmd(draws_dir, data, outcome, treatment, instrument, covariates,
                categorical, estimands, where, z_value, threshold, out) -> None:
    """Compute effect estimates from saved posterior draws."""
    out_dir = _out_dir(out)
    dataset = _load_data(data, outcome, treatment, instrument, covariates,
                         categorical)
    chains, cfg = _read_fit(Path(draws_dir))
    estimates = []
    for name in estimands:
        if name == "ate":
            estimates.append(effects.ate(chains, dataset))
        elif name == "cate":
            if where is None:
                raise click.UsageError("--where is required for cate")
            estimates.append(effects.cate(chains, dataset, where))
        elif name == "att":
            estimates.append(effects.att(chains, dataset, z_value))
        elif name == "pb":
            pb_threshold = cfg.pb_threshold if threshold is None else threshold
            estimates.append(effects.pb(chains, dataset, pb_threshold))
    table = effects.effect_table(estimates)
    table.to_csv(out_dir / "effects.csv", index=False)
    _write_manifest(out_dir, config=cfg, data_path=Path(data),
                    estimands=list(estimands))
    click.echo(table.to_string(index=False))


@main.command("diagnose")
@click.option("--data", required=True, type=click.Path(exists=True))
@_with_schema
@click.option("--draws", "draws_dir", default=None, type=click.Path(exists=True),
              help="Fit directory; adds convergence diagnostics when given.")
@click.option("--figures", is_flag=True, help="Also render figures.")
@click.option("--out", required=True)
@_fail_cleanly
def diagnose_cmd(data, outcome, treatment, instrument, covariates, categorical,
                 draws_dir, figures, out) -> None:
    """Instrument-strength, balance, and convergence diagnostics."""
    out_dir = _out_dir(out)
    dataset = _load_data(data, outcome, treatment, instrument, covariates,
                         categorical)
    fstat = diagnostics.instrument_f_stat(dataset)
    summary = {
        "f_stat": fstat.f_stat,
        "lr_chi2": fstat.lr_chi2,
        "instrument_strong": fstat.strong,
        "complier_proportion": diagnostics.complier_proportion(dataset),
    }
    balance = diagnostics.balance_table(dataset, grouping="by_instrument")
    balance.to_csv(out_dir / "balance.csv", index=False)
    if draws_dir is not None:
        chains, _ = _read_fit(Path(draws_dir))
        params = ["gamma", "alpha_d", "alpha1", "alpha0"]
        table = diagnostics.psrf_table(
            {p: [c.scalar_series(p) for c in chains] for p in params})
        table.to_csv(out_dir / "psrf.csv", index=False)
        summary["all_converged"] = bool(table["converged"].all())
        if figures:
            report.trace_figure(chains, out_dir / "trace.png")
    if figures:
        report.balance_figure(balance, out_dir / "balance.png")
    with open(out_dir / "diagnostics.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    _write_manifest(out_dir, data_path=Path(data))
    click.echo(json.dumps(summary))


@main.command("compare")
@click.option("--design", default="gamma_strong", show_default=True)
@click.option("--n", default=500, show_default=True, type=int)
@click.option("--reps", default=20, show_default=True, type=int)
@click.option("--methods", default="dpm,normal,2sls", show_default=True,
              help="Comma-separated subset of dpm, normal, 2sls, oracle.")
@click.option("--config", default=None, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--workers", default=None, type=int)
@click.option("--figures", is_flag=True, help="Also render figures.")
@click.option("--out", required=True)
@_fail_cleanly
def compare_cmd(design, n, reps, methods, config, seed, workers, figures,
                out) -> None:
    """Replicated method comparison on a synthetic scenario."""
    out_dir = _out_dir(out)
    scenario = named_design(design, n=n, seed=seed)
    cfg = _load_config(config, seed, None)
    method_list = [m.strip() for m in methods.split(",") if m.strip()]
    rep = replicate(scenario, n_reps=reps, methods=method_list, config=cfg,
                    workers=workers)
    rep.to_csv(out_dir / "replication.csv")
    if figures:
        report.replication_figure(rep, out_dir / "replication.png")
    _write_manifest(out_dir, config=cfg, design=design, n=n, reps=reps,
                    methods=method_list, n_failures=rep.n_failures)
    click.echo(rep.to_dataframe().to_string(index=False))
    if rep.n_failures:
        click.echo(f"warning: {rep.n_failures} replication(s) failed",
                   err=True)


@main.command("sweep")
@click.option("--data", required=True, type=click.Path(exists=True))
@_with_schema
@click.option("--config", default=None, type=click.Path(exists=True))
@click.option("--seed", default=None, type=int)
@click.option("--estimand", "estimands", multiple=True,
              type=click.Choice(["ate", "cate", "pb"]),
              default=("ate",), show_default=True)
@click.option("--where", default=None,
              help="Subgroup condition used when cate is requested.")
@click.option("--tolerance", default=0.10, show_default=True, type=float)
@click.option("--workers", default=None, type=int)
@click.option("--out", required=True)
@_fail_cleanly
def sweep_cmd(data, outcome, treatment, instrument, covariates, categorical,
              config, seed, estimands, where, tolerance, workers, out) -> None:
    """Refit across a grid of hyperprior settings and flag unstable results."""
    out_dir = _out_dir(out)
    dataset = _load_data(data, outcome, treatment, instrument, covariates,
                         categorical)
    cfg = _load_config(config, seed, None)
    rep = hyperprior_sweep(dataset, cfg, estimands=list(estimands),
                           cate_condition=where, tolerance=tolerance,
                           workers=workers)
    rep.to_csv(out_dir / "sweep.csv")
    _write_manifest(out_dir, config=cfg, data_path=Path(data),
                    tolerance=tolerance, stable=rep.stable)
    click.echo(rep.to_dataframe().to_string(index=False))
    if not rep.stable:
        click.echo(f"warning: {len(rep.flagged)} estimate(s) moved more than "
                   f"{tolerance:g} across hyperprior settings", err=True)


@main.command("baseline-2sls")
@click.option("--data", required=True, type=click.Path(exists=True))
@_with_schema
@click.option("--where", default=None, help="Optional subgroup condition.")
@click.option("--out", default=None)
@_fail_cleanly
def baseline_2sls_cmd(data, outcome, treatment, instrument, covariates,
                      categorical, where, out) -> None:
    """Two-stage least squares point estimate and confidence interval."""
    dataset = _load_data(data, outcome, treatment, instrument, covariates,
                         categorical)
    if where is None:
        est = baselines.two_stage_least_squares(dataset)
    else:
        est = baselines.two_stage_least_squares_cate(dataset, where)
    table = effects.effect_table([est], method="2sls")
    if out:
        out_dir = _out_dir(out)
        table.to_csv(out_dir / "effects.csv", index=False)
        _write_manifest(out_dir, data_path=Path(data))
    click.echo(table.to_string(index=False))


if __name__ == "__main__":
    main()
