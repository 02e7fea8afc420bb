"""Figure rendering for fitted chains, replication summaries, and covariate
balance. All writers save to a file path and return that path; no interactive
backends are required.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .data_model import PosteriorDraws

__all__ = ["trace_figure", "replication_figure", "balance_figure"]

_SCALARS = ("gamma", "alpha_d", "alpha1", "alpha0")


def trace_figure(chains: Sequence[PosteriorDraws], path,
                 params: Sequence[str] = _SCALARS) -> Path:
    """Overlaid per-chain trace plots of retained scalar draws."""
    path = Path(path)
    fig, axes = plt.subplots(len(params), 1, figsize=(8, 2.2 * len(params)),
                             sharex=True, squeeze=False)
    for ax, name in zip(axes[:, 0], params):
        for chain in chains:
            series = chain.scalar_series(name)
            ax.plot(np.arange(len(series)), series, lw=0.7,
                    label=f"chain {chain.chain_id}")
        ax.set_ylabel(name)
    axes[-1, 0].set_xlabel("retained draw")
    axes[0, 0].legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def replication_figure(report, path) -> Path:
    """Grouped bars of mean absolute bias and interval width by method."""
    path = Path(path)
    frame = report.to_dataframe()
    estimands = list(dict.fromkeys(frame["estimand"]))
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, metric in zip(axes, ("bias", "width")):
        methods = list(dict.fromkeys(frame["method"]))
        x = np.arange(len(estimands))
        bar_w = 0.8 / max(len(methods), 1)
        for k, method in enumerate(methods):
            sub = frame[frame["method"] == method].set_index("estimand")
            vals = [sub.loc[e, metric] if e in sub.index else np.nan
                    for e in estimands]
            ax.bar(x + k * bar_w, vals, bar_w, label=method)
        ax.set_xticks(x + 0.4 - bar_w / 2)
        ax.set_xticklabels(estimands, rotation=15)
        ax.set_title(f"mean {metric}")
    axes[0].legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def balance_figure(balance, path, flag_threshold: float = 0.1) -> Path:
    """Dot plot of standardized mean differences with the flag threshold."""
    path = Path(path)
    frame = balance if not hasattr(balance, "to_dataframe") else balance.to_dataframe()
    frame = frame[frame["computable"]] if "computable" in frame else frame
    fig, ax = plt.subplots(figsize=(7, 0.5 * max(len(frame), 4) + 1.5))
    y = np.arange(len(frame))
    ax.scatter(frame["smd"].abs(), y, color="tab:blue")
    ax.axvline(flag_threshold, color="tab:red", ls="--", lw=1)
    ax.set_yticks(y)
    ax.set_yticklabels(frame["covariate"])
    ax.set_xlabel("|standardized mean difference|")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
