"""Heterogeneous treatment-effect estimation with an instrumental variable,
a latent confounding index, and Dirichlet-process mixture outcome errors.
"""

__version__ = "0.1.0"

from .baselines import (normal_liv, two_stage_least_squares,
                        two_stage_least_squares_cate)
from .data_model import (ColumnSchema, Dataset, DpmState, EffectEstimate,
                         IngestionError, ModelConfig, ParamState,
                         PosteriorDraws, load_csv, read_draws, write_draws)
from .diagnostics import (balance_table, complier_proportion,
                          falsification_check, gelman_rubin,
                          instrument_f_stat, psrf_table)
from .effects import ate, att, cate, effect_table, pb
from .liv_sampler import (DPM_LIV, NORMAL_LIV, FitRequest,
                          RankDeficiencyError, fit_chains, gibbs_run)
from .sensitivity import SweepCell, SweepReport, default_grid, hyperprior_sweep
from .simulation import (ErrorLaw, ReplicationReport, SimDesign, SimTruth,
                         named_design, pci_shaped_design, replicate, simulate)

__all__ = [
    "__version__",
    "ColumnSchema", "Dataset", "DpmState", "EffectEstimate", "IngestionError",
    "ModelConfig", "ParamState", "PosteriorDraws", "load_csv", "read_draws",
    "write_draws",
    "DPM_LIV", "NORMAL_LIV", "FitRequest", "RankDeficiencyError",
    "fit_chains", "gibbs_run",
    "ate", "att", "cate", "pb", "effect_table",
    "normal_liv", "two_stage_least_squares", "two_stage_least_squares_cate",
    "balance_table", "complier_proportion", "falsification_check",
    "gelman_rubin", "instrument_f_stat", "psrf_table",
    "SweepCell", "SweepReport", "default_grid", "hyperprior_sweep",
    "ErrorLaw", "ReplicationReport", "SimDesign", "SimTruth", "named_design",
    "pci_shaped_design", "replicate", "simulate",
]
