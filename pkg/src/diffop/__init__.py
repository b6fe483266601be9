"""Conditional denoising-diffusion surrogates for 1D parametric PDEs.

The package learns the input-to-solution map of a parameter-dependent PDE
from (input field, solution field) pairs by training a conditional
denoising-diffusion model, and quantifies uncertainty when the training
outputs carry additive Gaussian noise.
"""

from .checkpoint import TrainState, load_checkpoint, save_checkpoint
from .datasets import (
    NormStats,
    PairDataset,
    normalize_stats,
    read_dataset,
    write_dataset,
)
from .diffusion import (
    CovMode,
    NoiseSchedule,
    forward_marginal_sample,
    kl_diag_gaussian,
    loss_target,
    make_schedule,
    reverse_step,
    true_posterior_params,
)
from .evaluation import (
    EvalReport,
    ci_recovery,
    evaluate,
    joint_histogram,
    mrle,
    mstd,
    sample_conditional,
)
from .grids import Field, Grid1D
from .problems import (
    NoiseSpec,
    build_dataset,
    corrupt_outputs,
    solve_advection1d,
    solve_elliptic1d,
)
from .random_fields import (
    SpectralGrfSpec,
    TrigGrfSpec,
    sample_lognormal_field,
    sample_neumann_grf,
    threshold_indicator,
)
from .training import TrainConfig, adam_step, train
from .unet import ArchSpec, EpsilonPredictor, init_params, loss_and_grad, time_embedding

__version__ = "0.1.0"

__all__ = [
    "ArchSpec",
    "CovMode",
    "EpsilonPredictor",
    "EvalReport",
    "Field",
    "Grid1D",
    "NoiseSchedule",
    "NoiseSpec",
    "NormStats",
    "PairDataset",
    "SpectralGrfSpec",
    "TrainConfig",
    "TrainState",
    "TrigGrfSpec",
    "adam_step",
    "build_dataset",
    "ci_recovery",
    "corrupt_outputs",
    "evaluate",
    "forward_marginal_sample",
    "init_params",
    "joint_histogram",
    "kl_diag_gaussian",
    "load_checkpoint",
    "loss_and_grad",
    "loss_target",
    "make_schedule",
    "mrle",
    "mstd",
    "normalize_stats",
    "read_dataset",
    "reverse_step",
    "sample_conditional",
    "sample_lognormal_field",
    "sample_neumann_grf",
    "save_checkpoint",
    "solve_advection1d",
    "solve_elliptic1d",
    "threshold_indicator",
    "time_embedding",
    "train",
    "true_posterior_params",
    "write_dataset",
]
