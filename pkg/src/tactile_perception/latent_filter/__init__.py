"""Deep state-space filter over a partitioned latent state."""

from .distributions import GaussianDiag, fuse_gaussians, kl_diag
from .model import FilterOutput, LatentFilter, ModelConfig, gaussian_log_lik
from .training import (
    Curves,
    TrainConfig,
    TrainingData,
    TrainingDivergedError,
    beta_schedule,
    evaluate_elbo,
    load_checkpoint,
    save_checkpoint,
    smooth,
    train,
)

__all__ = [
    "Curves",
    "FilterOutput",
    "GaussianDiag",
    "LatentFilter",
    "ModelConfig",
    "TrainConfig",
    "TrainingData",
    "TrainingDivergedError",
    "beta_schedule",
    "evaluate_elbo",
    "fuse_gaussians",
    "gaussian_log_lik",
    "kl_diag",
    "load_checkpoint",
    "save_checkpoint",
    "smooth",
    "train",
]
