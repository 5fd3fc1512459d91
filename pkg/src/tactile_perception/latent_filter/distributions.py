"""Diagonal Gaussian beliefs, precision-weighted fusion and closed-form KL."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F


def _is_torch(x) -> bool:
    return isinstance(x, torch.Tensor)


def _log(x):
    return torch.log(x) if _is_torch(x) else np.log(x)


@dataclass
class GaussianDiag:
    """Independent Gaussians along the last axis (torch tensors or numpy arrays)."""

    mean: object
    var: object

    def __post_init__(self):
        if tuple(self.mean.shape) != tuple(self.var.shape):
            raise ValueError(f"mean {tuple(self.mean.shape)} and variance {tuple(self.var.shape)} differ in shape")

    @classmethod
    def from_raw(cls, mean: torch.Tensor, raw_var: torch.Tensor, min_var: float = 1e-4) -> "GaussianDiag":
        """Positive variance from an unconstrained network output."""
        return cls(mean, F.softplus(raw_var) + min_var)

    @property
    def std(self):
        return self.var**0.5

    def sample(self, eps):
        """Reparameterized draw ``mean + std * eps``."""
        return self.mean + self.std * eps

    def log_prob(self, x):
        """Log density summed over the last axis."""
        return -0.5 * ((x - self.mean) ** 2 / self.var + _log(self.var) + math.log(2 * math.pi)).sum(-1)

    def __getitem__(self, idx) -> "GaussianDiag":
        return GaussianDiag(self.mean[idx], self.var[idx])

    @staticmethod
    def stack(items, dim: int = 1) -> "GaussianDiag":
        return GaussianDiag(torch.stack([g.mean for g in items], dim), torch.stack([g.var for g in items], dim))


def _check_positive(var, name: str):
    bad = (var <= 0).any()
    if bool(bad):
        raise ValueError(f"{name} variance must be strictly positive")


def fuse_gaussians(meas: GaussianDiag, pred: GaussianDiag) -> GaussianDiag:
    """Normalized product of two diagonal Gaussians.

    Precisions add and the mean is the precision-weighted average; the
    normalizing constant of the product is dropped.
    """
    if tuple(meas.mean.shape) != tuple(pred.mean.shape):
        raise ValueError("beliefs to fuse must have equal dimensions")
    _check_positive(meas.var, "measurement")
    _check_positive(pred.var, "prediction")
    total = meas.var + pred.var
    var = meas.var * pred.var / total
    mean = (meas.mean * pred.var + pred.mean * meas.var) / total
    return GaussianDiag(mean, var)


def kl_diag(q: GaussianDiag, p: GaussianDiag):
    """KL(q || p) summed over the last axis."""
    if tuple(q.mean.shape) != tuple(p.mean.shape):
        raise ValueError("KL arguments must have equal dimensions")
    ratio = q.var / p.var
    return 0.5 * (ratio + (q.mean - p.mean) ** 2 / p.var - 1.0 - _log(ratio)).sum(-1)
