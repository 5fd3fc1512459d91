"""Adam training of the latent filter on the annealed ELBO, plus checkpoints."""

from __future__ import annotations

import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from ..preprocessing import PREPROCESSING_VERSION
from .model import LatentFilter, ModelConfig

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "latent-filter-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, msg: str, dump_path: Optional[str] = None):
        super().__init__(msg if dump_path is None else f"{msg} (batch dumped to {dump_path})")
        self.dump_path = dump_path


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 48
    epochs: int = 500
    anneal_fraction: float = 0.2  # share of the run over which beta ramps up
    beta_min: float = 0.01
    seed: int = 0
    fusion_mode: str = "MULTI_L"
    primitive: str = "PRESSING"
    window: Optional[int] = None  # random sub-sequence length, None = full trials
    max_steps: Optional[int] = None  # overrides epochs when set
    dump_dir: Optional[str] = None

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("batch_size and epochs must be positive")
        if not 0.0 <= self.beta_min <= 1.0:
            raise ValueError("beta_min must lie in [0, 1]")
        if not 0.0 <= self.anneal_fraction <= 1.0:
            raise ValueError("anneal_fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingData:
    """Aligned sequences: ``streams[k]`` is ``(N, T, ...)``, actions ``(N, T, n_a)``."""

    streams: Sequence[np.ndarray]
    actions: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        n, t = self.actions.shape[:2]
        for s in self.streams:
            if s.shape[:2] != (n, t):
                raise ValueError(f"stream shape {s.shape[:2]} does not match actions {(n, t)}")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("one label per sequence is required")

    def __len__(self) -> int:
        return self.actions.shape[0]

    @property
    def seq_len(self) -> int:
        return self.actions.shape[1]


@dataclass
class Curves:
    step: list = field(default_factory=list)
    epoch: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    elbo: list = field(default_factory=list)
    recon: list = field(default_factory=list)
    kl_z: list = field(default_factory=list)
    kl_y: list = field(default_factory=list)
    mse: list = field(default_factory=list)

    def append(self, **row):
        for k, v in row.items():
            getattr(self, k).append(v)

    def as_dict(self) -> dict:
        return asdict(self)

    def per_epoch(self) -> dict:
        """Mean of every curve within each epoch."""
        ep = np.asarray(self.epoch)
        out = {"epoch": sorted(set(self.epoch))}
        for name in ("beta", "elbo", "recon", "kl_z", "kl_y", "mse"):
            vals = np.asarray(getattr(self, name))
            out[name] = [float(vals[ep == e].mean()) for e in out["epoch"]]
        return out


def beta_schedule(progress: float, anneal_end: float, beta_min: float = 0.01) -> float:
    """Linear ramp from ``beta_min`` at 0 to 1 at ``anneal_end`` (same units)."""
    if anneal_end <= 0:
        return 1.0
    return float(beta_min + (1.0 - beta_min) * min(1.0, max(0.0, progress / anneal_end)))


def smooth(values, width: int = 25) -> np.ndarray:
    """Trailing moving average, shorter at the start."""
    v = np.asarray(values, dtype=float)
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - width)
    return (c[idx] - c[lo]) / (idx - lo)


def _dump_batch(cfg: TrainConfig, step: int, batch: dict) -> str:
    d = cfg.dump_dir or tempfile.gettempdir()
    os.makedirs(d, exist_ok=True)
    path = os.path.join(d, f"diverged_step{step}.npz")
    np.savez(path, **{k: v.detach().cpu().numpy() for k, v in batch.items()})
    return path


def _batch(data: TrainingData, idx: np.ndarray, start: np.ndarray, length: int, dtype) -> dict:
    rows = idx[:, None]
    cols = start[:, None] + np.arange(length)[None, :]
    out = {f"stream{k}": torch.as_tensor(s[rows, cols], dtype=dtype) for k, s in enumerate(data.streams)}
    out["actions"] = torch.as_tensor(data.actions[rows, cols], dtype=dtype)
    if data.labels is not None:
        out["labels"] = torch.as_tensor(np.asarray(data.labels)[idx], dtype=torch.long)
    return out


def train(
    data: TrainingData,
    config: TrainConfig,
    model_config: Optional[ModelConfig] = None,
    model: Optional[LatentFilter] = None,
    callback: Optional[Callable[[int, LatentFilter, dict], None]] = None,
    dtype=torch.float32,
):
    """Maximize the annealed ELBO with Adam.

    Returns ``(model, curves)``.  ``callback(step, model, terms)`` runs after
    every optimizer step.  A non-finite loss dumps the batch and raises
    :class:`TrainingDivergedError`.
    """
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    if model is None:
        model = LatentFilter(model_config or ModelConfig())
    model = model.to(dtype)
    cfg_m = model.config
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    n = len(data)
    window = min(config.window or data.seq_len, data.seq_len)
    bs = min(config.batch_size, n)
    steps_per_epoch = math.ceil(n / bs)
    total = config.max_steps or config.epochs * steps_per_epoch
    anneal_end = config.anneal_fraction * total
    curves = Curves()

    step = 0
    epoch = 0
    while step < total:
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            if step >= total:
                break
            idx = order[b * bs : (b + 1) * bs]
            start = rng.integers(0, data.seq_len - window + 1, size=len(idx))
            batch = _batch(data, idx, start, window, dtype)
            beta = beta_schedule(step, anneal_end, config.beta_min)
            eps_z = torch.randn(len(idx), window, cfg_m.n_z, generator=gen, dtype=dtype)
            eps_y = torch.randn(len(idx), window, cfg_m.n_y, generator=gen, dtype=dtype)
            streams = [batch[f"stream{k}"] for k in range(len(data.streams))]
            elbo, terms = model.elbo(streams, batch["actions"], batch.get("labels"), beta, eps_z, eps_y)
            loss = -elbo
            if not torch.isfinite(loss):
                path = _dump_batch(config, step, batch)
                raise TrainingDivergedError(f"non-finite loss at step {step}", path)
            opt.zero_grad()
            loss.backward()
            opt.step()
            row = {k: float(v.detach()) for k, v in terms.items()}
            curves.append(step=step, epoch=epoch, beta=beta, **row)
            if callback is not None:
                callback(step, model, row)
            step += 1
        epoch += 1
        if log.isEnabledFor(logging.DEBUG):
            log.debug("epoch %d step %d elbo %.4g", epoch, step, curves.elbo[-1])
    return model, curves


@torch.no_grad()
def evaluate_elbo(
    model: LatentFilter,
    streams: Sequence[torch.Tensor],
    actions: torch.Tensor,
    labels=None,
    n_samples: int = 16,
    seed: int = 0,
    beta: float = 1.0,
) -> float:
    """Monte Carlo estimate of the mean per-sequence ELBO."""
    gen = torch.Generator().manual_seed(seed)
    B, T = actions.shape[:2]
    dtype = actions.dtype
    total = 0.0
    for _ in range(n_samples):
        eps_z = torch.randn(B, T, model.config.n_z, generator=gen, dtype=dtype)
        eps_y = torch.randn(B, T, model.config.n_y, generator=gen, dtype=dtype)
        elbo, _ = model.elbo(streams, actions, labels, beta, eps_z, eps_y)
        total += float(elbo)
    return total / n_samples


def save_checkpoint(path, model: LatentFilter, train_config: Optional[TrainConfig] = None, extra: Optional[dict] = None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "preprocessing_version": PREPROCESSING_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": None if train_config is None else train_config.to_dict(),
        "seed": None if train_config is None else train_config.seed,
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "extra": extra or {},
    }
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns ``(model, train_config, extra)``."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a latent filter checkpoint")
    if payload["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {payload['version']} is not supported (expected {CHECKPOINT_VERSION})")
    if payload["preprocessing_version"] != PREPROCESSING_VERSION:
        raise ValueError(
            f"checkpoint was trained on preprocessing {payload['preprocessing_version']}, "
            f"current is {PREPROCESSING_VERSION}"
        )
    model = LatentFilter(ModelConfig.from_dict(payload["model_config"]))
    dtype = next(iter(payload["state_dict"].values())).dtype
    model = model.to(dtype)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    tc = payload["train_config"]
    return model, (None if tc is None else TrainConfig(**tc)), payload["extra"]
