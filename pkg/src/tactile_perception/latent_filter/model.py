"""Action-conditioned latent filter with a partitioned latent state.

The latent state is split into ``z`` (inferable from a single frame) and
``y`` (needs accumulated evidence).  At every step the encoder belief over
``z`` is fused with the dynamics prediction; ``y`` is tracked by an LSTM
and, during training only, pulled towards a per-object prior.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional, Sequence

import torch
from torch import nn
import torch.nn.functional as F

from .distributions import GaussianDiag, fuse_gaussians, kl_diag
from .networks import MLP, ConvStack, DeconvStack, GaussianHead, HierarchicalPrior, RecurrentY, Transition

DECODER_MIN_VAR = 1e-3


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters.

    Image models set ``stream_channels`` (one entry per encoder stack);
    vector models (used for toy systems) set ``obs_dim`` instead.
    """

    stream_channels: tuple = (1, 2)
    image_size: int = 28
    obs_dim: Optional[int] = None
    n_z: int = 16
    n_y: int = 16
    n_a: int = 6
    n_labels: int = 32
    enc_channels: tuple = (16, 32, 32)
    hidden: int = 64
    lstm_hidden: int = 64
    min_var: float = 1e-4

    def __post_init__(self):
        if self.obs_dim is None and not self.stream_channels:
            raise ValueError("need image stream channels or obs_dim")
        if min(self.n_z, self.n_y, self.n_a, self.n_labels) <= 0:
            raise ValueError("latent, action and label sizes must be positive")

    @property
    def is_vector(self) -> bool:
        return self.obs_dim is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stream_channels"] = list(self.stream_channels)
        d["enc_channels"] = list(self.enc_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["stream_channels"] = tuple(d["stream_channels"])
        d["enc_channels"] = tuple(d["enc_channels"])
        return cls(**d)


class FilterOutput(NamedTuple):
    encoder: GaussianDiag  # (B, T, n_z)
    prediction: Optional[GaussianDiag]  # (B, T-1, n_z), steps 2..T
    filtered: GaussianDiag  # (B, T, n_z)
    y: GaussianDiag  # (B, T, n_y)
    z_samples: torch.Tensor
    y_samples: torch.Tensor


def gaussian_log_lik(x: torch.Tensor, mean: torch.Tensor, var: torch.Tensor) -> torch.Tensor:
    """Elementwise Gaussian log density, summed over all but the first two axes."""
    lp = -0.5 * ((x - mean) ** 2 / var + torch.log(var) + math.log(2 * math.pi))
    return lp.flatten(2).sum(-1)


class LatentFilter(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = cfg = config
        if cfg.is_vector:
            self.enc_stacks = nn.ModuleList([MLP(cfg.obs_dim, cfg.hidden, cfg.hidden)])
            self.decoders = nn.ModuleList([MLP(cfg.n_z, cfg.obs_dim, cfg.hidden)])
            n_dec_channels = [cfg.obs_dim]
        else:
            self.enc_stacks = nn.ModuleList(
                [ConvStack(c, cfg.image_size, cfg.enc_channels) for c in cfg.stream_channels]
            )
            self.decoders = nn.ModuleList(
                [DeconvStack(cfg.n_z, c, cfg.image_size, cfg.enc_channels) for c in cfg.stream_channels]
            )
            n_dec_channels = list(cfg.stream_channels)
        feat = sum(s.out_features for s in self.enc_stacks)
        self.enc_head = GaussianHead(feat, cfg.n_z, cfg.min_var)
        # learned per-channel observation noise, one vector per stream
        self.dec_raw_var = nn.ParameterList([nn.Parameter(torch.zeros(c)) for c in n_dec_channels])

        self.transition_net = Transition(cfg.n_z, cfg.n_y, cfg.n_a, cfg.hidden, cfg.min_var)
        self.recurrent = RecurrentY(cfg.n_z, cfg.n_y, cfg.n_a, cfg.lstm_hidden, cfg.min_var)
        self.prior_y = HierarchicalPrior(cfg.n_labels, cfg.n_y, cfg.n_a, cfg.min_var)
        self.y1_mean = nn.Parameter(torch.zeros(cfg.n_y))
        self.y1_raw_var = nn.Parameter(torch.zeros(cfg.n_y))
        self.z1_mean = nn.Parameter(torch.zeros(cfg.n_z))
        self.z1_raw_var = nn.Parameter(torch.zeros(cfg.n_z))

    # -- shapes ---------------------------------------------------------
    def _check_streams(self, streams: Sequence[torch.Tensor]):
        cfg = self.config
        if len(streams) != len(self.enc_stacks):
            raise ValueError(f"expected {len(self.enc_stacks)} observation streams, got {len(streams)}")
        for k, s in enumerate(streams):
            if cfg.is_vector:
                ok = s.shape[-1] == cfg.obs_dim
                want = f"(..., {cfg.obs_dim})"
            else:
                c = cfg.stream_channels[k]
                ok = tuple(s.shape[-3:]) == (c, cfg.image_size, cfg.image_size)
                want = f"(..., {c}, {cfg.image_size}, {cfg.image_size})"
            if not ok:
                raise ValueError(f"stream {k} has shape {tuple(s.shape)}, expected {want}")

    # -- components -----------------------------------------------------
    def encode(self, streams: Sequence[torch.Tensor]) -> GaussianDiag:
        """q(z_t | o_t) for frames with arbitrary leading batch axes."""
        streams = [torch.as_tensor(s) for s in streams]
        self._check_streams(streams)
        ndim = 1 if self.config.is_vector else 3
        lead = streams[0].shape[:-ndim]
        feats = [stack(s.reshape((-1,) + tuple(s.shape[-ndim:]))) for stack, s in zip(self.enc_stacks, streams)]
        g = self.enc_head(torch.cat(feats, dim=-1))
        return GaussianDiag(g.mean.reshape(lead + (-1,)), g.var.reshape(lead + (-1,)))

    def decode(self, z: torch.Tensor) -> list[tuple[torch.Tensor, torch.Tensor]]:
        """Per-stream (mean, variance) of p(o_t | z_t)."""
        lead = z.shape[:-1]
        flat = z.reshape(-1, z.shape[-1])
        out = []
        for dec, raw in zip(self.decoders, self.dec_raw_var):
            mean = dec(flat)
            mean = mean.reshape(lead + tuple(mean.shape[1:]))
            var = F.softplus(raw) + DECODER_MIN_VAR
            if not self.config.is_vector:
                var = var[:, None, None]
            out.append((mean, var.expand_as(mean)))
        return out

    def transition(self, z_prev, y_t, a_t) -> GaussianDiag:
        return self.transition_net(z_prev, y_t, a_t)

    def recurrent_y(self, z_prev, y_prev, a_prev, hidden=None):
        if hidden is None:
            hidden = self.recurrent.initial_state(z_prev.shape[0], z_prev)
        return self.recurrent(z_prev, y_prev, a_prev, hidden)

    def hierarchical_prior(self, a_t, labels) -> GaussianDiag:
        return self.prior_y(a_t, labels)

    def initial_y(self, batch: int) -> GaussianDiag:
        var = F.softplus(self.y1_raw_var) + self.config.min_var
        return GaussianDiag(self.y1_mean.expand(batch, -1), var.expand(batch, -1))

    def initial_z_prior(self, batch: int) -> GaussianDiag:
        var = F.softplus(self.z1_raw_var) + self.config.min_var
        return GaussianDiag(self.z1_mean.expand(batch, -1), var.expand(batch, -1))

    # -- filtering ------------------------------------------------------
    def filter_sequence(
        self,
        streams: Sequence[torch.Tensor],
        actions: torch.Tensor,
        eps_z: Optional[torch.Tensor] = None,
        eps_y: Optional[torch.Tensor] = None,
        encoder_beliefs: Optional[GaussianDiag] = None,
    ) -> FilterOutput:
        """Run the filter over ``(B, T, ...)`` streams and ``(B, T, n_a)`` actions.

        ``eps_z``/``eps_y`` are the standard-normal draws used for the
        reparameterized samples; when omitted they are zero and the pass
        propagates means.  ``encoder_beliefs`` replaces the encoder output.
        """
        cfg = self.config
        actions = torch.as_tensor(actions)
        B, T = actions.shape[:2]
        if actions.shape[-1] != cfg.n_a:
            raise ValueError(f"actions have {actions.shape[-1]} components, expected {cfg.n_a}")
        for s in streams:
            if tuple(s.shape[:2]) != (B, T):
                raise ValueError(f"observation stream {tuple(s.shape[:2])} and actions {(B, T)} are not aligned")
        enc = self.encode(streams) if encoder_beliefs is None else encoder_beliefs
        if eps_z is None:
            eps_z = actions.new_zeros(B, T, cfg.n_z)
        if eps_y is None:
            eps_y = actions.new_zeros(B, T, cfg.n_y)

        q_y = self.initial_y(B)
        y = q_y.sample(eps_y[:, 0])
        q_z = enc[:, 0]
        z = q_z.sample(eps_z[:, 0])
        hidden = self.recurrent.initial_state(B, actions)
        filt, preds, ys, zs, yss = [q_z], [], [q_y], [z], [y]
        for t in range(1, T):
            q_y, hidden = self.recurrent(z, y, actions[:, t - 1], hidden)
            y = q_y.sample(eps_y[:, t])
            pred = self.transition_net(z, y, actions[:, t])
            q_z = fuse_gaussians(enc[:, t], pred)
            z = q_z.sample(eps_z[:, t])
            filt.append(q_z)
            preds.append(pred)
            ys.append(q_y)
            zs.append(z)
            yss.append(y)
        return FilterOutput(
            encoder=enc,
            prediction=GaussianDiag.stack(preds) if preds else None,
            filtered=GaussianDiag.stack(filt),
            y=GaussianDiag.stack(ys),
            z_samples=torch.stack(zs, 1),
            y_samples=torch.stack(yss, 1),
        )

    # -- objective ------------------------------------------------------
    def elbo(
        self,
        streams: Sequence[torch.Tensor],
        actions: torch.Tensor,
        labels=None,
        beta: float = 1.0,
        eps_z: Optional[torch.Tensor] = None,
        eps_y: Optional[torch.Tensor] = None,
        initial_kl: bool = True,
    ):
        """Per-sequence ELBO averaged over the batch, plus its terms.

        With ``initial_kl`` the first-step beliefs are also charged against
        the learned initial priors, which keeps the objective a proper bound.
        Without labels the object-prior term is omitted and ``y`` acts as
        its own prior.
        """
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {beta}")
        out = self.filter_sequence(streams, actions, eps_z, eps_y)
        B = actions.shape[0]
        recon = 0.0
        sq_err, n_el = 0.0, 0
        for (mean, var), obs in zip(self.decode(out.z_samples), streams):
            recon = recon + gaussian_log_lik(obs, mean, var).sum(1)
            sq_err = sq_err + ((obs - mean) ** 2).sum()
            n_el += obs.numel()

        kl_z = actions.new_zeros(B)
        if out.prediction is not None:
            kl_z = kl_z + kl_diag(out.filtered[:, 1:], out.prediction).sum(1)
        if initial_kl:
            kl_z = kl_z + kl_diag(out.filtered[:, 0], self.initial_z_prior(B))
        kl_y = actions.new_zeros(B)
        if labels is not None:
            labels = torch.as_tensor(labels, dtype=torch.long, device=actions.device)
            lab = labels[:, None].expand(B, actions.shape[1])
            prior = self.prior_y(actions, lab)
            start = 0 if initial_kl else 1
            kl_y = kl_diag(out.y[:, start:], prior[:, start:]).sum(1)

        elbo = recon - beta * (kl_z + kl_y)
        terms = {
            "elbo": elbo.mean(),
            "recon": recon.mean(),
            "kl_z": kl_z.mean(),
            "kl_y": kl_y.mean(),
            "mse": sq_err / n_el,
        }
        return elbo.mean(), terms

    @torch.no_grad()
    def latent_features(self, streams, actions) -> torch.Tensor:
        """Noise-free filtered means ``[z, y]`` per step, shape ``(B, T, n_z + n_y)``."""
        out = self.filter_sequence(streams, actions)
        return torch.cat([out.filtered.mean, out.y.mean], dim=-1)
