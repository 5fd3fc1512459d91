"""Network building blocks of the latent filter."""

from __future__ import annotations

import torch
from torch import nn

from .distributions import GaussianDiag


def conv_sizes(size: int, n_layers: int) -> list[int]:
    """Spatial sizes through stride-2, kernel-3, padding-1 convolutions."""
    sizes = [size]
    for _ in range(n_layers):
        sizes.append((sizes[-1] - 1) // 2 + 1)
    return sizes


class ConvStack(nn.Module):
    """Three stride-2 convolutions followed by a flatten."""

    def __init__(self, in_channels: int, image_size: int, channels=(16, 32, 32)):
        super().__init__()
        layers = []
        c_in = in_channels
        for c in channels:
            layers += [nn.Conv2d(c_in, c, 3, stride=2, padding=1), nn.ELU()]
            c_in = c
        self.net = nn.Sequential(*layers, nn.Flatten())
        self.out_features = channels[-1] * conv_sizes(image_size, len(channels))[-1] ** 2

    def forward(self, x):
        return self.net(x)


class DeconvStack(nn.Module):
    """Mirror of :class:`ConvStack`: dense layer then transposed convolutions."""

    def __init__(self, latent_dim: int, out_channels: int, image_size: int, channels=(16, 32, 32)):
        super().__init__()
        sizes = conv_sizes(image_size, len(channels))
        self.start_channels = channels[-1]
        self.start_size = sizes[-1]
        self.fc = nn.Sequential(nn.Linear(latent_dim, channels[-1] * sizes[-1] ** 2), nn.ELU())
        layers = []
        rev = list(channels[::-1]) + [out_channels]
        for k in range(len(channels)):
            s_in, s_out = sizes[-1 - k], sizes[-2 - k]
            out_pad = s_out - (2 * s_in - 1)
            layers.append(nn.ConvTranspose2d(rev[k], rev[k + 1], 3, stride=2, padding=1, output_padding=out_pad))
            if k < len(channels) - 1:
                layers.append(nn.ELU())
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        h = self.fc(z).view(-1, self.start_channels, self.start_size, self.start_size)
        return self.net(h)


class MLP(nn.Module):
    """Two-layer perceptron with a linear skip path, for vector observations."""

    def __init__(self, n_in: int, n_out: int, hidden: int = 32):
        super().__init__()
        self.body = nn.Sequential(nn.Linear(n_in, hidden), nn.ELU(), nn.Linear(hidden, n_out))
        self.skip = nn.Linear(n_in, n_out, bias=False)
        self.out_features = n_out

    def forward(self, x):
        return self.body(x) + self.skip(x)


class GaussianHead(nn.Module):
    def __init__(self, n_in: int, n_out: int, min_var: float = 1e-4):
        super().__init__()
        self.linear = nn.Linear(n_in, 2 * n_out)
        self.min_var = min_var

    def forward(self, h) -> GaussianDiag:
        mean, raw = self.linear(h).chunk(2, dim=-1)
        return GaussianDiag.from_raw(mean, raw, self.min_var)


class Transition(nn.Module):
    """Predicts z_t from (z_{t-1}, y_t, a_t) as a residual on z_{t-1}.

    Output layers start at zero, so a fresh network predicts ``z_{t-1}``
    exactly with variance ``softplus(0) + min_var``.
    """

    def __init__(self, n_z: int, n_y: int, n_a: int, hidden: int = 64, min_var: float = 1e-4):
        super().__init__()
        n_in = n_z + n_y + n_a
        self.body = nn.Sequential(nn.Linear(n_in, hidden), nn.ELU(), nn.Linear(hidden, hidden), nn.ELU())
        self.mean_out = nn.Linear(hidden, n_z)
        self.linear = nn.Linear(n_in, n_z, bias=False)
        self.var_out = nn.Linear(hidden, n_z)
        for layer in (self.mean_out, self.linear, self.var_out):
            nn.init.zeros_(layer.weight)
            if layer.bias is not None:
                nn.init.zeros_(layer.bias)
        self.min_var = min_var

    def forward(self, z_prev, y, a) -> GaussianDiag:
        x = torch.cat([z_prev, y, a], dim=-1)
        h = self.body(x)
        mean = z_prev + self.mean_out(h) + self.linear(x)
        return GaussianDiag.from_raw(mean, self.var_out(h), self.min_var)


class RecurrentY(nn.Module):
    """LSTM estimate of the indirectly observable latent."""

    def __init__(self, n_z: int, n_y: int, n_a: int, hidden: int = 64, min_var: float = 1e-4):
        super().__init__()
        self.cell = nn.LSTMCell(n_z + n_y + n_a, hidden)
        self.head = GaussianHead(hidden, n_y, min_var)
        self.hidden_size = hidden

    def initial_state(self, batch: int, like: torch.Tensor):
        zeros = like.new_zeros(batch, self.hidden_size)
        return zeros, zeros.clone()

    def forward(self, z_prev, y_prev, a_prev, state):
        h, c = self.cell(torch.cat([z_prev, y_prev, a_prev], dim=-1), state)
        return self.head(h), (h, c)


class HierarchicalPrior(nn.Module):
    """Per-label Gaussian over y, shifted and scaled by the current action."""

    def __init__(self, n_labels: int, n_y: int, n_a: int, min_var: float = 1e-4):
        super().__init__()
        self.mean_table = nn.Embedding(n_labels, n_y)
        self.raw_var_table = nn.Embedding(n_labels, n_y)
        nn.init.normal_(self.mean_table.weight, std=0.1)
        nn.init.zeros_(self.raw_var_table.weight)
        self.action_mean = nn.Linear(n_a, n_y, bias=False)
        self.action_var = nn.Linear(n_a, n_y, bias=False)
        nn.init.zeros_(self.action_mean.weight)
        nn.init.zeros_(self.action_var.weight)
        self.n_labels = n_labels
        self.min_var = min_var

    def forward(self, a, labels) -> GaussianDiag:
        labels = torch.as_tensor(labels, dtype=torch.long, device=a.device)
        if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= self.n_labels):
            raise ValueError(f"object label outside [0, {self.n_labels})")
        mean = self.mean_table(labels) + self.action_mean(a)
        raw = self.raw_var_table(labels) + self.action_var(a)
        return GaussianDiag.from_raw(mean, raw, self.min_var)
