"""Learnable latent table and per-view reconstruction networks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .dataset import MultiViewDataset

DTYPE = torch.float64
LEAK = 0.2


class Decoder(nn.Module):
    """MLP mapping a latent vector to one view: affine layers with leaky ReLU between."""

    def __init__(self, dims: Sequence[int], leak: float = LEAK):
        super().__init__()
        if len(dims) < 2:
            raise ValueError("decoder needs at least input and output dims")
        self.dims = list(dims)
        self.leak = leak
        self.layers = nn.ModuleList(
            nn.Linear(a, b, dtype=DTYPE) for a, b in zip(dims[:-1], dims[1:])
        )

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[-1] != self.dims[0]:
            raise ValueError(f"latent dim {h.shape[-1]} != decoder input {self.dims[0]}")
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = nn.functional.leaky_relu(h, self.leak)
        return h


def default_decoder_dims(latent_dim: int, view_dim: int) -> list[int]:
    return [latent_dim, max(latent_dim, view_dim), view_dim]


def init_params(
    ds: MultiViewDataset,
    latent_dim: int,
    seed: int,
    hidden: Optional[Sequence[Sequence[int]]] = None,
    init_scale: float = 0.1,
) -> tuple[torch.Tensor, nn.ModuleList]:
    """Random latent table (std ``init_scale``) and fan-in scaled decoders with zero biases."""
    if latent_dim < 1:
        raise ValueError("latent_dim must be >= 1")
    gen = torch.Generator().manual_seed(int(seed))
    H = init_scale * torch.randn(ds.num_instances, latent_dim, generator=gen, dtype=DTYPE)
    nets = nn.ModuleList()
    for v, x in enumerate(ds.views):
        if hidden is None:
            dims = default_decoder_dims(latent_dim, x.shape[1])
        else:
            dims = [latent_dim, *hidden[v], x.shape[1]]
        net = Decoder(dims)
        with torch.no_grad():
            for layer in net.layers:
                fan_in = layer.weight.shape[1]
                layer.weight.copy_(
                    torch.randn(layer.weight.shape, generator=gen, dtype=DTYPE) / np.sqrt(fan_in)
                )
                layer.bias.zero_()
        nets.append(net)
    return H, nets


def decode(h: torch.Tensor, v: int, nets: nn.ModuleList) -> torch.Tensor:
    return nets[v](h)


@dataclass(frozen=True)
class ObservedViews:
    """Present rows of each view, gathered once so absent entries are never touched."""

    index: list[torch.Tensor]  # rows where view v is present
    values: list[torch.Tensor]  # x^(v) on those rows
    num_instances: int

    @classmethod
    def from_dataset(cls, ds: MultiViewDataset) -> "ObservedViews":
        index, values = [], []
        for v, x in enumerate(ds.views):
            rows = np.flatnonzero(ds.mask[:, v] == 1)
            index.append(torch.as_tensor(rows, dtype=torch.long))
            values.append(torch.as_tensor(x[rows], dtype=DTYPE))
        return cls(index, values, ds.num_instances)


def _observed(data) -> ObservedViews:
    return data if isinstance(data, ObservedViews) else ObservedViews.from_dataset(data)


def recon_loss(data, H: torch.Tensor, nets: nn.ModuleList) -> torch.Tensor:
    """(1/N) * sum over present (n, v) of ||f_v(h_n) - x_n^(v)||^2."""
    obs = _observed(data)
    total = H.new_zeros(())
    for v, (rows, x) in enumerate(zip(obs.index, obs.values)):
        if rows.numel() == 0:
            continue
        diff = nets[v](H[rows]) - x
        total = total + (diff * diff).sum()
    return total / obs.num_instances


def recon_grads(data, H: torch.Tensor, nets: nn.ModuleList) -> dict[str, torch.Tensor]:
    """Exact gradients of ``recon_loss`` keyed by ``"H"`` and ``"decoders.<name>"``."""
    H = H.detach().requires_grad_(True)
    params = dict(nets.named_parameters())
    loss = recon_loss(data, H, nets)
    grads = torch.autograd.grad(loss, [H, *params.values()], allow_unused=True)
    out = {"H": grads[0]}
    for (name, p), g in zip(params.items(), grads[1:]):
        out[f"decoders.{name}"] = torch.zeros_like(p) if g is None else g
    return out
