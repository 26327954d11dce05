"""Masked multi-head graph attention per view, plus the cross-view aggregation layer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .latent import DTYPE, LEAK


@dataclass(frozen=True)
class EdgeList:
    """Stored entries of one A^(v): node ``dst[e]`` attends to node ``src[e]``."""

    dst: torch.Tensor
    src: torch.Tensor
    weight: torch.Tensor
    num_nodes: int

    @classmethod
    def from_graph(cls, graph, v: int) -> "EdgeList":
        i, j, w = graph.edges(v)
        return cls(
            torch.as_tensor(i, dtype=torch.long),
            torch.as_tensor(j, dtype=torch.long),
            torch.as_tensor(w, dtype=DTYPE),
            graph.num_nodes,
        )


def graph_edge_lists(graph) -> list[EdgeList]:
    return [EdgeList.from_graph(graph, v) for v in range(graph.num_views)]


@numba.njit(cache=True)
def _spread(alpha, wh, dst, src, out):
    heads, n_edges = alpha.shape
    width = wh.shape[2]
    for k in range(heads):
        for e in range(n_edges):
            a = alpha[k, e]
            i = dst[e]
            j = src[e]
            for d in range(width):
                out[k, i, d] += a * wh[k, j, d]


@numba.njit(cache=True)
def _spread_grad(alpha, wh, dst, src, g, g_alpha, g_wh):
    heads, n_edges = alpha.shape
    width = wh.shape[2]
    for k in range(heads):
        for e in range(n_edges):
            a = alpha[k, e]
            i = dst[e]
            j = src[e]
            s = 0.0
            for d in range(width):
                s += g[k, i, d] * wh[k, j, d]
                g_wh[k, j, d] += a * g[k, i, d]
            g_alpha[k, e] = s


class EdgeAggregate(torch.autograd.Function):
    """out[k, i] = sum over edges (i, j) of alpha[k, e] * wh[k, j].

    Equivalent to ``zeros.index_add(1, dst, alpha[..., None] * wh[:, src])``
    without materializing the (K, E, D') message tensor.
    """

    @staticmethod
    def forward(ctx, alpha, wh, dst, src):
        a = alpha.detach().contiguous().numpy()
        w = wh.detach().contiguous().numpy()
        out = np.zeros_like(w)
        _spread(a, w, dst.numpy(), src.numpy(), out)
        ctx.save_for_backward(alpha, wh, dst, src)
        return torch.from_numpy(out)

    @staticmethod
    def backward(ctx, g):
        alpha, wh, dst, src = ctx.saved_tensors
        a = alpha.detach().contiguous().numpy()
        w = wh.detach().contiguous().numpy()
        g_alpha = np.zeros_like(a)
        g_wh = np.zeros_like(w)
        _spread_grad(a, w, dst.numpy(), src.numpy(), g.contiguous().numpy(), g_alpha, g_wh)
        return torch.from_numpy(g_alpha), torch.from_numpy(g_wh), None, None


def _heads(W: torch.Tensor, a: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if W.dim() == 2:
        W, a = W.unsqueeze(0), a.unsqueeze(0)
    return W, a


def project(H: torch.Tensor, W: torch.Tensor) -> torch.Tensor:
    """W h for every node and head: (K, N, D')."""
    if H.shape[-1] != W.shape[-1]:
        raise ValueError(f"input dim {H.shape[-1]} != projection input {W.shape[-1]}")
    return torch.einsum("kod,nd->kno", W, H)


def logits_from_projection(Wh, a, edges: EdgeList, leak: float = LEAK) -> torch.Tensor:
    out_dim = Wh.shape[-1]
    if a.shape[-1] != 2 * out_dim:
        raise ValueError(f"attention vector length {a.shape[-1]} != 2 * {out_dim}")
    left = torch.einsum("kno,ko->kn", Wh, a[:, :out_dim])
    right = torch.einsum("kno,ko->kn", Wh, a[:, out_dim:])
    return F.leaky_relu(left[:, edges.dst] + right[:, edges.src], leak)


def attention_logits(H, edges: EdgeList, W, a, leak: float = LEAK) -> torch.Tensor:
    """LeakyReLU(a^T [W h_i || W h_j]) for each stored edge (i, j); shape (K, E)."""
    W, a = _heads(W, a)
    return logits_from_projection(project(H, W), a, edges, leak)


def masked_softmax(e: torch.Tensor, dst: torch.Tensor, num_nodes: int) -> torch.Tensor:
    """Softmax of edge logits over each target node's stored neighbors.

    Nodes without edges simply have no coefficients.
    """
    squeeze = e.dim() == 1
    if squeeze:
        e = e.unsqueeze(0)
    idx = dst.expand_as(e)
    peak = e.new_full((e.shape[0], num_nodes), -torch.inf)
    peak = peak.scatter_reduce(1, idx, e, reduce="amax", include_self=True)
    ex = torch.exp(e - peak.gather(1, idx).detach())
    denom = e.new_zeros((e.shape[0], num_nodes)).index_add(1, dst, ex)
    alpha = ex / denom.gather(1, idx)
    return alpha.squeeze(0) if squeeze else alpha


def gat_forward(
    H: torch.Tensor,
    edges: EdgeList,
    W: torch.Tensor,
    a: torch.Tensor,
    leak: float = LEAK,
    weighted: bool = False,
) -> torch.Tensor:
    """One multi-head attention layer; heads are concatenated to (N, K*D')."""
    W, a = _heads(W, a)
    Wh = project(H, W)
    alpha = masked_softmax(logits_from_projection(Wh, a, edges, leak), edges.dst, edges.num_nodes)
    if weighted:
        alpha = alpha * edges.weight
    out = F.leaky_relu(EdgeAggregate.apply(alpha, Wh, edges.dst, edges.src), leak)
    return out.permute(1, 0, 2).reshape(edges.num_nodes, -1)


def aggregate(embeddings: Sequence[torch.Tensor], W_agg: torch.Tensor) -> torch.Tensor:
    """z_n = W_agg [h'_n^(1) || ... || h'_n^(V)] (no bias)."""
    cat = torch.cat(list(embeddings), dim=1)
    if cat.shape[1] != W_agg.shape[1]:
        raise ValueError(f"concatenated width {cat.shape[1]} != W_agg input {W_agg.shape[1]}")
    return cat @ W_agg.T


def _glorot(shape, fan_in, fan_out, gen) -> torch.Tensor:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return std * torch.randn(shape, generator=gen, dtype=DTYPE)


class AttentionLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, heads: int, gen: torch.Generator):
        super().__init__()
        self.W = nn.Parameter(_glorot((heads, out_dim, in_dim), in_dim, out_dim, gen))
        self.a = nn.Parameter(_glorot((heads, 2 * out_dim), 2 * out_dim, 1, gen))

    def forward(self, H, edges: EdgeList, leak: float = LEAK, weighted: bool = False):
        return gat_forward(H, edges, self.W, self.a, leak, weighted)


class GraphAttentionNet(nn.Module):
    """Per-view GAT stacks followed by the aggregation layer.

    Parameters are the graph-side group: every W and a of every view and
    head, plus ``W_agg``.
    """

    def __init__(
        self,
        num_views: int,
        in_dim: int,
        heads: int = 4,
        head_dim: int = 64,
        out_dim: int = 128,
        layers: int = 1,
        seed: int = 0,
        leak: float = LEAK,
        weighted: bool = False,
    ):
        super().__init__()
        gen = torch.Generator().manual_seed(int(seed))
        self.leak = leak
        self.weighted = weighted
        self.views = nn.ModuleList()
        for _ in range(num_views):
            stack = nn.ModuleList()
            d = in_dim
            for _ in range(layers):
                stack.append(AttentionLayer(d, head_dim, heads, gen))
                d = heads * head_dim
            self.views.append(stack)
        cat_dim = num_views * heads * head_dim
        self.W_agg = nn.Parameter(_glorot((out_dim, cat_dim), cat_dim, out_dim, gen))

    def view_embeddings(self, H, edge_lists: Sequence[EdgeList]) -> list[torch.Tensor]:
        if len(edge_lists) != len(self.views):
            raise ValueError(f"{len(edge_lists)} edge lists for {len(self.views)} views")
        out = []
        for stack, edges in zip(self.views, edge_lists):
            x = H
            for layer in stack:
                x = layer(x, edges, self.leak, self.weighted)
            out.append(x)
        return out

    def forward(self, H, edge_lists: Sequence[EdgeList]) -> torch.Tensor:
        return aggregate(self.view_embeddings(H, edge_lists), self.W_agg)


def attention_coefficients(H, edges: EdgeList, layer: AttentionLayer, leak: float = LEAK):
    """Normalized attention of one layer, (K, E); handy for inspection and tests."""
    e = attention_logits(H, edges, layer.W, layer.a, leak)
    return masked_softmax(e, edges.dst, edges.num_nodes)
