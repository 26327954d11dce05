"""Heterogeneous graph on the latent table.

One node per instance and one edge type per view.  The neighborhood part is
a symmetric Gaussian kNN affinity over latent rows; each view then keeps
only the edges whose endpoints both have that view.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp


def _as_array(H) -> np.ndarray:
    if hasattr(H, "detach"):
        H = H.detach().cpu().numpy()
    return np.asarray(H, dtype=np.float64)


def knn_neighbors(H, k: int) -> np.ndarray:
    """Indices of the k nearest other rows of H, nearest first, ties to smaller index.

    Returns an (N, k) integer array; row i lists N_k(h_i).
    """
    H = _as_array(H)
    n = H.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k={k} out of range for N={n}")
    sq = np.einsum("ij,ij->i", H, H)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (H @ H.T)
    np.fill_diagonal(d2, np.inf)
    if k == n - 1:
        cand_mask = ~np.eye(n, dtype=bool)
    else:
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        kth = np.take_along_axis(d2, part, axis=1).max(axis=1)
        # Gram-form distances carry rounding; widen so exact ties are not lost
        slack = 1e-9 * (1.0 + np.abs(kth))
        cand_mask = d2 <= (kth + slack)[:, None]
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        js = np.flatnonzero(cand_mask[i])
        exact = np.sum((H[js] - H[i]) ** 2, axis=1)
        order = np.lexsort((js, exact))
        out[i] = js[order[:k]]
    return out


def symmetric_pairs(knn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Undirected edge set {i, j} with j in N_k(i) or i in N_k(j), as i < j arrays."""
    n, k = knn.shape
    rows = np.repeat(np.arange(n), k)
    cols = knn.ravel()
    lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
    key = np.unique(lo * n + hi)
    return key // n, key % n


def edge_distances(H, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    H = _as_array(H)
    return np.sqrt(np.sum((H[rows] - H[cols]) ** 2, axis=1))


def bandwidth(H, knn: np.ndarray) -> float:
    """Median neighbor-edge distance, with fallbacks for duplicate points."""
    rows, cols = symmetric_pairs(knn)
    d = edge_distances(H, rows, cols)
    sigma = float(np.median(d)) if d.size else 0.0
    if sigma > 0:
        return sigma
    nonzero = d[d > 0]
    return float(nonzero.min()) if nonzero.size else 1.0


@dataclass(frozen=True)
class NeighborhoodGraph:
    affinity: sp.csr_matrix  # symmetric, unit diagonal
    knn: np.ndarray
    sigma: float


def gaussian_affinity(H, knn: np.ndarray, sigma: float) -> NeighborhoodGraph:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n = knn.shape[0]
    rows, cols = symmetric_pairs(knn)
    w = np.exp(-edge_distances(H, rows, cols) ** 2 / (2.0 * sigma**2))
    diag = np.arange(n)
    A = sp.coo_matrix(
        (np.concatenate([w, w, np.ones(n)]),
         (np.concatenate([rows, cols, diag]), np.concatenate([cols, rows, diag]))),
        shape=(n, n),
    ).tocsr()
    A.sort_indices()
    return NeighborhoodGraph(A, knn, float(sigma))


def complete_affinity(n: int) -> NeighborhoodGraph:
    """Unit weights on every pair; the neighborhood-free graph used by the V ablation."""
    A = sp.csr_matrix(np.ones((n, n)))
    return NeighborhoodGraph(A, np.empty((n, 0), dtype=np.int64), 1.0)


@dataclass(frozen=True)
class ViewExistence:
    """Rank-one view-existence mask for one view, evaluated lazily.

    ``labels`` (optional) holds training labels with -1 for unlabeled nodes;
    when given, two labeled endpoints must also share a label.
    """

    present: np.ndarray
    labels: Optional[np.ndarray] = None

    def on_pairs(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        val = (self.present[rows] * self.present[cols]).astype(np.float64)
        if self.labels is not None:
            ya, yb = self.labels[rows], self.labels[cols]
            clash = (ya >= 0) & (yb >= 0) & (ya != yb) & (rows != cols)
            val[clash] = 0.0
        return val

    def dense(self) -> np.ndarray:
        n = self.present.shape[0]
        r, c = np.divmod(np.arange(n * n), n)
        return self.on_pairs(r, c).reshape(n, n)


def view_existence(mask: np.ndarray, v: int, labels: Optional[np.ndarray] = None) -> ViewExistence:
    return ViewExistence(np.asarray(mask)[:, v].astype(np.int64), labels)


def combine(neigh: NeighborhoodGraph, existence: Sequence[ViewExistence]) -> list[sp.csr_matrix]:
    """Elementwise product of the affinity with each view mask; self-loop = s_iv."""
    A = neigh.affinity.tocoo()
    n = A.shape[0]
    out = []
    for ex in existence:
        vals = A.data * ex.on_pairs(A.row, A.col)
        Av = sp.coo_matrix((vals, (A.row, A.col)), shape=(n, n)).tocsr()
        Av.setdiag(ex.present.astype(np.float64))
        Av.eliminate_zeros()
        Av.sort_indices()
        out.append(Av)
    return out


@dataclass(frozen=True)
class HeteroGraph:
    neighborhood: NeighborhoodGraph
    existence: list[ViewExistence]
    adjacency: list[sp.csr_matrix]

    @property
    def num_nodes(self) -> int:
        return self.neighborhood.affinity.shape[0]

    @property
    def num_views(self) -> int:
        return len(self.adjacency)

    def edges(self, v: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(target i, source j, weight) for every stored entry of A^(v)."""
        A = self.adjacency[v].tocoo()
        return A.row.astype(np.int64), A.col.astype(np.int64), A.data

    def export_coo(self, v: int, path) -> Path:
        i, j, w = self.edges(v)
        path = Path(path)
        with open(path, "w") as fh:
            fh.write("i,j,value\n")
            for a, b, c in zip(i, j, w):
                fh.write(f"{a},{b},{c:.17g}\n")
        return path


GRAPH_MODES = ("full", "neighborhood", "existence")


def build_graph(
    H,
    mask: np.ndarray,
    k: int,
    mode: str = "full",
    labels: Optional[np.ndarray] = None,
) -> HeteroGraph:
    """kNN -> bandwidth -> Gaussian affinity -> view masks -> per-view adjacency.

    ``mode="neighborhood"`` drops the view masks (all ones); ``mode="existence"``
    replaces the affinity with a unit complete graph.
    """
    mask = np.asarray(mask)
    n, n_views = mask.shape
    if mode == "existence":
        neigh = complete_affinity(n)
    elif mode in ("full", "neighborhood"):
        knn = knn_neighbors(H, k)
        neigh = gaussian_affinity(H, knn, bandwidth(H, knn))
    else:
        raise ValueError(f"unknown graph mode {mode!r}")
    if mode == "neighborhood":
        existence = [ViewExistence(np.ones(n, dtype=np.int64)) for _ in range(n_views)]
    else:
        existence = [view_existence(mask, v, labels) for v in range(n_views)]
    return HeteroGraph(neigh, existence, combine(neigh, existence))
