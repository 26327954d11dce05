"""Incomplete multi-view datasets: loading, scaling, view removal and splits."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


@dataclass(frozen=True)
class MultiViewDataset:
    views: list[np.ndarray]  # each N x d_v
    mask: np.ndarray  # N x V, entries 0/1
    labels: np.ndarray  # N, values in [0, num_classes)
    train_idx: np.ndarray
    test_idx: np.ndarray
    num_classes: int

    def __post_init__(self):
        n = self.labels.shape[0]
        for v, x in enumerate(self.views):
            if x.ndim != 2 or x.shape[0] != n:
                raise DatasetError(f"view {v} has shape {x.shape}, expected ({n}, d)")
        if self.mask.shape != (n, len(self.views)):
            raise DatasetError(f"mask shape {self.mask.shape} != ({n}, {len(self.views)})")
        if not np.isin(self.mask, (0, 1)).all():
            raise DatasetError("mask entries must be 0 or 1")
        if (self.mask.sum(axis=1) < 1).any():
            raise DatasetError("every instance needs at least one present view")

    @property
    def num_instances(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_views(self) -> int:
        return len(self.views)

    def replace(self, **changes) -> "MultiViewDataset":
        return dataclasses.replace(self, **changes)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_matrix(path) -> np.ndarray:
    """Read a comma-separated numeric matrix, skipping a non-numeric header line."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DatasetError(f"{path}: empty file")
    if not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
        if not rows:
            raise DatasetError(f"{path}: header but no data rows")
    width = len(rows[0])
    out = np.empty((len(rows), width), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DatasetError(f"{path}: row {i} has {len(row)} cells, expected {width}")
        try:
            out[i] = [float(c) for c in row]
        except ValueError as exc:
            raise DatasetError(f"{path}: non-numeric cell in row {i}") from exc
    if not np.isfinite(out).all():
        raise DatasetError(f"{path}: non-finite values")
    return out


def relabel(raw: Sequence) -> tuple[np.ndarray, list]:
    """Map arbitrary labels to 0..C-1 in order of first appearance."""
    codes: dict = {}
    dense = np.empty(len(raw), dtype=np.int64)
    for i, y in enumerate(raw):
        dense[i] = codes.setdefault(y, len(codes))
    return dense, list(codes)


def load_dataset(
    view_paths: Sequence, label_path, mask_path: Optional[str] = None
) -> MultiViewDataset:
    if not view_paths:
        raise DatasetError("at least one view file is required")
    views = [read_matrix(p) for p in view_paths]
    raw_labels = read_matrix(label_path)
    if raw_labels.shape[1] != 1:
        raise DatasetError(f"{label_path}: expected a single label column")
    raw = raw_labels[:, 0]
    if not np.all(raw == np.round(raw)):
        raise DatasetError(f"{label_path}: labels must be integers")
    labels, _ = relabel(raw.astype(np.int64).tolist())
    n = labels.shape[0]
    for p, x in zip(view_paths, views):
        if x.shape[0] != n:
            raise DatasetError(f"row-count mismatch: {p} has {x.shape[0]} rows, labels have {n}")
    if mask_path is None:
        mask = np.ones((n, len(views)), dtype=np.int64)
    else:
        m = read_matrix(mask_path)
        if m.shape != (n, len(views)):
            raise DatasetError(f"row-count mismatch: mask {m.shape} vs ({n}, {len(views)})")
        if not np.isin(m, (0.0, 1.0)).all():
            raise DatasetError(f"{mask_path}: mask must be 0/1")
        mask = m.astype(np.int64)
    return MultiViewDataset(
        views=views,
        mask=mask,
        labels=labels,
        train_idx=np.arange(n),
        test_idx=np.arange(0),
        num_classes=int(labels.max()) + 1,
    )


def normalize_views(ds: MultiViewDataset) -> MultiViewDataset:
    """Min-max scale every feature to [0, 1] using present rows only.

    Rows where the view is absent keep their stored values; nothing
    downstream reads them.  Constant columns map to 0.
    """
    scaled = []
    for v, x in enumerate(ds.views):
        present = ds.mask[:, v] == 1
        out = x.copy()
        if present.any():
            xp = x[present]
            lo = xp.min(axis=0)
            span = xp.max(axis=0) - lo
            safe = np.where(span > 0, span, 1.0)
            out[present] = np.where(span > 0, (xp - lo) / safe, 0.0)
        scaled.append(out)
    return ds.replace(views=scaled)


def per(mask: np.ndarray) -> float:
    """Partial example ratio: fraction of absent (instance, view) entries."""
    mask = np.asarray(mask)
    return float((mask == 0).sum()) / mask.size


def simulate_missing(ds: MultiViewDataset, beta_target: float, seed: int) -> MultiViewDataset:
    """Remove views at random until the PER reaches ``beta_target``.

    Removal visits (row, view) pairs in a seeded random order and skips any
    pick that would leave a row without views.
    """
    n, n_views = ds.mask.shape
    if not (ds.mask == 1).all():
        raise ValueError("simulate_missing expects a complete mask")
    if beta_target < 0 or beta_target > (n_views - 1) / n_views + 1e-12:
        raise ValueError(
            f"beta_target={beta_target} infeasible for V={n_views}; "
            f"maximum is {(n_views - 1) / n_views:.4f} when every row keeps one view"
        )
    target = min(int(round(beta_target * n * n_views)), n * (n_views - 1))
    mask = np.ones((n, n_views), dtype=np.int64)
    row_count = np.full(n, n_views)
    order = np.random.default_rng(seed).permutation(n * n_views)
    removed = 0
    for flat in order:
        if removed >= target:
            break
        i, v = divmod(int(flat), n_views)
        if row_count[i] > 1:
            mask[i, v] = 0
            row_count[i] -= 1
            removed += 1
    return ds.replace(mask=mask)


def split(
    ds: MultiViewDataset, train_fraction: float, seed: int, max_retries: int = 100
) -> MultiViewDataset:
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    n = ds.num_instances
    n_train = int(round(train_fraction * n))
    n_train = min(max(n_train, 1), n - 1)
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        perm = rng.permutation(n)
        train = np.sort(perm[:n_train])
        if np.unique(ds.labels[train]).size == ds.num_classes:
            return ds.replace(train_idx=train, test_idx=np.sort(perm[n_train:]))
    raise DatasetError(
        f"could not draw a split covering all {ds.num_classes} classes in {max_retries} tries"
    )


def write_matrix(path, x: np.ndarray, header: Optional[Sequence[str]] = None, fmt="%.17g"):
    """Write a numeric matrix in the same CSV layout ``read_matrix`` accepts."""
    x = np.atleast_2d(np.asarray(x))
    with open(path, "w", newline="") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        np.savetxt(fh, x, delimiter=",", fmt=fmt)
    return Path(path)
