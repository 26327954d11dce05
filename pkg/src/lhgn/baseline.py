"""FeatCon: concatenate views and classify by nearest class mean."""

from __future__ import annotations

import numpy as np

from .dataset import MultiViewDataset


def concatenate_views(ds: MultiViewDataset) -> np.ndarray:
    """Stack all views side by side; absent blocks take the training-set feature means."""
    blocks = []
    train = np.asarray(ds.train_idx)
    for v, x in enumerate(ds.views):
        present = ds.mask[:, v] == 1
        donors = train[present[train]]
        if donors.size == 0:
            donors = np.flatnonzero(present)
        fill = x[donors].mean(axis=0) if donors.size else np.zeros(x.shape[1])
        blocks.append(np.where(present[:, None], x, fill[None, :]))
    return np.hstack(blocks)


def nearest_mean_predict(X: np.ndarray, labels: np.ndarray, train_idx, num_classes: int) -> np.ndarray:
    train_idx = np.asarray(train_idx)
    means = np.stack([X[train_idx[labels[train_idx] == c]].mean(axis=0) for c in range(num_classes)])
    d2 = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def featcon_accuracy(ds: MultiViewDataset) -> float:
    X = concatenate_views(ds)
    pred = nearest_mean_predict(X, ds.labels, ds.train_idx, ds.num_classes)
    test = np.asarray(ds.test_idx)
    return float(np.mean(pred[test] == ds.labels[test]))
