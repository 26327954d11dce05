"""Prototype scoring on the aggregated representation and the margin loss.

The score of class y for instance n is the mean dot product between z_n and
the labeled training representations of class y, which equals z_n dotted
with the class mean.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch


def prototype_index(labels, train_idx, num_classes: int) -> list[torch.Tensor]:
    """T(y): labeled training indices of each class."""
    labels = np.asarray(labels)
    train_idx = np.asarray(train_idx)
    out = []
    for y in range(num_classes):
        members = train_idx[labels[train_idx] == y]
        if members.size == 0:
            raise ValueError(f"class {y} has no labeled training instances")
        out.append(torch.as_tensor(members, dtype=torch.long))
    return out


def class_means(Z: torch.Tensor, T: Sequence[torch.Tensor]) -> torch.Tensor:
    return torch.stack([Z[idx].mean(dim=0) for idx in T])


def class_score(z_n: torch.Tensor, y: int, Z: torch.Tensor, T: Sequence[torch.Tensor]) -> torch.Tensor:
    members = T[y]
    if members.numel() == 0:
        raise ValueError(f"class {y} has an empty prototype set")
    return (Z[members] @ z_n).mean()


def class_scores(Z: torch.Tensor, T: Sequence[torch.Tensor]) -> torch.Tensor:
    """All scores at once, shape (N, C)."""
    return Z @ class_means(Z, T).T


def predict(z_n: torch.Tensor, Z: torch.Tensor, T: Sequence[torch.Tensor]) -> int:
    scores = z_n @ class_means(Z, T).T
    return int(torch.argmax(scores))  # first maximum wins ties


def predict_all(Z: torch.Tensor, T: Sequence[torch.Tensor]) -> np.ndarray:
    return torch.argmax(class_scores(Z, T), dim=1).cpu().numpy()


def hinge_from_scores(scores: torch.Tensor, y_true: torch.Tensor) -> torch.Tensor:
    """Per-row margin loss given scores (M, C) and true labels (M,).

    The competitor is the best-scoring wrong class (smallest index on ties).
    A row is penalized exactly when the competitor is the predicted class,
    i.e. it beats the true score or ties it from a smaller index, with
    penalty 1 + score(competitor) - score(true).
    """
    rows = torch.arange(scores.shape[0])
    true = scores[rows, y_true]
    others = scores.clone()
    others[rows, y_true] = -torch.inf
    rival = torch.argmax(others, dim=1)
    rival_score = scores[rows, rival]
    wrong = ((rival_score > true) | ((rival_score == true) & (rival < y_true))).detach()
    return torch.where(wrong, 1.0 + rival_score - true, torch.zeros_like(true))


def margin_loss(z_n, y_n: int, Z, T) -> torch.Tensor:
    scores = (z_n @ class_means(Z, T).T).unsqueeze(0)
    return hinge_from_scores(scores, torch.tensor([y_n]))[0]


def classification_loss(
    Z: torch.Tensor,
    labels,
    train_idx,
    T: Sequence[torch.Tensor],
    exclude_self: bool = False,
) -> torch.Tensor:
    """(1/N) * sum of margin losses over labeled training instances.

    Only training labels are read; unlabeled rows enter solely through Z.
    """
    train = torch.as_tensor(np.asarray(train_idx), dtype=torch.long)
    y = torch.as_tensor(np.asarray(labels)[np.asarray(train_idx)], dtype=torch.long)
    sums = torch.stack([Z[idx].sum(dim=0) for idx in T])
    counts = torch.tensor([float(idx.numel()) for idx in T], dtype=Z.dtype)
    zt = Z[train]
    scores = zt @ (sums / counts[:, None]).T
    if exclude_self:
        own = counts[y]
        ok = own > 1
        own_sum = sums[y] - zt
        own_score = (own_sum * zt).sum(dim=1) / torch.where(ok, own - 1, own)
        rows = torch.arange(zt.shape[0])
        scores = scores.index_put((rows, y), torch.where(ok, own_score, scores[rows, y]))
    return hinge_from_scores(scores, y).sum() / Z.shape[0]
