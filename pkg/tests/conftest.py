import numpy as np
import pytest
import torch

from lhgn.dataset import MultiViewDataset, simulate_missing, split


def central_difference(fn, tensor: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Numeric gradient of scalar ``fn()`` w.r.t. every entry of ``tensor`` (mutated in place)."""
    out = torch.zeros_like(tensor)
    flat, gflat = tensor.data.view(-1), out.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = float(fn())
            flat[i] = orig - eps
            down = float(fn())
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
    return out


def max_rel_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-6) -> float:
    a, n = analytic.reshape(-1), numeric.reshape(-1)
    denom = torch.maximum(torch.maximum(a.abs(), n.abs()), torch.full_like(a, floor))
    return float(((a - n).abs() / denom).max())


def random_dataset(n=12, dims=(3, 5), classes=3, beta=0.0, seed=0, train_fraction=0.75):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    ds = MultiViewDataset(
        views=[rng.uniform(size=(n, d)) for d in dims],
        mask=np.ones((n, len(dims)), dtype=np.int64),
        labels=labels,
        train_idx=np.arange(n),
        test_idx=np.arange(0),
        num_classes=classes,
    )
    if beta > 0:
        ds = simulate_missing(ds, beta, seed)
    if train_fraction >= 1:
        return ds
    return split(ds, train_fraction, seed)


@pytest.fixture
def small_ds():
    return random_dataset(beta=0.25, seed=3)
