import numpy as np
import pytest
import torch

from lhgn.latent import DTYPE, Decoder, ObservedViews, decode, init_params, recon_grads, recon_loss
from tests.conftest import central_difference, max_rel_error, random_dataset


def _set_linear(layer, W, b):
    with torch.no_grad():
        layer.weight.copy_(torch.tensor(W, dtype=DTYPE))
        layer.bias.copy_(torch.tensor(b, dtype=DTYPE))


def _one_view(x, mask=None):
    from lhgn.dataset import MultiViewDataset

    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    return MultiViewDataset(
        views=[x],
        mask=np.ones((n, 1), dtype=np.int64) if mask is None else mask,
        labels=np.zeros(n, dtype=np.int64),
        train_idx=np.arange(n),
        test_idx=np.arange(0),
        num_classes=1,
    )


class TestInit:
    def test_deterministic(self, small_ds):
        H1, n1 = init_params(small_ds, 4, seed=9)
        H2, n2 = init_params(small_ds, 4, seed=9)
        assert torch.equal(H1, H2)
        for a, b in zip(n1.parameters(), n2.parameters()):
            assert torch.equal(a, b)

    def test_shapes(self):
        ds = _one_view(np.zeros((4, 2)))
        H, nets = init_params(ds, 3, seed=0)
        assert H.shape == (4, 3)
        assert nets[0].dims == [3, 3, 2]
        assert all(torch.count_nonzero(layer.bias) == 0 for layer in nets[0].layers)

    def test_scale(self):
        ds = _one_view(np.zeros((500, 2)))
        H, _ = init_params(ds, 20, seed=1)
        assert torch.isfinite(H).all()
        # 10_000 draws at std 0.1: |entry| >= 1 is a 10-sigma event
        assert H.abs().max() < 1.0
        assert abs(float(H.std()) - 0.1) < 0.005


class TestDecode:
    def test_identity(self):
        net = Decoder([3, 3])
        _set_linear(net.layers[0], np.eye(3), np.zeros(3))
        h = torch.tensor([0.3, -1.0, 2.0], dtype=DTYPE)
        assert torch.equal(decode(h, 0, [net]), h)

    def test_constant_map(self):
        net = Decoder([2, 3])
        _set_linear(net.layers[0], np.zeros((3, 2)), [1.0, -2.0, 0.5])
        out = net(torch.tensor([5.0, -7.0], dtype=DTYPE))
        assert out.tolist() == [1.0, -2.0, 0.5]

    def test_two_layer_by_hand(self):
        net = Decoder([2, 3, 1])
        _set_linear(net.layers[0], [[1, 0], [0, 1], [1, 1]], [0, 0, 0.5])
        _set_linear(net.layers[1], [[1, 1, 1]], [0.25])
        # pre-activation (1, -2, -0.5) -> leaky (1, -0.4, -0.1) -> 0.5 + 0.25
        out = net(torch.tensor([1.0, -2.0], dtype=DTYPE))
        assert abs(out.item() - 0.75) < 1e-15

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Decoder([3, 2])(torch.zeros(4, dtype=DTYPE))


class TestReconLoss:
    def _identity_nets(self, d):
        net = Decoder([d, d])
        _set_linear(net.layers[0], np.eye(d), np.zeros(d))
        return torch.nn.ModuleList([net])

    def test_perfect(self):
        x = np.random.default_rng(0).normal(size=(5, 3))
        ds = _one_view(x)
        H = torch.tensor(x, dtype=DTYPE)
        assert recon_loss(ds, H, self._identity_nets(3)).item() == 0.0

    def test_hand_value(self):
        ds = _one_view([[0.0], [0.0]])
        H = torch.tensor([[1.0], [3.0]], dtype=DTYPE)
        assert recon_loss(ds, H, self._identity_nets(1)).item() == 5.0

    def test_absent_view_contributes_nothing(self, small_ds):
        H, nets = init_params(small_ds, 4, seed=0)
        mask = small_ds.mask.copy()
        mask[:, 1] = 0
        mask[:, 0] = 1
        a = small_ds.replace(mask=mask)
        b = a.replace(views=[a.views[0], a.views[1] + 1e6])
        assert recon_loss(a, H, nets).item() == recon_loss(b, H, nets).item()
        g = recon_grads(a, H, nets)
        assert all(torch.count_nonzero(v) == 0 for k, v in g.items() if k.startswith("decoders.1."))

    def test_view_order_invariant(self, small_ds):
        H, nets = init_params(small_ds, 4, seed=2)
        swapped = small_ds.replace(views=small_ds.views[::-1], mask=small_ds.mask[:, ::-1].copy())
        nets_swapped = torch.nn.ModuleList([nets[1], nets[0]])
        a = recon_loss(small_ds, H, nets).item()
        b = recon_loss(swapped, H, nets_swapped).item()
        assert abs(a - b) <= 1e-12 * max(1.0, abs(a))

    def test_nonnegative(self, small_ds):
        for seed in range(5):
            H, nets = init_params(small_ds, 3, seed=seed)
            assert recon_loss(small_ds, H, nets).item() >= 0


class TestReconGrads:
    def test_zero_at_perfect_fit(self):
        x = np.random.default_rng(1).normal(size=(4, 2))
        ds = _one_view(x)
        net = Decoder([2, 2])
        _set_linear(net.layers[0], np.eye(2), np.zeros(2))
        g = recon_grads(ds, torch.tensor(x, dtype=DTYPE), torch.nn.ModuleList([net]))
        assert all(float(v.abs().max()) == 0.0 for v in g.values())

    def test_finite_differences(self):
        ds = random_dataset(n=8, dims=(3, 5), beta=0.3, seed=4)
        H, nets = init_params(ds, 4, seed=5)
        with torch.no_grad():
            H.normal_()  # unit-scale point, away from the quiet init
        obs = ObservedViews.from_dataset(ds)
        analytic = recon_grads(obs, H, nets)
        numeric = central_difference(lambda: recon_loss(obs, H, nets), H)
        assert max_rel_error(analytic["H"], numeric) < 1e-4
        for name, p in nets.named_parameters():
            numeric = central_difference(lambda: recon_loss(obs, H, nets), p)
            assert max_rel_error(analytic[f"decoders.{name}"], numeric) < 1e-4, name

    def test_instance_without_views_gets_no_gradient(self, small_ds):
        # two-view mask where row 0 only has view 0, and view 0 is removed from the loss
        H, nets = init_params(small_ds, 3, seed=0)
        mask = np.ones_like(small_ds.mask)
        mask[0] = [1, 0]
        ds = small_ds.replace(mask=mask)
        obs = ObservedViews.from_dataset(ds)
        obs.index[0] = obs.index[0][1:]
        obs.values[0] = obs.values[0][1:]
        g = recon_grads(obs, H, nets)
        assert torch.count_nonzero(g["H"][0]) == 0
