"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances.

The end-to-end criteria (7-10) train real models and take minutes; the
handwritten-digits criterion needs ``lhgn fetch-handwritten`` first (or
``LHGN_HANDWRITTEN`` pointing at a directory with view0..view5.csv and
labels.csv) and fails, rather than skips, when the data is absent.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from lhgn.attention import EdgeList, attention_coefficients
from lhgn.dataset import load_dataset, normalize_views, per, simulate_missing, split
from lhgn.experiment import ExperimentSpec, run_baseline_featcon, run_experiment
from lhgn.graph import build_graph
from lhgn.latent import DTYPE
from lhgn.synthetic import make_blobs
from lhgn.trainer import (
    Problem,
    TrainConfig,
    fit,
    gradient_check,
    init_state,
    objective_grads,
    predictions,
    rebuild_graph,
    total_objective,
)
from tests.conftest import random_dataset
from tests.test_graph import brute_force_graph

ROOT = Path(__file__).resolve().parents[1]

# synthetic task: 3 classes, N=300, two views, each with its own informative block
BLOBS = dict(n=300, num_classes=3, num_views=2, dim=10, informative=2, separation=3.0, noise=1.0)
BLOB_SEED = 0
SEEDS = range(5)
SYNTHETIC_CONFIG = TrainConfig(lr=0.05, knn=20, epochs=200)
HANDWRITTEN_CONFIG = TrainConfig(lr=0.01, knn=10, epochs=150, latent_dim=64, heads=4, head_dim=16)


def report(number, title, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {title} ({detail})"
    print(f"\n{line}")
    with open(ROOT / "acceptance_results.txt", "a") as fh:
        fh.write(line + "\n")
    assert passed, line


@pytest.fixture(scope="module", autouse=True)
def _fresh_results():
    (ROOT / "acceptance_results.txt").write_text("")


def test_c01_gradient_fidelity():
    ds = random_dataset(n=12, dims=(3, 5), classes=3, beta=0.25, seed=0)
    cfg = TrainConfig(latent_dim=4, knn=3, heads=2, head_dim=3, out_dim=4, latent_init=1.0)
    start = time.perf_counter()
    state = init_state(ds, cfg)
    result = gradient_check(state, ds)
    elapsed = time.perf_counter() - start
    worst = result.worst
    groups = ", ".join(f"{k}={v:.1e}" for k, v in sorted(result.max_rel_error.items()))
    report(1, "gradient fidelity", worst < 1e-4 and elapsed < 10,
           f"max rel err {worst:.2e} < 1e-4 over {groups}; {elapsed:.1f}s < 10s")


def test_c02_mask_semantics():
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(100):
        ds = random_dataset(n=10, dims=(3, 4), classes=2, beta=float(rng.uniform(0.1, 0.5)), seed=trial)
        cfg = TrainConfig(latent_dim=3, knn=3, heads=2, head_dim=2, out_dim=3, seed=trial, latent_init=1.0)
        views = []
        for v, x in enumerate(ds.views):
            x = x.copy()
            absent = ds.mask[:, v] == 0
            x[absent] = rng.normal(scale=100.0, size=(absent.sum(), x.shape[1]))
            views.append(x)
        other = ds.replace(views=views)
        values = []
        for d in (ds, other):
            state = init_state(d, cfg)
            problem = Problem(d)
            rebuild_graph(state, problem)
            values.append((total_objective(state, problem).item(), objective_grads(state, problem)))
        (o1, g1), (o2, g2) = values
        worst = max(worst, abs(o1 - o2), *(float((g1[k] - g2[k]).abs().max()) for k in g1))
    report(2, "mask semantics", worst <= 1e-12, f"max change {worst:.1e} <= 1e-12 over 100 trials")


def test_c03_attention_normalization():
    rng = np.random.default_rng(1)
    worst, wrong_support = 0.0, 0
    for trial in range(100):
        n = int(rng.integers(4, 40))
        mask = rng.integers(0, 2, size=(n, 3))
        mask[mask.sum(1) == 0, 0] = 1
        H = rng.normal(size=(n, 5))
        graph = build_graph(H, mask, int(rng.integers(1, n)))
        state = init_state(random_dataset(n=4, dims=(1, 1, 1)), TrainConfig(latent_dim=5, heads=3, head_dim=4, seed=trial))
        for v in range(3):
            edges = EdgeList.from_graph(graph, v)
            layer = state.gat.views[v][0]
            alpha = attention_coefficients(torch.tensor(H, dtype=DTYPE), edges, layer).detach()
            sums = torch.zeros(alpha.shape[0], n, dtype=DTYPE).index_add(1, edges.dst, alpha)
            present = torch.zeros(n, dtype=torch.bool)
            present[edges.dst] = True
            if present.any():
                worst = max(worst, float((sums[:, present] - 1).abs().max()))
            wrong_support += int((alpha <= 0).sum()) + int((sums[:, ~present] != 0).sum())
    report(3, "attention normalization", worst <= 1e-9 and wrong_support == 0,
           f"max |row sum - 1| {worst:.1e} <= 1e-9 over 100 graphs; {wrong_support} coefficients off-support")


def test_c04_graph_correctness():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 11))
        views = int(rng.integers(1, 4))
        H = rng.normal(size=(n, int(rng.integers(1, 5))))
        mask = rng.integers(0, 2, size=(n, views))
        mask[mask.sum(1) == 0, 0] = 1
        k = int(rng.integers(1, n))
        _, sigma, A_n, per_view = brute_force_graph(H, mask, k)
        g = build_graph(H, mask, k)
        worst = max(worst, abs(g.neighborhood.sigma - sigma),
                    float(np.abs(g.neighborhood.affinity.toarray() - A_n).max()),
                    *(float(np.abs(g.adjacency[v].toarray() - per_view[v]).max()) for v in range(views)))
    report(4, "graph correctness", worst <= 1e-12, f"max entry diff {worst:.1e} <= 1e-12 over 50 instances")


def test_c05_per_simulator():
    failures = []
    for n, views in [(50, 2), (97, 3), (200, 6), (13, 4)]:
        ds = random_dataset(n=n, dims=(2,) * views, classes=2, train_fraction=1.0)
        for beta in (0.1, 0.2, 0.3, 0.4, 0.5):
            for seed in range(5):
                mask = simulate_missing(ds, beta, seed).mask
                again = simulate_missing(ds, beta, seed).mask
                if abs(per(mask) - beta) > 1 / (views * n) + 1e-12:
                    failures.append(f"PER {per(mask):.4f} for target {beta} (N={n}, V={views})")
                if (mask.sum(1) < 1).any():
                    failures.append(f"empty row (N={n}, V={views}, beta={beta})")
                if not np.array_equal(mask, again):
                    failures.append(f"nondeterministic (N={n}, V={views}, beta={beta})")
    report(5, "PER simulator", not failures,
           "target within 1/(V*N), rows keep a view, deterministic" if not failures else "; ".join(failures[:3]))


def _blobs_run(beta, seed):
    ds = make_blobs(seed=BLOB_SEED, **BLOBS)
    return normalize_views(split(simulate_missing(ds, beta, seed), 0.8, seed))


def test_c06_transductive_hygiene():
    ds = _blobs_run(0.3, 0)
    hidden = ds.labels.copy()
    hidden[ds.test_idx] = 0
    cfg = TrainConfig(lr=0.05, knn=10, epochs=15, latent_dim=16, heads=2, head_dim=8, out_dim=16)
    s1, h1 = fit(ds, cfg)
    s2, h2 = fit(ds.replace(labels=hidden), cfg)
    same_traj = torch.equal(s1.H, s2.H) and h1.objective == h2.objective and h1.train_acc == h2.train_acc
    same_params = all(torch.equal(p, s2.named_groups()[k]) for k, p in s1.named_groups().items())
    same_pred = np.array_equal(predictions(s1, Problem(ds)), predictions(s2, Problem(ds)))
    report(6, "transductive hygiene", same_traj and same_params and same_pred,
           f"trajectory identical={same_traj and same_params}, predictions identical={same_pred}")


@pytest.fixture(scope="module")
def synthetic():
    """LHGN and FeatCon over PER {0, 0.5} x 5 seeds on the blobs task, plus wall time."""
    spec = ExperimentSpec(pers=[0.0, 0.5], runs=len(SEEDS), seed=SEEDS[0], config=SYNTHETIC_CONFIG,
                          dataset=make_blobs(seed=BLOB_SEED, **BLOBS))
    start = time.perf_counter()
    lhgn = run_experiment(spec)
    featcon = run_baseline_featcon(spec)
    return lhgn, featcon, time.perf_counter() - start


def test_c07_convergence(synthetic):
    lhgn, _, _ = synthetic
    bad = []
    for (beta, seed), h in sorted(lhgn.histories.items()):
        tail = h.train_acc[-20:]
        if not h.objective[-1] < h.objective[0]:
            bad.append(f"PER {beta} seed {seed}: objective {h.objective[0]:.3g} -> {h.objective[-1]:.3g}")
        if len(h) > 200 or max(tail) - min(tail) > 0.02:
            bad.append(f"PER {beta} seed {seed}: train acc range {max(tail) - min(tail):.3f} over last 20 epochs")
    detail = (f"{len(lhgn.histories)} runs: objective decreased and train accuracy flat (range <= 0.02) "
              f"over the last 20 of <= 200 epochs") if not bad else "; ".join(bad[:3])
    report(7, "convergence behavior", not bad, detail)


def test_c08_end_to_end_synthetic(synthetic):
    lhgn, featcon, elapsed = synthetic
    acc0, acc5, base5 = lhgn.mean(0.0), lhgn.mean(0.5), featcon.mean(0.5)
    ok = acc0 >= 0.95 and acc5 >= base5 and acc0 - acc5 <= 0.10 and elapsed < 300
    report(8, "end-to-end synthetic", ok,
           f"PER0 {acc0:.3f} >= 0.95; PER0.5 {acc5:.3f} >= FeatCon {base5:.3f}; "
           f"drop {100 * (acc0 - acc5):.1f} <= 10 points; {elapsed:.0f}s < 300s")


def _handwritten_dir():
    path = Path(os.environ.get("LHGN_HANDWRITTEN", ROOT / "data" / "handwritten"))
    return path if (path / "labels.csv").exists() else None


def test_c09_handwritten():
    path = _handwritten_dir()
    if path is None:
        report(9, "handwritten digits", False, "data missing: run `lhgn fetch-handwritten` first")
    ds = load_dataset([str(path / f"view{v}.csv") for v in range(6)], str(path / "labels.csv"))
    spec = ExperimentSpec(pers=[0.0, 0.5], runs=10, seed=0, config=HANDWRITTEN_CONFIG, dataset=ds,
                          out_dir=str(ROOT / "results" / "handwritten"))
    start = time.perf_counter()
    result = run_experiment(spec)
    elapsed = time.perf_counter() - start
    a0, a5 = result.mean(0.0), result.mean(0.5)
    s0, s5 = result.std(0.0), result.std(0.5)
    report(9, "handwritten digits", a0 >= 0.92 and a5 >= 0.88 and elapsed < 1800,
           f"PER0 {100 * a0:.2f}±{100 * s0:.2f} >= 92; PER0.5 {100 * a5:.2f}±{100 * s5:.2f} >= 88; "
           f"{elapsed / 60:.1f} min < 30")


def test_c10_ablation_ordering(synthetic):
    lhgn, _, _ = synthetic
    full = lhgn.mean(0.5)
    means = {}
    for ablation in ("N", "L"):
        cfg = TrainConfig.from_dict({**SYNTHETIC_CONFIG.to_dict(), "ablation": ablation})
        spec = ExperimentSpec(pers=[0.5], runs=len(SEEDS), seed=SEEDS[0], config=cfg,
                              dataset=make_blobs(seed=BLOB_SEED, **BLOBS))
        means[ablation] = run_experiment(spec).mean(0.5)
    report(10, "ablation ordering", full >= means["N"] and full >= means["L"],
           f"full {full:.3f} >= N-only {means['N']:.3f} and >= latent-only {means['L']:.3f}")
