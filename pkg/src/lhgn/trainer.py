"""Alternating full-batch gradient descent over decoders, latent table and attention."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from . import classifier
from .attention import EdgeList, GraphAttentionNet, graph_edge_lists
from .dataset import MultiViewDataset
from .graph import HeteroGraph, build_graph
from .latent import DTYPE, ObservedViews, init_params, recon_loss

log = logging.getLogger(__name__)

ABLATIONS = {
    "none": "full",  # both constraints
    "N": "neighborhood",  # kNN affinity only, no view masks
    "V": "existence",  # view masks on a unit complete graph
    "L": None,  # classify on the latent table directly
}


@dataclass
class TrainConfig:
    lam: float = 10.0
    lr: float = 0.01
    epochs: int = 200
    latent_dim: int = 128
    heads: int = 4
    head_dim: int = 64
    out_dim: int = 128
    gat_layers: int = 1
    knn: int = 10
    rebuild_every: int = 1
    seed: int = 0
    convergence_tol: float = 1e-5
    convergence_window: int = 10
    ablation: str = "none"
    existence: str = "presence"  # or "label": labeled endpoints must also agree
    weighted_attention: bool = False
    exclude_self: bool = False
    latent_step: str = "instance"  # "instance" or "mean"; see step_for_latent()
    latent_init: float = 0.001  # std of the initial latent table

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.rebuild_every < 1:
            raise ValueError("rebuild_every must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {sorted(ABLATIONS)}")
        if self.existence not in ("presence", "label"):
            raise ValueError("existence must be 'presence' or 'label'")
        if self.latent_init < 0:
            raise ValueError("latent_init must be >= 0")
        if self.latent_step not in ("instance", "mean"):
            raise ValueError("latent_step must be 'instance' or 'mean'")
        for name in ("latent_dim", "heads", "head_dim", "out_dim", "gat_layers", "knn",
                     "convergence_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def graph_mode(self) -> Optional[str]:
        return ABLATIONS[self.ablation]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    objective: list = field(default_factory=list)
    recon: list = field(default_factory=list)
    classification: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)

    def __len__(self):
        return len(self.objective)

    def append(self, **row):
        for k, v in row.items():
            getattr(self, k).append(float(v))

    def rows(self):
        return [
            {"epoch": i + 1, **{k: getattr(self, k)[i] for k in self._keys()}}
            for i in range(len(self))
        ]

    @staticmethod
    def _keys():
        return ("objective", "recon", "classification", "train_acc", "test_acc")

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in self._keys()}

    @classmethod
    def from_dict(cls, d) -> "TrainHistory":
        return cls(**{k: list(d[k]) for k in cls._keys()})


class Problem:
    """Tensors derived once from a split dataset.

    Test labels are deliberately not copied here: nothing reachable from the
    training loop can read them.
    """

    def __init__(self, ds: MultiViewDataset):
        self.observed = ObservedViews.from_dataset(ds)
        self.mask = np.asarray(ds.mask)
        self.num_instances = ds.num_instances
        self.num_classes = ds.num_classes
        self.train_idx = np.asarray(ds.train_idx)
        self.test_idx = np.asarray(ds.test_idx)
        train_labels = np.full(ds.num_instances, -1, dtype=np.int64)
        train_labels[self.train_idx] = ds.labels[self.train_idx]
        self.train_labels = train_labels
        self.prototypes = classifier.prototype_index(train_labels, self.train_idx, ds.num_classes)


@dataclass
class LHGNState:
    config: TrainConfig
    H: torch.Tensor
    decoders: nn.ModuleList
    gat: Optional[GraphAttentionNet]
    epoch: int = 0
    graph: Optional[HeteroGraph] = None
    graph_H: Optional[np.ndarray] = None  # latent snapshot the current graph was built from
    edges: list = field(default_factory=list)

    def named_groups(self) -> dict[str, nn.Parameter]:
        out = {f"decoders.{n}": p for n, p in self.decoders.named_parameters()}
        if self.gat is not None:
            out.update({f"gat.{n}": p for n, p in self.gat.named_parameters()})
        return out


def init_state(ds: MultiViewDataset, config: TrainConfig) -> LHGNState:
    H, decoders = init_params(ds, config.latent_dim, config.seed, init_scale=config.latent_init)
    gat = None
    if config.graph_mode is not None:
        gat = GraphAttentionNet(
            ds.num_views,
            config.latent_dim,
            heads=config.heads,
            head_dim=config.head_dim,
            out_dim=config.out_dim,
            layers=config.gat_layers,
            seed=config.seed + 1,
            weighted=config.weighted_attention,
        )
    return LHGNState(config, H, decoders, gat)


def rebuild_graph(state: LHGNState, problem: Problem, source: Optional[np.ndarray] = None):
    cfg = state.config
    if cfg.graph_mode is None:
        return
    snapshot = state.H.detach().numpy().copy() if source is None else source
    if not np.isfinite(snapshot).all():
        raise FloatingPointError(f"non-finite latent table at epoch {state.epoch}")
    labels = problem.train_labels if cfg.existence == "label" else None
    k = min(cfg.knn, problem.num_instances - 1)
    state.graph = build_graph(snapshot, problem.mask, k, mode=cfg.graph_mode, labels=labels)
    state.graph_H = snapshot
    state.edges = graph_edge_lists(state.graph)


def representation(state: LHGNState, H: torch.Tensor) -> torch.Tensor:
    """Z used for classification: aggregated attention output, or H for the L ablation."""
    if state.gat is None:
        return H
    return state.gat(H, state.edges)


def objective_terms(state: LHGNState, problem: Problem, H: Optional[torch.Tensor] = None):
    H = state.H if H is None else H
    rec = recon_loss(problem.observed, H, state.decoders)
    Z = representation(state, H)
    cls = classifier.classification_loss(
        Z, problem.train_labels, problem.train_idx, problem.prototypes, state.config.exclude_self
    )
    return rec, cls, Z


def total_objective(state: LHGNState, problem: Problem, H: Optional[torch.Tensor] = None):
    rec, cls, _ = objective_terms(state, problem, H)
    return rec + state.config.lam * cls


def step_for_latent(config: TrainConfig, num_instances: int) -> float:
    """Learning rate applied to the latent rows.

    "mean" applies lr to the gradient of the N-averaged objective, which
    shrinks each row's step by 1/N.  "instance" (default) rescales by N so
    each row moves by lr times the gradient of its own terms.
    """
    return config.lr * (num_instances if config.latent_step == "instance" else 1.0)


def _check_finite(what: str, epoch: int, *tensors):
    for t in tensors:
        if t is not None and not torch.isfinite(t).all():
            raise FloatingPointError(f"non-finite {what} at epoch {epoch}")


def train_epoch(state: LHGNState, problem: Problem) -> LHGNState:
    """One pass of the three alternating updates, in place."""
    cfg = state.config
    if cfg.graph_mode is not None and (state.graph is None or state.epoch % cfg.rebuild_every == 0):
        rebuild_graph(state, problem)

    # phase 1: decoders against the reconstruction term
    dec_params = list(state.decoders.parameters())
    loss = recon_loss(problem.observed, state.H, state.decoders)
    grads = torch.autograd.grad(loss, dec_params, allow_unused=True)
    _check_finite("reconstruction loss", state.epoch, loss, *grads)
    with torch.no_grad():
        for p, g in zip(dec_params, grads):
            if g is not None:
                p.sub_(cfg.lr * g)

    # phase 2: latent rows against the full objective
    H = state.H.detach().clone().requires_grad_(True)
    loss = total_objective(state, problem, H)
    (gH,) = torch.autograd.grad(loss, [H])
    _check_finite("objective (latent phase)", state.epoch, loss, gH)
    state.H = (H - step_for_latent(cfg, problem.num_instances) * gH).detach()

    # phase 3: attention and aggregation; reconstruction is constant here
    if state.gat is not None and cfg.lam > 0:
        gat_params = list(state.gat.parameters())
        Z = representation(state, state.H)
        cls = classifier.classification_loss(
            Z, problem.train_labels, problem.train_idx, problem.prototypes, cfg.exclude_self
        )
        grads = torch.autograd.grad(cfg.lam * cls, gat_params, allow_unused=True)
        _check_finite("objective (attention phase)", state.epoch, cls, *grads)
        with torch.no_grad():
            for p, g in zip(gat_params, grads):
                if g is not None:
                    p.sub_(cfg.lr * g)

    state.epoch += 1
    return state


def predictions(state: LHGNState, problem: Problem) -> np.ndarray:
    with torch.no_grad():
        Z = representation(state, state.H)
        return classifier.predict_all(Z, problem.prototypes)


def evaluate(state: LHGNState, ds: MultiViewDataset, idx, problem: Optional[Problem] = None) -> float:
    idx = np.asarray(idx)
    if idx.size == 0:
        return float("nan")
    problem = problem or Problem(ds)
    pred = predictions(state, problem)
    return float(np.mean(pred[idx] == np.asarray(ds.labels)[idx]))


def _record(state, problem, ds, history: TrainHistory):
    with torch.no_grad():
        rec, cls, Z = objective_terms(state, problem)
        pred = classifier.predict_all(Z, problem.prototypes)
    labels = np.asarray(ds.labels)
    tr, te = problem.train_idx, problem.test_idx
    history.append(
        objective=rec + state.config.lam * cls,
        recon=rec,
        classification=cls,
        train_acc=np.mean(pred[tr] == labels[tr]),
        test_acc=np.mean(pred[te] == labels[te]) if te.size else float("nan"),
    )


def converged(history: TrainHistory, window: int, tol: float) -> bool:
    obj = history.objective
    if len(obj) <= window:
        return False
    prev, cur = obj[-1 - window], obj[-1]
    return abs(cur - prev) / max(abs(prev), 1e-12) < tol


def fit(
    ds: MultiViewDataset,
    config: TrainConfig,
    state: Optional[LHGNState] = None,
    history: Optional[TrainHistory] = None,
    callback: Optional[Callable[[LHGNState, TrainHistory], None]] = None,
) -> tuple[LHGNState, TrainHistory]:
    """Train until the epoch budget is spent or the objective stops moving.

    Passing ``state``/``history`` (e.g. from ``load_checkpoint``) resumes.
    """
    problem = Problem(ds)
    if state is None:
        state = init_state(ds, config)
    history = history if history is not None else TrainHistory()
    while state.epoch < config.epochs:
        train_epoch(state, problem)
        _record(state, problem, ds, history)
        if callback is not None:
            callback(state, history)
        if converged(history, config.convergence_window, config.convergence_tol):
            log.info("converged at epoch %d", state.epoch)
            break
    return state, history


# ---------------------------------------------------------------- gradients


def objective_grads(state: LHGNState, problem: Problem) -> dict[str, torch.Tensor]:
    """Analytic gradients of the total objective for every parameter group, graph held fixed."""
    H = state.H.detach().clone().requires_grad_(True)
    groups = state.named_groups()
    loss = total_objective(state, problem, H)
    grads = torch.autograd.grad(loss, [H, *groups.values()], allow_unused=True)
    out = {"H": grads[0]}
    for (name, p), g in zip(groups.items(), grads[1:]):
        out[name] = torch.zeros_like(p) if g is None else g
    return out


def group_of(name: str) -> str:
    """Report bucket: H, decoders, W_agg, or per-view attention W / a."""
    if name == "H" or name.startswith("decoders."):
        return name.split(".")[0]
    parts = name.split(".")  # gat.views.<v>.<layer>.<W|a>  or  gat.W_agg
    if parts[1] == "W_agg":
        return "W_agg"
    return f"view{parts[2]}.layer{parts[3]}.{parts[4]}"


@dataclass
class GradientReport:
    max_rel_error: dict
    max_abs_grad: dict

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())


def gradient_check(
    state: LHGNState,
    ds_or_problem,
    epsilon: float = 1e-5,
    floor: float = 1e-6,
) -> GradientReport:
    """Central finite differences on every coordinate of every parameter group.

    Relative error per coordinate is |analytic - numeric| / max(|analytic|,
    |numeric|, floor); the report keeps the per-group maximum.
    """
    problem = ds_or_problem if isinstance(ds_or_problem, Problem) else Problem(ds_or_problem)
    if state.graph is None and state.config.graph_mode is not None:
        rebuild_graph(state, problem)
    analytic = objective_grads(state, problem)
    tensors = {"H": state.H, **state.named_groups()}
    rel: dict = {}
    absmax: dict = {}
    with torch.no_grad():
        for name, t in tensors.items():
            g = analytic[name].reshape(-1)
            flat = t.data.view(-1)
            bucket = group_of(name)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + epsilon
                up = total_objective(state, problem).item()
                flat[i] = orig - epsilon
                down = total_objective(state, problem).item()
                flat[i] = orig
                num = (up - down) / (2 * epsilon)
                a = g[i].item()
                err = abs(a - num) / max(abs(a), abs(num), floor)
                rel[bucket] = max(rel.get(bucket, 0.0), err)
                absmax[bucket] = max(absmax.get(bucket, 0.0), abs(a))
    return GradientReport(rel, absmax)


# -------------------------------------------------------------- checkpoints


def save_checkpoint(state: LHGNState, history: TrainHistory, path) -> Path:
    """Single .npz archive; resuming from it replays training bit-identically."""
    path = Path(path)
    arrays = {
        "H": state.H.detach().numpy(),
        "epoch": np.array(state.epoch),
        "meta": np.array(json.dumps({
            "config": state.config.to_dict(),
            "history": history.to_dict(),
            "rng": {"torch_initial_seed": state.config.seed},
            "format": "lhgn-checkpoint-1",
        })),
    }
    if state.graph_H is not None:
        arrays["graph_H"] = state.graph_H
    for name, p in state.named_groups().items():
        arrays[f"param/{name}"] = p.detach().numpy()
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path, ds: MultiViewDataset) -> tuple[LHGNState, TrainHistory]:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        config = TrainConfig.from_dict(meta["config"])
        state = init_state(ds, config)
        state.H = torch.as_tensor(z["H"], dtype=DTYPE).clone()
        state.epoch = int(z["epoch"])
        with torch.no_grad():
            for name, p in state.named_groups().items():
                p.copy_(torch.as_tensor(z[f"param/{name}"]))
        graph_H = z["graph_H"].copy() if "graph_H" in z.files else None
    if graph_H is not None:
        rebuild_graph(state, Problem(ds), source=graph_H)
    return state, TrainHistory.from_dict(meta["history"])
