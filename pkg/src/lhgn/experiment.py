"""Seeded PER sweeps, metric aggregation and plain-text reports."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import baseline
from .dataset import MultiViewDataset, load_dataset, normalize_views, per, simulate_missing, split
from .trainer import LHGNState, Problem, TrainConfig, fit, predictions, representation

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """Failure inside one pipeline stage; ``stage`` names it for the exit message."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentSpec:
    """What to run.  ``pers=None`` keeps the dataset's own mask instead of simulating one."""

    view_paths: Sequence[str] = ()
    label_path: Optional[str] = None
    mask_path: Optional[str] = None
    pers: Optional[Sequence[float]] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    runs: int = 10
    seed: int = 0
    config: TrainConfig = field(default_factory=TrainConfig)
    out_dir: Optional[str] = None
    train_fraction: float = 0.8
    slack: float = 0.05
    dataset: Optional[MultiViewDataset] = None  # in-memory source, overrides the paths

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.pers is not None:
            if not len(self.pers):
                raise ValueError("PER list is empty")
            if any(b < 0 for b in self.pers):
                raise ValueError("PER values must be >= 0")


@dataclass
class MetricsReport:
    method: str
    accuracies: dict  # PER -> list of test accuracies, one per run
    seeds: list
    config_hash: str
    started: str
    finished: str
    slack: float
    histories: dict = field(default_factory=dict)  # (PER, seed) -> TrainHistory

    def mean(self, beta: float) -> float:
        return float(np.mean(self.accuracies[beta]))

    def std(self, beta: float) -> float:
        acc = self.accuracies[beta]
        return float(np.std(acc, ddof=1)) if len(acc) > 1 else 0.0

    @property
    def degradation_flag(self) -> bool:
        """True when accuracy at PER 0 falls below the max-PER accuracy by more than ``slack``."""
        pers = sorted(self.accuracies)
        if len(pers) < 2:
            return False
        return self.mean(pers[0]) < self.mean(pers[-1]) - self.slack

    def summary_lines(self) -> list[str]:
        lines = [f"method={self.method}", f"config_hash={self.config_hash}",
                 f"seeds={','.join(map(str, self.seeds))}"]
        for beta in sorted(self.accuracies):
            accs = ",".join(f"{a:.6f}" for a in self.accuracies[beta])
            lines.append(
                f"per={beta:.4f} runs={len(self.accuracies[beta])} mean={self.mean(beta):.6f} "
                f"std={self.std(beta):.6f} accuracies={accs}"
            )
        lines.append(f"degradation_flag={str(self.degradation_flag).lower()}")
        return lines

    def table(self) -> str:
        rows = [f"{'PER':>5}  {'mean':>7}  {'std':>7}  runs", "-" * 30]
        for beta in sorted(self.accuracies):
            rows.append(f"{beta:5.2f}  {100 * self.mean(beta):7.2f}  {100 * self.std(beta):7.2f}  "
                        f"{len(self.accuracies[beta])}")
        if self.degradation_flag:
            rows.append(f"warning: PER {min(self.accuracies)} scores more than {self.slack} "
                        f"below PER {max(self.accuracies)}")
        return "\n".join(rows)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        body = "\n".join(self.summary_lines())
        (out / f"{self.method}_summary.txt").write_text(
            f"{body}\nstarted={self.started}\nfinished={self.finished}\n"
        )
        (out / f"{self.method}_report.txt").write_text(f"{self.method}\n{self.table()}\n")
        for (beta, seed), hist in self.histories.items():
            path = out / "histories" / f"{self.method}_per{beta:.2f}_seed{seed}.csv"
            path.parent.mkdir(exist_ok=True)
            with open(path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=["epoch", *hist.to_dict()])
                w.writeheader()
                w.writerows(hist.rows())
        return out


def config_hash(config: TrainConfig, extra: Optional[dict] = None) -> str:
    blob = json.dumps({"config": config.to_dict(), **(extra or {})}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _stage(name: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (ValueError, OSError, FloatingPointError) as exc:
        raise StageError(name, exc) from exc


def load_source(spec: ExperimentSpec) -> MultiViewDataset:
    if spec.dataset is not None:
        return spec.dataset
    if not spec.view_paths or spec.label_path is None:
        raise StageError("load", ValueError("no dataset: give view files and a label file"))
    return _stage("load", load_dataset, list(spec.view_paths), spec.label_path, spec.mask_path)


def prepare_run(source: MultiViewDataset, beta: Optional[float], seed: int, train_fraction: float):
    """simulate (unless beta is None) -> split -> normalize."""
    ds = source
    if beta is not None:
        ds = _stage("simulate", simulate_missing, ds, beta, seed)
    ds = _stage("split", split, ds, train_fraction, seed)
    return _stage("normalize", normalize_views, ds)


RunFn = Callable[[MultiViewDataset, int], tuple]


def _sweep(spec: ExperimentSpec, method: str, run_one: RunFn, extra_hash: dict) -> MetricsReport:
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    source = load_source(spec)
    if spec.pers is None and (source.mask == 1).all():
        log.info("dataset mask is complete; sweeping PER 0 only")
    pers = list(spec.pers) if spec.pers is not None else [None]
    seeds = [spec.seed + r for r in range(spec.runs)]
    accuracies: dict = {}
    histories: dict = {}
    for beta in pers:
        for seed in seeds:
            ds = prepare_run(source, beta, seed, spec.train_fraction)
            key = per(ds.mask) if beta is None else float(beta)
            acc, hist = run_one(ds, seed)
            log.info("%s PER=%.2f seed=%d acc=%.4f", method, key, seed, acc)
            accuracies.setdefault(key, []).append(acc)
            if hist is not None:
                histories[(key, seed)] = hist
    report = MetricsReport(
        method=method,
        accuracies=accuracies,
        seeds=seeds,
        config_hash=config_hash(spec.config, {"pers": pers, "train_fraction": spec.train_fraction,
                                              **extra_hash}),
        started=started,
        finished=time.strftime("%Y-%m-%dT%H:%M:%S"),
        slack=spec.slack,
        histories=histories,
    )
    if spec.out_dir is not None:
        _stage("report", report.write, spec.out_dir)
    return report


def run_experiment(spec: ExperimentSpec, on_fit: Optional[Callable] = None) -> MetricsReport:
    """LHGN over every PER x seed; ``on_fit(ds, state, seed)`` sees each trained model."""

    def run_one(ds, seed):
        cfg = TrainConfig.from_dict({**spec.config.to_dict(), "seed": seed})
        state, hist = _stage("train", fit, ds, cfg)
        if on_fit is not None:
            on_fit(ds, state, seed)
        acc = hist.test_acc[-1] if len(hist) else float("nan")
        return float(acc), hist

    return _sweep(spec, "lhgn", run_one, {"method": "lhgn"})


def run_baseline_featcon(spec: ExperimentSpec) -> MetricsReport:
    def run_one(ds, seed):
        return _stage("baseline", baseline.featcon_accuracy, ds), None

    return _sweep(spec, "featcon", run_one, {"method": "featcon"})


def export_embeddings(state: LHGNState, ds: MultiViewDataset, path) -> Path:
    """One row per instance: index, split tag, true label, predicted label, then Z."""
    path = Path(path)
    problem = Problem(ds)
    with torch.no_grad():
        Z = representation(state, state.H).numpy()
    pred = predictions(state, problem)
    tag = np.full(ds.num_instances, "unused", dtype=object)
    tag[ds.train_idx] = "train"
    tag[ds.test_idx] = "test"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "split", "label", "predicted", *(f"z{d}" for d in range(Z.shape[1]))])
        for n in range(ds.num_instances):
            w.writerow([n, tag[n], int(ds.labels[n]), int(pred[n]), *(repr(float(x)) for x in Z[n])])
    return path


def read_embeddings(path) -> tuple[np.ndarray, list, np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of ``export_embeddings``: (index, split tags, labels, predictions, Z)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    idx = np.array([int(r[0]) for r in rows])
    tags = [r[1] for r in rows]
    labels = np.array([int(r[2]) for r in rows])
    pred = np.array([int(r[3]) for r in rows])
    Z = np.array([[float(x) for x in r[4:]] for r in rows])
    return idx, tags, labels, pred, Z
