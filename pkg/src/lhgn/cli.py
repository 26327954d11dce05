"""Command line entry point: ``lhgn run``, ``lhgn baseline``, ``lhgn fetch-handwritten``."""

from __future__ import annotations

import argparse
import io
import logging
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .dataset import DatasetError, per, write_matrix
from .experiment import ExperimentSpec, StageError, export_embeddings, run_baseline_featcon, run_experiment
from .synthetic import make_blobs
from .trainer import TrainConfig

log = logging.getLogger("lhgn")

# flag name -> TrainConfig field
CONFIG_FLAGS = {
    "epochs": "epochs",
    "lambda": "lam",
    "lr": "lr",
    "heads": "heads",
    "knn": "knn",
    "latent_dim": "latent_dim",
    "rebuild_every": "rebuild_every",
    "ablation": "ablation",
}
SPEC_KEYS = ("per", "runs", "seed", "out", "views", "labels", "mask", "synthetic", "train_fraction")

HANDWRITTEN_WHEEL = "mvlearn==0.5.0"
HANDWRITTEN_FILES = ["mfeat-fou", "mfeat-fac", "mfeat-kar", "mfeat-pix", "mfeat-zer", "mfeat-mor"]


def _per_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad PER list {text!r}") from exc


def _add_experiment_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat YAML file with keys mirroring these flags")
    p.add_argument("--views", nargs="+", help="one CSV per view")
    p.add_argument("--labels", help="CSV with one label per row")
    p.add_argument("--mask", help="optional 0/1 CSV of shape N x V")
    p.add_argument("--synthetic", action="store_true", help="use the built-in 3-class two-view blobs")
    p.add_argument("--per", type=_per_list, help="comma-separated PER values, e.g. 0,0.1,0.5")
    p.add_argument("--runs", type=int, help="repetitions per PER (seeds base..base+R-1)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--train-fraction", type=float, dest="train_fraction")
    p.add_argument("--out", help="output directory for reports and histories")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lhgn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate LHGN over a PER x seed sweep")
    _add_experiment_args(run)
    run.add_argument("--epochs", type=int)
    run.add_argument("--lambda", type=float, dest="lambda")
    run.add_argument("--lr", type=float)
    run.add_argument("--heads", type=int)
    run.add_argument("--knn", type=int)
    run.add_argument("--latent-dim", type=int, dest="latent_dim")
    run.add_argument("--rebuild-every", type=int, dest="rebuild_every")
    run.add_argument("--ablation", choices=["none", "L", "N", "V"])
    run.add_argument("--export-embeddings", action="store_true",
                     help="write Z of every run to <out>/embeddings/")

    base = sub.add_parser("baseline", help="FeatCon baseline over the same sweep")
    _add_experiment_args(base)

    fetch = sub.add_parser("fetch-handwritten", help="download the six-view handwritten digits")
    fetch.add_argument("--dest", default="data/handwritten")
    fetch.add_argument("--wheel", help=f"use an already downloaded {HANDWRITTEN_WHEEL} wheel")
    return parser


def read_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise StageError("config", exc) from exc
    if not isinstance(data, dict):
        raise StageError("config", ValueError("config file must be a flat mapping"))
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def merge_settings(args: argparse.Namespace) -> tuple[dict, dict]:
    """(spec settings, TrainConfig fields); command-line flags override file values."""
    file_values = read_config_file(args.config)
    flags = {k: v for k, v in vars(args).items() if v is not None and v is not False}
    merged = {**file_values, **flags}
    spec = {k: merged[k] for k in SPEC_KEYS if k in merged}
    cfg = {}
    for key, value in merged.items():
        if key in CONFIG_FLAGS:
            cfg[CONFIG_FLAGS[key]] = value
        elif key in TrainConfig.__dataclass_fields__ and key not in SPEC_KEYS:
            cfg[key] = value
        elif key not in SPEC_KEYS and key not in ("command", "config", "verbose", "export_embeddings"):
            raise StageError("config", ValueError(f"unknown setting {key!r}"))
    if isinstance(spec.get("per"), (int, float)):
        spec["per"] = [float(spec["per"])]
    elif isinstance(spec.get("per"), str):
        spec["per"] = _per_list(spec["per"])
    return spec, cfg


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    settings, cfg = merge_settings(args)
    try:
        config = TrainConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise StageError("config", exc) from exc
    dataset = make_blobs() if settings.get("synthetic") else None
    pers = settings.get("per")
    if pers is None and settings.get("mask") is None:
        pers = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    views = settings.get("views") or ()
    if isinstance(views, str):
        views = [views]
    try:
        return ExperimentSpec(
            view_paths=list(views),
            label_path=settings.get("labels"),
            mask_path=settings.get("mask"),
            pers=pers,
            runs=int(settings.get("runs", 10)),
            seed=int(settings.get("seed", 0)),
            config=config,
            out_dir=settings.get("out"),
            train_fraction=float(settings.get("train_fraction", 0.8)),
            dataset=dataset,
        )
    except ValueError as exc:
        raise StageError("config", exc) from exc


def download_wheel(tmp: str) -> Path:
    cmd = [sys.executable, "-m", "pip", "download", HANDWRITTEN_WHEEL, "--no-deps", "-d", tmp]
    try:
        subprocess.run(cmd, check=True, capture_output=True, text=True)
    except subprocess.CalledProcessError as exc:
        lines = (exc.stderr or "").strip().splitlines()
        raise StageError("download", OSError(lines[-1] if lines else "pip download failed")) from exc
    return next(Path(tmp).glob("*.whl"))


def convert_handwritten(wheel, dest) -> Path:
    """Write view0..view5.csv and labels.csv from the digit tables bundled in the wheel."""
    out = Path(dest)
    out.mkdir(parents=True, exist_ok=True)
    labels = None
    try:
        with zipfile.ZipFile(wheel) as z:
            for v, name in enumerate(HANDWRITTEN_FILES):
                raw = z.read(f"mvlearn/datasets/UCImultifeature/{name}.csv").decode()
                table = np.loadtxt(io.StringIO(raw), delimiter=",", skiprows=1)  # first row: column ids
                x, y = table[:, :-1], table[:, -1].astype(np.int64)
                if labels is not None and not np.array_equal(labels, y):
                    raise ValueError(f"{name}: label column disagrees")
                labels = y
                write_matrix(out / f"view{v}.csv", x)
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise StageError("convert", exc) from exc
    write_matrix(out / "labels.csv", labels[:, None], fmt="%d")
    return out


def fetch_handwritten(dest: str, wheel: Optional[str] = None) -> Path:
    """Six-view handwritten digits (2000 x {76, 216, 64, 240, 47, 6}, 10 classes) as plain CSVs."""
    if wheel is not None:
        return convert_handwritten(wheel, dest)
    with tempfile.TemporaryDirectory() as tmp:
        return convert_handwritten(download_wheel(tmp), dest)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fetch-handwritten":
            path = fetch_handwritten(args.dest, args.wheel)
            print(f"wrote {path}")
            return 0
        spec = build_spec(args)
        if args.command == "baseline":
            report = run_baseline_featcon(spec)
        else:
            on_fit = None
            if args.export_embeddings and spec.out_dir:
                emb_dir = Path(spec.out_dir) / "embeddings"
                emb_dir.mkdir(parents=True, exist_ok=True)

                def on_fit(ds, state, seed):
                    export_embeddings(state, ds, emb_dir / f"per{per(ds.mask):.2f}_seed{seed}.csv")

            report = run_experiment(spec, on_fit=on_fit)
        print(report.table())
        return 0
    except StageError as exc:
        print(f"lhgn: {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return 2
    except DatasetError as exc:
        print(f"lhgn: load failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
