"""Training runs, checkpoint evaluation and the ablation grid."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig
from .data import ImageDataset, SplitSpec, make_split, read_labels_csv, write_labels_csv
from .estimator import ZeroShotEmbedder
from .evaluation import EvalReport, evaluate_embeddings
from .exceptions import ConfigurationError
from .serialization import load_ten, save_ten

log = logging.getLogger(__name__)

TRAIN_LOG_HEADER = ("epoch", "lr", "proxy_loss", "softmax_loss", "total_loss")

# rows of the ablation table: (label, placement, input attention, separation norm)
ABLATION_ROWS = (
    ("Baseline", "none", False, False),
    ("B+Norm", "none", False, True),
    ("B+CBAM", "everywhere", False, False),
    ("B+CBAM_L", "late", False, False),
    ("B+CBAM_E", "early", False, False),
    ("B+CBAM_E+IA+Norm", "early", True, True),
)
GRID_HEADER = ("method", "nmi", "recall@1", "recall@2", "recall@4", "recall@8", "final_loss",
               "placement", "use_input_attention", "use_separation_norm", "config_hash")


@dataclass
class TrainResult:
    estimator: ZeroShotEmbedder
    split: SplitSpec
    history: list
    output_dir: Path


def _load_dataset(config: RunConfig) -> ImageDataset:
    if not config.dataset:
        raise ConfigurationError("config has no dataset path")
    try:
        return ImageDataset(config.dataset)
    except FileNotFoundError as exc:
        raise ConfigurationError(str(exc)) from None


def write_train_log(path, history) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRAIN_LOG_HEADER)
        for r in history:
            w.writerow((r["epoch"], repr(r["lr"]), repr(r["proxy"]), repr(r["softmax"]), repr(r["total"])))


def read_train_log(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(f)]


def train(config: RunConfig) -> TrainResult:
    """Train on the training classes of the configured split.

    Writes ``run.cfg``, ``train_log.csv``, ``last.ckpt`` (every epoch),
    ``best.ckpt`` (lowest epoch-mean combined loss) and ``final.ckpt`` into
    ``config.output_dir``.  Only images of training-split samples are read.
    """
    ds = _load_dataset(config)
    split = make_split(ds.labels, config.split_mode, config.split_seed)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "run.cfg")

    train_idx = np.asarray(split.train_indices)
    X = ds.load(train_idx)
    if X.shape[2] != config.input_size:
        raise ConfigurationError(f"dataset images are {X.shape[2]}px but input_size = {config.input_size}")
    y = ds.labels[train_idx]

    est = ZeroShotEmbedder.from_config(config)
    best = {"loss": np.inf}
    history = []

    def on_epoch(model, record):
        history.append(record)
        write_train_log(out / "train_log.csv", history)
        # kept so a later numerical abort leaves the last good state on disk
        model.save_checkpoint(out / "last.ckpt", config.config_hash)
        if record["total"] < best["loss"]:
            best["loss"] = record["total"]
            model.save_checkpoint(out / "best.ckpt", config.config_hash)

    est.fit(X, y, epoch_callback=on_epoch)
    if not history:
        write_train_log(out / "train_log.csv", history)
        est.save_checkpoint(out / "best.ckpt", config.config_hash)
    est.save_checkpoint(out / "final.ckpt", config.config_hash)
    return TrainResult(est, split, history, out)


def evaluate(checkpoint, config: Optional[RunConfig] = None, mode: Optional[str] = None,
             split: Optional[SplitSpec] = None, kmeans_seed: Optional[int] = None,
             output_dir=None) -> tuple[EvalReport, ZeroShotEmbedder]:
    """Embed the test partition with a trained checkpoint and score it.

    ``config`` defaults to the ``run.cfg`` beside the checkpoint and must hash
    to the value stored in the checkpoint.  Writes ``report.csv``,
    ``embeddings.ten`` and ``embeddings_labels.csv`` to ``output_dir``
    (default: the checkpoint's directory).
    """
    checkpoint = Path(checkpoint)
    if config is None:
        config = RunConfig.load(checkpoint.parent / "run.cfg")
    mode = mode or config.split_mode
    kmeans_seed = config.kmeans_seed if kmeans_seed is None else kmeans_seed
    est = ZeroShotEmbedder.from_config(config).load_checkpoint(checkpoint, config_hash=config.config_hash)

    ds = _load_dataset(config)
    if split is None:
        split = make_split(ds.labels, mode, config.split_seed)
    test_idx = np.asarray(split.test_indices)
    labels = ds.labels[test_idx]
    seen = split.test_seen_mask if mode == "gzsl" else None

    calls_before = est.head_.calls
    emb = est.transform(ds.load(test_idx))
    if est.head_.calls != calls_before:
        raise RuntimeError("softmax branch was executed during evaluation")

    meta = {"split": f"{mode}-s{split.seed}", "seed": kmeans_seed, "config_hash": config.config_hash}
    report = evaluate_embeddings(emb, labels, seen, kmeans_seed=kmeans_seed, metadata=meta)
    out = Path(output_dir) if output_dir is not None else checkpoint.parent
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    save_ten(out / "embeddings.ten", emb)
    write_labels_csv(out / "embeddings_labels.csv", labels,
                     seen if seen is not None else np.zeros(len(labels), dtype=bool))
    return report, est


def evaluate_embedding_files(embeddings_path, labels_path, mode: str = "zsl", kmeans_seed: int = 0,
                             output_dir=None) -> EvalReport:
    """Score a ``.ten`` embedding dump with its ``index,label,seen`` sidecar."""
    emb = load_ten(embeddings_path)
    labels, seen = read_labels_csv(labels_path)
    if mode == "gzsl" and seen is None:
        raise ConfigurationError(f"{labels_path} has no 'seen' column; required for gzsl")
    meta = {"split": f"{mode}-file", "seed": kmeans_seed, "config_hash": ""}
    report = evaluate_embeddings(emb, labels, seen if mode == "gzsl" else None, kmeans_seed=kmeans_seed,
                                 metadata=meta)
    if output_dir is not None:
        Path(output_dir).mkdir(parents=True, exist_ok=True)
        report.write_csv(Path(output_dir) / "report.csv")
    return report


def ablation_grid(base: RunConfig) -> Path:
    """Train and evaluate every ablation row with shared seeds; write ``grid.csv``."""
    root = Path(base.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for method, placement, use_ia, use_norm in ABLATION_ROWS:
        cfg = base.replace(placement=placement, use_input_attention=use_ia, use_separation_norm=use_norm,
                           output_dir=str(root / method.replace("+", "_")))
        log.info("ablation row %s", method)
        result = train(cfg)
        report, _ = evaluate(result.output_dir / "final.ckpt", cfg)
        final_loss = result.history[-1]["total"] if result.history else float("nan")
        rows.append((method, repr(report.nmi), *(repr(report.recall_at[k]) for k in (1, 2, 4, 8)),
                     repr(final_loss), placement, str(use_ia).lower(), str(use_norm).lower(), cfg.config_hash))
    with open(root / "grid.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(GRID_HEADER)
        w.writerows(rows)
    return root / "grid.csv"
