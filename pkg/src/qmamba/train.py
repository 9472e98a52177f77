"""Training and evaluation loops, config files, and metrics emission.

The config file is a flat `key = value` document ('#' starts a comment);
every key must name a TrainConfig field, unknown keys are hard errors. MNIST
paths resolve from `dataset_dir` or the QMAMBA_DATA_DIR environment variable.

Reference mode (the default) is single-threaded and fully deterministic for a
given config+seed: reruns produce byte-identical metrics CSVs. Because wall
time can never be deterministic, the wall_seconds column is written as 0.0
unless timing=true is set, which trades byte-identity for real timings.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data as dio
from .errors import ConfigError, DataIOError, NumericError
from .mamba import MambaModel, ModelConfig
from .optim import AdamW, default_groups

__all__ = [
    "TrainConfig",
    "MetricsRecord",
    "TrainResult",
    "parse_config_file",
    "load_datasets",
    "resolve_mnist_dir",
    "train",
    "evaluate",
    "evaluate_model",
    "compare_backends",
    "METRICS_HEADER",
    "DATA_DIR_ENV",
]

DATA_DIR_ENV = "QMAMBA_DATA_DIR"
METRICS_HEADER = "epoch,iteration,split,loss,accuracy,wall_seconds"

_BACKEND_PRESETS = {
    "classical": "classical",
    "quantum": "quantum",
    "hybrid": "quantum",  # the paper's hybrid = quantum projections, classical rest
}


@dataclass(frozen=True)
class TrainConfig:
    """Run hyperparameters; field names double as config-file keys."""

    d_model: int = 128
    n_layers: int = 2
    expand: int = 4
    d_state: int = 16
    dt_rank: int = 0
    d_conv: int = 4
    backend: str = "classical"  # classical | quantum | hybrid
    ansatz_layers: int = 1
    entangle_pattern: str = "ring"
    max_qubits: int = 8
    epochs: int = 4
    batch_size: int = 16
    seed: int = 0
    dataset: str = "synthetic"  # synthetic | mnist
    dataset_dir: str = ""
    downsample: int = 1
    subset: int = 0  # 0 means the full dataset
    num_classes: int = 10
    synthetic_n: int = 512
    synthetic_length: int = 32
    out_dir: str = "runs/default"
    classical_lr: float = 0.0  # 0 means the 1e-3 default
    lr_scale: float = 1.0  # uniform scale on every group lr (desk-run knob)
    grad_clip: float = 0.0  # 0 means off
    timing: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if min(self.d_model, self.n_layers, self.expand, self.d_state) < 1:
            raise ConfigError("model dimensions must be positive")
        if self.backend not in _BACKEND_PRESETS:
            raise ConfigError(
                f"backend must be one of {sorted(_BACKEND_PRESETS)}, got "
                f"{self.backend!r}"
            )
        if self.dataset not in ("synthetic", "mnist"):
            raise ConfigError(f"dataset must be synthetic or mnist, got {self.dataset!r}")
        if self.downsample not in (1, 2, 4):
            raise ConfigError(f"downsample must be 1, 2 or 4, got {self.downsample}")
        if self.lr_scale <= 0:
            raise ConfigError(f"lr_scale must be positive, got {self.lr_scale}")

    def model_config(self) -> ModelConfig:
        proj = _BACKEND_PRESETS[self.backend]
        return ModelConfig(
            d_model=self.d_model,
            n_layers=self.n_layers,
            expand=self.expand,
            d_state=self.d_state,
            dt_rank=self.dt_rank,
            d_conv=self.d_conv,
            num_classes=self.num_classes,
            input_mode="real",
            feat_dim=1,
            backends={k: proj for k in ("in_proj", "x_proj", "out_proj")},
            ansatz_layers=self.ansatz_layers,
            entangle_pattern=self.entangle_pattern,
            max_qubits=self.max_qubits,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {key}: cannot parse {raw!r} as bool")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: {exc}") from exc
    return raw


def parse_config_file(path) -> TrainConfig:
    """Flat `key = value` document; keys are TrainConfig fields and unknown
    keys are hard errors."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
        values[key] = _parse_value(key, raw)
    return TrainConfig(**values)


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    iteration: int
    split: str
    loss: float
    accuracy: float
    wall_seconds: float

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ConfigError(f"split must be train or test, got {self.split!r}")
        if self.loss < 0 or not (0.0 <= self.accuracy <= 1.0):
            raise ConfigError(
                f"invalid metrics: loss={self.loss}, accuracy={self.accuracy}"
            )

    def csv_row(self) -> str:
        return (
            f"{self.epoch},{self.iteration},{self.split},"
            f"{self.loss!r},{self.accuracy!r},{self.wall_seconds!r}"
        )

    @classmethod
    def from_csv_row(cls, row: str) -> "MetricsRecord":
        epoch, iteration, split, loss, acc, wall = row.split(",")
        return cls(int(epoch), int(iteration), split, float(loss), float(acc), float(wall))


@dataclass
class TrainResult:
    config: TrainConfig
    records: list
    metrics_path: Path
    checkpoint_paths: list
    final_checkpoint: Path


_MNIST_NAMES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def resolve_mnist_dir(dataset_dir: str) -> dict:
    """Locate the four IDX files (plain or .gz) inside a directory."""
    root = Path(dataset_dir) if dataset_dir else Path(os.environ.get(DATA_DIR_ENV, ""))
    if not dataset_dir and not os.environ.get(DATA_DIR_ENV):
        raise DataIOError(
            f"no MNIST location: set dataset_dir or the {DATA_DIR_ENV} env var"
        )
    if not root.is_dir():
        raise DataIOError(f"MNIST directory {root} does not exist")
    found = {}
    for key, names in _MNIST_NAMES.items():
        for name in names:
            for candidate in (root / name, root / (name + ".gz")):
                if candidate.is_file():
                    found[key] = candidate
                    break
            if key in found:
                break
        if key not in found:
            raise DataIOError(f"missing MNIST file for {key} under {root}")
    return found


def load_datasets(cfg: TrainConfig):
    """Materialize (train, test) datasets per the config."""
    if cfg.dataset == "synthetic":
        train_ds = dio.synthetic_dataset(
            cfg.synthetic_n, cfg.synthetic_length, cfg.num_classes, seed=cfg.seed
        )
        test_ds = dio.synthetic_dataset(
            max(cfg.synthetic_n // 4, 1),
            cfg.synthetic_length,
            cfg.num_classes,
            seed=cfg.seed + 1,
        )
    else:
        paths = resolve_mnist_dir(cfg.dataset_dir)
        train_ds = dio.load_idx(paths["train_images"], paths["train_labels"])
        test_ds = dio.load_idx(paths["test_images"], paths["test_labels"])
        if cfg.downsample != 1:
            train_ds = dio.downsample(train_ds, cfg.downsample)
            test_ds = dio.downsample(test_ds, cfg.downsample)
    if cfg.subset:
        train_ds = dio.take_subset(train_ds, min(cfg.subset, len(train_ds)))
        test_ds = dio.take_subset(test_ds, min(cfg.subset, len(test_ds)))
    return train_ds, test_ds


def _batch_metrics(model: MambaModel, inputs, labels):
    logits = model.forward(inputs)
    loss = ad.softmax_cross_entropy(logits, labels)
    acc = float(np.mean(np.argmax(logits.data, axis=1) == labels))
    return loss, acc


def evaluate_model(model: MambaModel, ds: dio.SequenceDataset, batch_size: int = 64):
    """Mean loss and accuracy over a dataset; no parameter mutation."""
    total_loss, correct, seen = 0.0, 0, 0
    for start in range(0, len(ds), batch_size):
        inputs = ds.inputs[start : start + batch_size]
        labels = ds.labels[start : start + batch_size]
        logits = model.forward(inputs)
        loss = ad.softmax_cross_entropy(logits, labels)
        n = len(labels)
        total_loss += loss.item() * n
        correct += int(np.sum(np.argmax(logits.data, axis=1) == labels))
        seen += n
    return total_loss / seen, correct / seen


def evaluate(checkpoint_path, ds: dio.SequenceDataset, batch_size: int = 64):
    """Load a checkpoint and score it on a dataset."""
    model = MambaModel.load(checkpoint_path)
    if ds.num_classes != model.cfg.num_classes:
        raise ConfigError(
            f"dataset has {ds.num_classes} classes but checkpoint expects "
            f"{model.cfg.num_classes}"
        )
    return evaluate_model(model, ds, batch_size)


def _write_metrics(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(METRICS_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")


def train(cfg: TrainConfig, datasets=None) -> TrainResult:
    """Full training run: per-iteration train metrics, per-epoch test metrics,
    a checkpoint at every epoch end, and a metrics CSV.

    `datasets` may inject a pre-built (train, test) pair; otherwise they are
    loaded per the config.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = datasets if datasets is not None else load_datasets(cfg)
    if train_ds.inputs.ndim != 3 or train_ds.inputs.shape[2] != 1:
        raise ConfigError(
            f"training expects (n, length, 1) float sequences, got "
            f"{train_ds.inputs.shape}"
        )
    model = MambaModel(cfg.model_config(), seed=cfg.seed)
    groups = default_groups(
        cfg.classical_lr if cfg.classical_lr > 0 else None, lr_scale=cfg.lr_scale
    )
    opt = AdamW(
        model.parameters(),
        groups=groups,
        grad_clip=cfg.grad_clip if cfg.grad_clip > 0 else None,
    )
    records: list[MetricsRecord] = []
    checkpoints: list[Path] = []
    metrics_path = out_dir / "metrics.csv"
    clock = time.perf_counter if cfg.timing else (lambda: 0.0)
    t0 = clock()
    iteration = 0
    for epoch in range(1, cfg.epochs + 1):
        for inputs, labels in dio.batches(
            train_ds, cfg.batch_size, shuffle_seed=cfg.seed, epoch=epoch - 1
        ):
            iteration += 1
            model.zero_grads()
            loss, acc = _batch_metrics(model, inputs, labels)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                _write_metrics(metrics_path, records)
                raise NumericError(
                    f"non-finite loss at epoch {epoch} iteration {iteration}; "
                    f"last-good checkpoint: "
                    f"{checkpoints[-1] if checkpoints else 'none'}"
                )
            loss.backward()
            opt.step()
            records.append(
                MetricsRecord(epoch, iteration, "train", loss_val, acc, clock() - t0)
            )
        test_loss, test_acc = evaluate_model(model, test_ds, cfg.batch_size)
        records.append(
            MetricsRecord(epoch, iteration, "test", test_loss, test_acc, clock() - t0)
        )
        ckpt = out_dir / f"epoch_{epoch:03d}.ckpt"
        model.save(ckpt)
        checkpoints.append(ckpt)
    final = out_dir / "final.ckpt"
    model.save(final)
    _write_metrics(metrics_path, records)
    return TrainResult(cfg, records, metrics_path, checkpoints, final)


def _epoch_summary(records, split: str):
    """Mean loss/accuracy per epoch for one split."""
    out = {}
    for rec in records:
        if rec.split != split:
            continue
        bucket = out.setdefault(rec.epoch, [0.0, 0.0, 0])
        bucket[0] += rec.loss
        bucket[1] += rec.accuracy
        bucket[2] += 1
    return {
        epoch: (s_loss / n, s_acc / n) for epoch, (s_loss, s_acc, n) in out.items()
    }


def compare_backends(cfg: TrainConfig, datasets=None):
    """Train the classical and hybrid variants under identical settings and
    emit a side-by-side per-epoch metrics table. Returns
    (results dict, table string)."""
    results = {}
    for backend in ("classical", "hybrid"):
        run_cfg = replace(
            cfg, backend=backend, out_dir=str(Path(cfg.out_dir) / backend)
        )
        results[backend] = train(run_cfg, datasets=datasets)
    lines = [
        f"{'epoch':>5} | {'classical train loss':>20} | {'hybrid train loss':>18} "
        f"| {'classical test acc':>18} | {'hybrid test acc':>15}"
    ]
    cl_train = _epoch_summary(results["classical"].records, "train")
    hy_train = _epoch_summary(results["hybrid"].records, "train")
    cl_test = _epoch_summary(results["classical"].records, "test")
    hy_test = _epoch_summary(results["hybrid"].records, "test")
    for epoch in sorted(cl_train):
        lines.append(
            f"{epoch:>5} | {cl_train[epoch][0]:>20.6f} | {hy_train[epoch][0]:>18.6f} "
            f"| {cl_test[epoch][1]:>18.4f} | {hy_test[epoch][1]:>15.4f}"
        )
    n_cl = MambaModel(
        replace(cfg, backend="classical").model_config(), seed=cfg.seed
    ).num_parameters()
    n_hy = MambaModel(
        replace(cfg, backend="hybrid").model_config(), seed=cfg.seed
    ).num_parameters()
    lines.append(f"parameter counts: classical={n_cl}, hybrid={n_hy}")
    table = "\n".join(lines)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "comparison.txt").write_text(table + "\n", encoding="utf-8")
    return results, table
