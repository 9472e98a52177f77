"""Dataset ingestion and batching.

MNIST arrives as big-endian IDX files (gzip-compressed accepted, detected by
magic); each 28x28 image is scaled to [0,1] and flattened row-major into a
length-784 sequence of single-feature tokens. A deterministic synthetic
sinusoid task covers fast tests, and `downsample` average-pools images for
desk-scale runs.
"""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConsistencyError, DataIOError, FormatError

__all__ = [
    "SequenceDataset",
    "load_idx",
    "downsample",
    "synthetic_dataset",
    "batches",
    "take_subset",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
_GZIP_MAGIC = b"\x1f\x8b"


@dataclass(frozen=True)
class SequenceDataset:
    """Uniform-length sequences with integer class labels.

    inputs: float array (num_samples, length, feat) with values in [0, 1],
    or an integer array (num_samples, length) of token bins.
    """

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs)
        labels = np.asarray(self.labels)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        if inputs.ndim not in (2, 3):
            raise ConsistencyError(f"inputs must be 2-d or 3-d, got {inputs.ndim}-d")
        if labels.shape != (inputs.shape[0],):
            raise ConsistencyError(
                f"{inputs.shape[0]} inputs but {labels.shape[0]} labels"
            )
        if np.issubdtype(inputs.dtype, np.floating) and not np.all(
            np.isfinite(inputs)
        ):
            raise ConsistencyError("inputs contain non-finite values")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ConsistencyError(
                f"labels outside [0, {self.num_classes}): "
                f"min {labels.min()}, max {labels.max()}"
            )

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def length(self) -> int:
        return self.inputs.shape[1]


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == _GZIP_MAGIC:
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic: int, expected_dims: int) -> np.ndarray:
    try:
        with _open_maybe_gzip(path) as fh:
            header = fh.read(4)
            if len(header) < 4:
                raise DataIOError(f"{path}: truncated IDX header")
            (magic,) = struct.unpack(">i", header)
            if magic != expected_magic:
                raise FormatError(
                    f"{path}: IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
                )
            dims_raw = fh.read(4 * expected_dims)
            if len(dims_raw) < 4 * expected_dims:
                raise DataIOError(f"{path}: truncated IDX dimension header")
            dims = struct.unpack(f">{expected_dims}i", dims_raw)
            count = int(np.prod(dims))
            payload = fh.read(count)
            if len(payload) < count:
                raise DataIOError(
                    f"{path}: expected {count} payload bytes, got {len(payload)}"
                )
            return np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    except OSError as exc:
        if isinstance(exc, DataIOError):
            raise
        raise DataIOError(f"{path}: {exc}") from exc


def load_idx(images_path, labels_path) -> SequenceDataset:
    """Parse an MNIST-style IDX image/label pair into pixel sequences.

    Pixels are scaled to [0,1] by /255 and each HxW image flattened
    row-major to a (H*W, 1) token sequence.
    """
    images = _read_idx(images_path, IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, LABEL_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    n, rows, cols = images.shape
    inputs = (images.astype(np.float64) / 255.0).reshape(n, rows * cols, 1)
    return SequenceDataset(inputs, labels.astype(np.int64), num_classes=10)


def downsample(ds: SequenceDataset, factor: int) -> SequenceDataset:
    """Average-pool square images by factor x factor, then re-flatten."""
    if factor == 1:
        return ds
    if factor not in (2, 4):
        raise ConfigError(f"downsample factor must be 1, 2 or 4, got {factor}")
    if ds.inputs.ndim != 3:
        raise ConfigError("downsample needs float sequences of shape (n, length, 1)")
    n, length, feat = ds.inputs.shape
    side = math.isqrt(length)
    if side * side != length or side % factor != 0:
        raise ConfigError(
            f"sequence length {length} is not a square with side divisible by {factor}"
        )
    out = side // factor
    imgs = ds.inputs.reshape(n, side, side, feat)
    pooled = imgs.reshape(n, out, factor, out, factor, feat).mean(axis=(2, 4))
    return SequenceDataset(
        pooled.reshape(n, out * out, feat), ds.labels, ds.num_classes
    )


def synthetic_dataset(
    n: int, length: int, num_classes: int, seed: int, noise: float = 0.05
) -> SequenceDataset:
    """Noisy class-indexed sinusoids: class c is a fixed sinusoid of
    frequency c+1 plus Gaussian noise, clipped back into [0, 1]."""
    if n < 1 or length < 1:
        raise ConfigError(f"n and length must be >= 1, got {n}, {length}")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    t = np.arange(length) / length
    templates = 0.5 + 0.4 * np.sin(
        2.0 * np.pi * np.outer(np.arange(1, num_classes + 1), t)
    )
    inputs = templates[labels]
    if noise > 0:
        inputs = inputs + rng.normal(0.0, noise, size=inputs.shape)
    inputs = np.clip(inputs, 0.0, 1.0)
    return SequenceDataset(inputs[..., None], labels.astype(np.int64), num_classes)


def take_subset(ds: SequenceDataset, n: int, offset: int = 0) -> SequenceDataset:
    """First n samples starting at offset (desk-scale truncation)."""
    if n < 1 or offset < 0 or offset + n > len(ds):
        raise ConfigError(
            f"subset [{offset}:{offset + n}] out of range for {len(ds)} samples"
        )
    return SequenceDataset(
        ds.inputs[offset : offset + n], ds.labels[offset : offset + n], ds.num_classes
    )


def batches(ds: SequenceDataset, batch_size: int, shuffle_seed: int, epoch: int):
    """Deterministic shuffled minibatches; the permutation is a pure function
    of (shuffle_seed, epoch) and the trailing partial batch is kept."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng([int(shuffle_seed), int(epoch)])
    perm = rng.permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = perm[start : start + batch_size]
        yield ds.inputs[idx], ds.labels[idx]
