import gzip
import struct

import numpy as np
import pytest

from qmamba.data import (
    IMAGE_MAGIC,
    LABEL_MAGIC,
    SequenceDataset,
    batches,
    downsample,
    load_idx,
    synthetic_dataset,
    take_subset,
)
from qmamba.errors import ConfigError, ConsistencyError, DataIOError, FormatError

# --- IDX fixtures, written independently of the loader ------------------------


def _write_images(path, arr, compress=False, magic=IMAGE_MAGIC):
    arr = np.asarray(arr, dtype=np.uint8)
    blob = struct.pack(">iiii", magic, *arr.shape) + arr.tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as fh:
        fh.write(blob)


def _write_labels(path, labels, compress=False, magic=LABEL_MAGIC):
    labels = np.asarray(labels, dtype=np.uint8)
    blob = struct.pack(">ii", magic, labels.shape[0]) + labels.tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as fh:
        fh.write(blob)


@pytest.fixture
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    images[2] = 0  # one all-zero image
    labels = np.array([3, 1, 4, 1, 5], dtype=np.uint8)
    ip, lp = tmp_path / "imgs.idx", tmp_path / "labels.idx"
    _write_images(ip, images)
    _write_labels(lp, labels)
    return ip, lp, images, labels


def test_load_idx_shapes_and_scaling(idx_pair):
    ip, lp, images, labels = idx_pair
    ds = load_idx(ip, lp)
    assert ds.inputs.shape == (5, 784, 1)
    assert ds.num_classes == 10
    np.testing.assert_array_equal(ds.labels, labels)
    np.testing.assert_allclose(
        ds.inputs[0, :, 0], images[0].reshape(-1) / 255.0
    )
    assert ds.inputs.min() >= 0.0 and ds.inputs.max() <= 1.0


def test_load_idx_zero_image_gives_zero_sequence(idx_pair):
    ip, lp, *_ = idx_pair
    ds = load_idx(ip, lp)
    np.testing.assert_array_equal(ds.inputs[2], 0.0)


def test_load_idx_gzip_matches_plain(tmp_path, idx_pair):
    ip, lp, images, labels = idx_pair
    gz_ip, gz_lp = tmp_path / "imgs.idx.gz", tmp_path / "labels.idx.gz"
    _write_images(gz_ip, images, compress=True)
    _write_labels(gz_lp, labels, compress=True)
    plain = load_idx(ip, lp)
    zipped = load_idx(gz_ip, gz_lp)
    np.testing.assert_array_equal(plain.inputs, zipped.inputs)
    np.testing.assert_array_equal(plain.labels, zipped.labels)


def test_load_idx_magic_mismatch(idx_pair):
    ip, lp, *_ = idx_pair
    with pytest.raises(FormatError):
        load_idx(lp, lp)  # label magic where image magic expected


def test_load_idx_truncated(tmp_path, idx_pair):
    ip, lp, *_ = idx_pair
    stub = tmp_path / "trunc.idx"
    stub.write_bytes(ip.read_bytes()[:100])
    with pytest.raises(DataIOError):
        load_idx(stub, lp)


def test_load_idx_count_mismatch(tmp_path, idx_pair):
    ip, _, _, labels = idx_pair
    lp_bad = tmp_path / "short_labels.idx"
    _write_labels(lp_bad, labels[:3])
    with pytest.raises(ConsistencyError):
        load_idx(ip, lp_bad)


# --- downsample ----------------------------------------------------------------


def _image_dataset(n=3, side=28, value=None, seed=0):
    rng = np.random.default_rng(seed)
    if value is None:
        imgs = rng.uniform(0, 1, size=(n, side * side, 1))
    else:
        imgs = np.full((n, side * side, 1), value)
    return SequenceDataset(imgs, np.zeros(n, dtype=np.int64), 10)


def test_downsample_identity():
    ds = _image_dataset()
    assert downsample(ds, 1) is ds


def test_downsample_constant_image():
    ds = _image_dataset(value=0.3)
    out = downsample(ds, 2)
    assert out.length == 196
    np.testing.assert_allclose(out.inputs, 0.3)


def test_downsample_factor_four_length():
    assert downsample(_image_dataset(), 4).length == 49


def test_downsample_pools_blocks():
    img = np.arange(4.0).reshape(1, 2, 2) / 4.0  # 2x2 "image"
    ds = SequenceDataset(img.reshape(1, 4, 1), np.zeros(1, dtype=np.int64), 10)
    out = downsample(ds, 2)
    assert out.inputs[0, 0, 0] == pytest.approx(np.mean([0, 1, 2, 3]) / 4.0)


def test_downsample_invalid_factor():
    with pytest.raises(ConfigError):
        downsample(_image_dataset(), 3)


# --- synthetic -----------------------------------------------------------------


def test_synthetic_deterministic():
    a = synthetic_dataset(50, 32, 4, seed=7)
    b = synthetic_dataset(50, 32, 4, seed=7)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_synthetic_noise_free_classes_are_identical():
    ds = synthetic_dataset(100, 16, 3, seed=1, noise=0.0)
    for c in range(3):
        rows = ds.inputs[ds.labels == c]
        if rows.shape[0] >= 2:
            np.testing.assert_array_equal(rows[0], rows[1])


def test_synthetic_range_and_labels():
    ds = synthetic_dataset(200, 24, 5, seed=2)
    assert ds.inputs.min() >= 0.0 and ds.inputs.max() <= 1.0
    assert set(np.unique(ds.labels)) <= set(range(5))


def test_synthetic_linear_probe_above_80_percent():
    ds = synthetic_dataset(400, 32, 4, seed=3)
    x = ds.inputs.reshape(len(ds), -1)
    onehot = np.eye(4)[ds.labels]
    xtr, xte = x[:200], x[200:]
    ytr, yte = onehot[:200], ds.labels[200:]
    w, *_ = np.linalg.lstsq(
        np.hstack([xtr, np.ones((200, 1))]), ytr, rcond=None
    )
    pred = np.argmax(np.hstack([xte, np.ones((200, 1))]) @ w, axis=1)
    assert np.mean(pred == yte) > 0.8


# --- batching ------------------------------------------------------------------


def test_single_batch_when_batch_size_covers_all():
    ds = synthetic_dataset(10, 8, 2, seed=0)
    out = list(batches(ds, batch_size=32, shuffle_seed=1, epoch=0))
    assert len(out) == 1
    assert out[0][0].shape[0] == 10


def test_batches_deterministic_per_seed_epoch():
    ds = synthetic_dataset(20, 8, 2, seed=0)
    a = [b[1] for b in batches(ds, 6, shuffle_seed=4, epoch=2)]
    b = [b[1] for b in batches(ds, 6, shuffle_seed=4, epoch=2)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_batches_epochs_permute_differently():
    ds = synthetic_dataset(32, 8, 2, seed=0)
    e0 = np.concatenate([b[1] for b in batches(ds, 8, shuffle_seed=4, epoch=0)])
    e1 = np.concatenate([b[1] for b in batches(ds, 8, shuffle_seed=4, epoch=1)])
    assert not np.array_equal(e0, e1)


def test_batches_round_trip_recovers_every_sample_once():
    ds = synthetic_dataset(37, 8, 3, seed=5)  # deliberately ragged
    got = np.concatenate([b[0] for b in batches(ds, 8, shuffle_seed=9, epoch=1)])
    assert got.shape == ds.inputs.shape
    want = ds.inputs.reshape(len(ds), -1)
    got = got.reshape(len(ds), -1)
    order_want = np.lexsort(want.T)
    order_got = np.lexsort(got.T)
    np.testing.assert_array_equal(want[order_want], got[order_got])


def test_take_subset_bounds():
    ds = synthetic_dataset(10, 8, 2, seed=0)
    sub = take_subset(ds, 4, offset=2)
    np.testing.assert_array_equal(sub.inputs, ds.inputs[2:6])
    with pytest.raises(ConfigError):
        take_subset(ds, 11)


def test_dataset_validation():
    with pytest.raises(ConsistencyError):
        SequenceDataset(np.zeros((3, 4, 1)), np.array([0, 1]), 2)
    with pytest.raises(ConsistencyError):
        SequenceDataset(np.zeros((2, 4, 1)), np.array([0, 5]), 2)
    with pytest.raises(ConsistencyError):
        SequenceDataset(np.full((2, 4, 1), np.nan), np.array([0, 1]), 2)
