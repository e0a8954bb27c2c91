"""Dataset construction and corruption: synthetic clusters, CIFAR-10 binaries,
symmetric label noise, and seeded batch iteration.

Datasets are immutable after construction; every operation here is a pure
function of its inputs and seed.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError

# Disjoint RNG stream tags, so the named seeds never alias each other's draws.
_DATA_STREAM = 2
_NOISE_STREAM = 3
_SHUFFLE_STREAM = 4

CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)
_CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes (R, G, B planes)


@dataclass
class Dataset:
    features: np.ndarray       # (n, d) or (n, c, h, w) float64
    labels: np.ndarray         # (n,) int64 training labels, possibly corrupted
    clean_labels: np.ndarray   # (n,) int64 original labels
    n_classes: int
    split: str                 # "train" | "test"

    def __post_init__(self):
        if len(self.labels) != len(self.clean_labels) or len(self.labels) != len(self.features):
            raise ConfigError("features, labels, clean_labels must have equal length")
        for arr in (self.labels, self.clean_labels):
            if arr.min(initial=0) < 0 or arr.max(initial=0) >= self.n_classes:
                raise ConfigError(f"labels out of range [0, {self.n_classes})")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def noise_rate(self) -> float:
        """Fraction of samples whose training label differs from the clean label."""
        return float((self.labels != self.clean_labels).mean())


def ring_means(n_classes: int, dim: int, radius: float) -> np.ndarray:
    """Class means evenly spaced on a circle in the first two feature dims,
    so each class's nearest neighbours are the adjacent classes."""
    means = np.zeros((n_classes, dim))
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def make_synthetic(n_classes: int, per_class_train: int, dim: int, *,
                   layout: str = "ring", ring_radius: float = 6.0,
                   class_means: np.ndarray | None = None,
                   per_class_test: int = 100, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Gaussian clusters with unit covariance around ring or user-supplied means."""
    if n_classes < 2 or per_class_train < 1 or dim < 2:
        raise ConfigError(
            f"need n_classes >= 2, per_class_train >= 1, dim >= 2; "
            f"got {n_classes}, {per_class_train}, {dim}"
        )
    if layout == "ring":
        means = ring_means(n_classes, dim, ring_radius)
    elif layout == "fixed":
        means = np.asarray(class_means, dtype=np.float64)
        if means.shape != (n_classes, dim):
            raise ConfigError(f"class_means must be ({n_classes}, {dim}), got {means.shape}")
    else:
        raise ConfigError(f"layout must be 'ring' or 'fixed', got {layout!r}")

    rng = np.random.default_rng([_DATA_STREAM, seed])

    def draw(per_class: int, split: str) -> Dataset:
        feats = np.empty((n_classes * per_class, dim))
        labels = np.repeat(np.arange(n_classes, dtype=np.int64), per_class)
        for k in range(n_classes):
            block = slice(k * per_class, (k + 1) * per_class)
            feats[block] = means[k] + rng.standard_normal((per_class, dim))
        return Dataset(feats, labels, labels.copy(), n_classes, split)

    return draw(per_class_train, "train"), draw(per_class_test, "test")


def _parse_cifar_file(path, mean: np.ndarray, std: np.ndarray,
                      expected_records: int | None) -> tuple[np.ndarray, np.ndarray]:
    if not os.path.exists(path):
        raise DataFormatError("missing CIFAR-10 batch file", path=path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) == 0 or len(blob) % _CIFAR_RECORD:
        raise DataFormatError(
            f"file size {len(blob)} is not a multiple of the {_CIFAR_RECORD}-byte record",
            path=path, offset=(len(blob) // _CIFAR_RECORD) * _CIFAR_RECORD,
        )
    records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
    if expected_records is not None and records.shape[0] != expected_records:
        raise DataFormatError(
            f"expected {expected_records} records, found {records.shape[0]}", path=path
        )
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise DataFormatError(
            f"label byte {labels[bad[0]]} > 9 in record {bad[0]}",
            path=path, offset=int(bad[0]) * _CIFAR_RECORD,
        )
    pixels = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    pixels = (pixels - mean[None, :, None, None]) / std[None, :, None, None]
    return pixels, labels


def load_cifar10(directory, *, channel_mean=CIFAR10_MEAN, channel_std=CIFAR10_STD,
                 expected_per_batch: int | None = 10000) -> tuple[Dataset, Dataset]:
    """Parse the standard CIFAR-10 binary batches.

    Each record is 3073 bytes: one label byte then 3072 pixel bytes (red,
    green, blue 32x32 planes). Pixels are scaled to [0, 1] and normalized
    per channel with the supplied constants.
    """
    mean = np.asarray(channel_mean, dtype=np.float64)
    std = np.asarray(channel_std, dtype=np.float64)
    train_parts = [
        _parse_cifar_file(os.path.join(directory, f"data_batch_{i}.bin"), mean, std,
                          expected_per_batch)
        for i in range(1, 6)
    ]
    test_x, test_y = _parse_cifar_file(
        os.path.join(directory, "test_batch.bin"), mean, std, expected_per_batch
    )
    train_x = np.concatenate([x for x, _ in train_parts])
    train_y = np.concatenate([y for _, y in train_parts])
    return (
        Dataset(train_x, train_y, train_y.copy(), 10, "train"),
        Dataset(test_x, test_y, test_y.copy(), 10, "test"),
    )


@dataclass(frozen=True)
class NoiseSpec:
    rate: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"noise rate must be in [0, 1], got {self.rate}")


def inject_symmetric_noise(ds: Dataset, spec: NoiseSpec) -> Dataset:
    """Flip exactly round(rate*n) labels to uniformly chosen *wrong* classes.

    The exact count (rather than per-sample coin flips) keeps experiment
    variance out of trend comparisons. Clean labels are preserved.
    """
    n = ds.n
    n_flip = int(round(spec.rate * n))
    labels = ds.clean_labels.copy()
    if n_flip:
        rng = np.random.default_rng([_NOISE_STREAM, spec.seed])
        idx = rng.choice(n, size=n_flip, replace=False)
        draws = rng.integers(0, ds.n_classes - 1, size=n_flip)
        # skip over the true class so the flip is uniform over the K-1 wrong ones
        labels[idx] = draws + (draws >= ds.clean_labels[idx])
    return Dataset(ds.features, labels, ds.clean_labels.copy(), ds.n_classes, ds.split)


def batches(ds: Dataset, batch_size: int, epoch_seed):
    """Yield (features, labels, indices) over a seeded permutation; the final
    short batch is included. Indices refer to positions in the dataset."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(epoch_seed).permutation(ds.n)
    for start in range(0, ds.n, batch_size):
        idx = order[start:start + batch_size]
        yield ds.features[idx], ds.labels[idx], idx


def shuffle_seed_for(shuffle_seed: int, epoch: int) -> list[int]:
    """Seed material for one epoch's batch permutation."""
    return [_SHUFFLE_STREAM, shuffle_seed, epoch]


def dump_synthetic_csv(ds: Dataset, path):
    """Write a flat dataset as CSV: d feature columns, label, clean_label."""
    if ds.features.ndim != 2:
        raise ConfigError("CSV dump supports flat feature datasets only")
    dim = ds.features.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dim)] + ["label", "clean_label"])
        for row, y, cy in zip(ds.features, ds.labels, ds.clean_labels):
            writer.writerow([repr(float(v)) for v in row] + [int(y), int(cy)])


def load_synthetic_csv(path, n_classes: int, split: str) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 2
        feats, labels, clean = [], [], []
        for row in reader:
            feats.append([float(v) for v in row[:dim]])
            labels.append(int(row[dim]))
            clean.append(int(row[dim + 1]))
    return Dataset(
        np.asarray(feats, dtype=np.float64),
        np.asarray(labels, dtype=np.int64),
        np.asarray(clean, dtype=np.int64),
        n_classes, split,
    )
