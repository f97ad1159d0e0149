"""Toy datasets, file loaders, and deterministic batching.

All features end up in [-1, 1] per dimension so the data lives in the same
box the Langevin sampler walks. Generated sets and CSV files fit a min/max
record on the training split and reuse it for test data; IDX image files
use the fixed byte affine 2 p / 255 - 1.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DomainError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_SPLITS = ("train", "test")


@dataclass(frozen=True)
class Normalization:
    """Per-dimension affine map raw -> 2 (raw - lo) / (hi - lo) - 1.

    Fitted bounds come from a training split (or the 0..255 byte range for
    images). Constant dimensions map to -1. apply() clips into [-1, 1], so
    invert() is exact only for points inside the fitted bounds.
    """

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, raw: np.ndarray) -> "Normalization":
        raw = np.asarray(raw, dtype=np.float64)
        return cls(lo=raw.min(axis=0), hi=raw.max(axis=0))

    def _span(self) -> np.ndarray:
        return np.where(self.hi > self.lo, self.hi - self.lo, 1.0)

    def apply(self, raw: np.ndarray) -> np.ndarray:
        out = 2.0 * (np.asarray(raw, dtype=np.float64) - self.lo) / self._span() - 1.0
        return np.clip(out, -1.0, 1.0)

    def invert(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) + 1.0) * self._span() / 2.0 + self.lo


@dataclass
class Dataset:
    """Normalized features, integer labels, and provenance of the scaling."""

    x: np.ndarray
    y: np.ndarray
    k: int
    split: str
    norm: Normalization

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y)
        if self.x.ndim != 2:
            raise DimensionError("features must be [n, dim]")
        if self.y.shape != (self.x.shape[0],):
            raise DimensionError("labels must align with feature rows")
        if not np.issubdtype(self.y.dtype, np.integer):
            raise DomainError("labels must be integers")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.k):
            raise DomainError(f"labels must lie in [0, {self.k})")
        if self.split not in _SPLITS:
            raise ConfigError(f"split must be one of {_SPLITS}")
        if self.x.size and (self.x.min() < -1.0 or self.x.max() > 1.0):
            raise DomainError("features must be normalized into [-1, 1]")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def _ring_raw(k: int, n_per_class: int, radius: float, sigma: float,
              rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    angles = 2.0 * np.pi * np.arange(k) / k
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    xs, ys = [], []
    for j in range(k):
        xs.append(centers[j] + sigma * rng.standard_normal((n_per_class, 2)))
        ys.append(np.full(n_per_class, j, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def make_gaussian_ring(k: int = 8, n_per_class: int = 500, radius: float = 0.7,
                       sigma: float = 0.08, seed: int = 0,
                       split: str = "train",
                       norm: Normalization | None = None) -> Dataset:
    """K isotropic blobs centered on a circle, normalized into the box.

    With norm=None the min/max record is fitted on the generated points
    themselves (the training convention); pass a fitted record to scale a
    held-out split consistently.
    """
    if k < 2 or n_per_class < 1:
        raise ConfigError("need k >= 2 classes and n_per_class >= 1")
    if radius <= 0 or sigma < 0:
        raise ConfigError("radius must be > 0 and sigma >= 0")
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    raw, y = _ring_raw(k, n_per_class, radius, sigma, rng)
    if norm is None:
        norm = Normalization.fit(raw)
    return Dataset(norm.apply(raw), y, k=k, split=split, norm=norm)


def make_ring_splits(k: int = 8, n_train_per_class: int = 500,
                     n_test_per_class: int = 250, radius: float = 0.7,
                     sigma: float = 0.08, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Disjoint train/test ring splits sharing the train normalization.

    One generated pool per class is partitioned front/back, so together
    the two splits are exactly the pool.
    """
    if n_test_per_class < 0:
        raise ConfigError("n_test_per_class must be >= 0")
    rng = np.random.default_rng([seed, 0])
    per = n_train_per_class + n_test_per_class
    raw, y = _ring_raw(k, per, radius, sigma, rng)
    train_rows = np.zeros(len(y), dtype=bool)
    for j in range(k):
        idx = np.flatnonzero(y == j)
        train_rows[idx[:n_train_per_class]] = True
    norm = Normalization.fit(raw[train_rows])
    train = Dataset(norm.apply(raw[train_rows]), y[train_rows], k=k,
                    split="train", norm=norm)
    test = Dataset(norm.apply(raw[~train_rows]), y[~train_rows], k=k,
                   split="test", norm=norm)
    return train, test


def make_moons(n: int = 1000, noise_sigma: float = 0.05, seed: int = 0,
               split: str = "train",
               norm: Normalization | None = None) -> Dataset:
    """Two interleaved half-circles, the usual 2-class toy benchmark."""
    if n < 2:
        raise ConfigError("need n >= 2")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be >= 0")
    from sklearn.datasets import make_moons as _sk_moons

    # Distinct streams per split so a (train, test) pair never overlaps.
    stream = 2 if split == "train" else 3
    raw, y = _sk_moons(n_samples=n, noise=noise_sigma or None,
                       random_state=np.random.default_rng([seed, stream]).integers(2**31))
    y = y.astype(np.int64)
    if norm is None:
        norm = Normalization.fit(raw)
    return Dataset(norm.apply(raw), y, k=2, split=split, norm=norm)


def export_csv(ds: Dataset, path: str) -> None:
    """Write normalized features plus a final `label` column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(ds.dim)] + ["label"])
        for row, label in zip(ds.x, ds.y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path: str, label_column: str = "label", split: str = "train",
             norm: Normalization | None = None) -> Dataset:
    """Numeric CSV with a header; every non-label column is a feature.

    Ragged rows, non-numeric cells, and non-integer or negative labels are
    reported with their 1-based data row index.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        if label_column not in header:
            raise ConfigError(f"{path}: no column named {label_column!r}")
        label_idx = header.index(label_column)
        feats, labels = [], []
        for i, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ConfigError(f"{path}: row {i} has {len(row)} cells, "
                                  f"expected {len(header)}")
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise ConfigError(f"{path}: row {i} has a non-numeric cell") from None
            lab = values.pop(label_idx)
            if lab != int(lab) or lab < 0:
                raise ConfigError(f"{path}: row {i} label {lab!r} is not a "
                                  "non-negative integer")
            feats.append(values)
            labels.append(int(lab))
    if not feats:
        raise ConfigError(f"{path}: no data rows")
    raw = np.asarray(feats, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if norm is None:
        norm = Normalization.fit(raw)
    return Dataset(norm.apply(raw), y, k=int(y.max()) + 1, split=split, norm=norm)


def _read_exact(fh, n: int, path: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ConfigError(f"{path}: truncated file")
    return buf


def load_idx(images_path: str, labels_path: str,
             max_n: int | None = None, split: str = "train") -> Dataset:
    """Big-endian IDX image/label pair, bytes mapped to [-1, 1].

    Pixel p becomes 2 p / 255 - 1, so 0 -> -1.0 and 255 -> +1.0 exactly.
    """
    with open(images_path, "rb") as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise ConfigError(
                f"{images_path}: bad magic 0x{magic:08x}, "
                f"expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        take = n if max_n is None else min(n, max_n)
        pixels = np.frombuffer(
            _read_exact(fh, take * rows * cols, images_path), dtype=np.uint8
        )
    with open(labels_path, "rb") as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise ConfigError(
                f"{labels_path}: bad magic 0x{magic:08x}, "
                f"expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        if n_labels != n:
            raise ConfigError(
                f"label count {n_labels} does not match image count {n}"
            )
        labels = np.frombuffer(_read_exact(fh, take, labels_path), dtype=np.uint8)
    dim = rows * cols
    raw = pixels.reshape(take, dim).astype(np.float64)
    norm = Normalization(lo=np.zeros(dim), hi=np.full(dim, 255.0))
    y = labels.astype(np.int64)
    k = max(int(y.max()) + 1, 2) if y.size else 2
    return Dataset(norm.apply(raw), y, k=k, split=split, norm=norm)


def batches(ds: Dataset, batch_size: int, seed: int,
            epoch: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled mini-batches for one epoch, keyed by (seed, epoch).

    The permutation is a pure function of the key, so resumed runs replay
    the exact batch order. A short final batch is kept, not dropped.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    rng = np.random.default_rng([seed, 44, epoch])
    perm = rng.permutation(ds.n)
    out = []
    for start in range(0, ds.n, batch_size):
        idx = perm[start:start + batch_size]
        out.append((ds.x[idx], ds.y[idx]))
    return out
