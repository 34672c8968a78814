"""Datasets: IDX files, synthetic Gaussian blobs, class-balanced half splits, batching."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import rng as rngmod
from .calib import Batch
from .errors import ConfigError, DataError, FormatError, StorageError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataError(f"{self.name or 'dataset'}: need an N x d feature matrix with N >= 1")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError(f"{self.name or 'dataset'}: labels do not match features")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError(f"{self.name or 'dataset'}: label out of range [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise DataError(f"{self.name or 'dataset'}: non-finite feature values")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray, name: str | None = None) -> Dataset:
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, name or self.name)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class SplitPair:
    part_a: Dataset
    part_b: Dataset
    index_a: np.ndarray
    index_b: np.ndarray


# --- IDX -----------------------------------------------------------------------


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    try:
        raw = path.read_bytes()
        if path.suffix == ".gz":
            raw = gzip.decompress(raw)
    except (OSError, EOFError) as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    return raw


def _parse_idx(raw: bytes, magic: int, ndim: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise StorageError(f"{path}: truncated IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise StorageError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head < count:
        raise StorageError(f"{path}: truncated IDX payload ({len(raw) - head} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path, num_classes: int | None = None, name: str = "") -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1], images flattened."""
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES, 3, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS, 1, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    K = int(labels.max()) + 1 if num_classes is None else num_classes
    return Dataset(features, labels, K, name or Path(images_path).name)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: str | Path, labels_path: str | Path) -> None:
    """Write uint8 images (N, rows, cols) and labels (N,) as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3 or labels.shape != (images.shape[0],):
        raise DataError("write_idx needs images (N, rows, cols) and labels (N,)")
    try:
        Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES, *images.shape) + images.tobytes())
        Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS, labels.shape[0]) + labels.tobytes())
    except OSError as exc:
        raise StorageError(str(exc)) from exc


# --- synthetic ---------------------------------------------------------------


def synthetic_blobs(K: int, per_class_n: int, d: int, separation: float, seed: int, name: str = "blobs") -> Dataset:
    """Unit-variance Gaussian classes centred at ``separation`` along the first K axes.

    Features are min-max rescaled per coordinate to [0, 1].
    """
    if K < 2 or per_class_n < 1:
        raise ConfigError("synthetic_blobs needs K >= 2 and per_class_n >= 1")
    if d < K:
        raise ConfigError(f"cannot place {K} class means on {d} axes")
    rng = rngmod.make_rng(seed, rngmod.SYNTH)
    labels = np.repeat(np.arange(K), per_class_n)
    means = np.zeros((K, d))
    means[np.arange(K), np.arange(K)] = separation
    x = rng.standard_normal((K * per_class_n, d)) + means[labels]
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    x = (x - lo) / span
    return Dataset(x, labels, K, name)


# --- splitting and batching ----------------------------------------------------


def split_half_by_class(ds: Dataset, seed: int) -> SplitPair:
    """Shuffle each class with ``seed`` and give the first half (rounded up) to part a."""
    rng = rngmod.make_rng(seed, rngmod.SPLIT)
    a, b = [], []
    for k in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == k)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise DataError(f"class {k} has fewer than 2 samples; cannot split")
        idx = rng.permutation(idx)
        half = (idx.size + 1) // 2
        a.append(idx[:half])
        b.append(idx[half:])
    ia, ib = np.sort(np.concatenate(a)), np.sort(np.concatenate(b))
    return SplitPair(ds.subset(ia, f"{ds.name}-a"), ds.subset(ib, f"{ds.name}-b"), ia, ib)


def stratified_subset(ds: Dataset, n: int, seed: int) -> Dataset:
    """Roughly class-balanced subset of ``n`` samples (per-class quota, seeded)."""
    if n >= len(ds):
        return ds
    rng = rngmod.make_rng(seed, rngmod.SUBSET)
    per = n // ds.num_classes
    extra = n - per * ds.num_classes
    picks = []
    for k in range(ds.num_classes):
        idx = rng.permutation(np.flatnonzero(ds.labels == k))
        take = per + (1 if k < extra else 0)
        picks.append(idx[:take])
    return ds.subset(np.sort(np.concatenate(picks)))


def batch_iter(ds: Dataset, batch_size: int, seed: int, epoch: int) -> Iterator[Batch]:
    """Seeded per-epoch shuffle; the final short batch is kept."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = rngmod.make_rng(seed, rngmod.BATCHES, epoch).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start : start + batch_size]
        yield Batch(ds.features[idx], ds.labels[idx])
