"""Datasets: synthetic texture images, CIFAR-10 binary files, splits, batches."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np

RECORD_BYTES = 3073
CIFAR_SIDE = 32
CIFAR_CLASSES = 10


class FormatError(ValueError):
    """A dataset file does not follow its binary layout."""


@dataclass
class Dataset:
    images: np.ndarray  # (count, 3, H, W) in [0, 1]
    labels: np.ndarray  # (count,) int64
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(f"images {self.images.shape} and labels {self.labels.shape} disagree")
        if len(self.labels) == 0:
            raise ValueError("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index: np.ndarray) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], self.num_classes)


def synth_generate(classes: int = 4, count: int = 400, height: int = 16, width: int = 16,
                   seed: int = 0, noise: float = 0.12) -> Dataset:
    """Oriented sinusoidal textures, one orientation and hue per class.

    Each image is a grating with random phase and frequency jitter plus a
    weak class tint hidden under per-image colour jitter and pixel noise, so
    a linear pixel probe does better than chance but far from perfect while
    small convolutional networks separate the classes well.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if height % 4 or width % 4:
        raise ValueError(f"image extent {height}x{width} must be divisible by 4")
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng([seed, 0x5EED])
    labels = np.arange(count) % classes
    rng.shuffle(labels)
    yy, xx = np.meshgrid(np.arange(height, dtype=float), np.arange(width, dtype=float), indexing="ij")
    cycles = max(1.5, min(height, width) / 5.0)
    base_freq = 2.0 * np.pi * cycles / min(height, width)
    angles = np.pi * np.arange(classes) / classes
    hue = class_hues(classes)
    images = np.empty((count, 3, height, width))
    for n, c in enumerate(labels):
        theta = angles[c] + rng.normal(0.0, 0.08)
        freq = base_freq * rng.uniform(0.85, 1.15)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        grating = np.sin(freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        gain = 0.22 * rng.uniform(0.7, 1.0)
        jitter = rng.normal(0.0, 0.06, size=3)
        tint = 0.035 * hue[c]
        img = 0.5 + gain * grating[None] + (jitter + tint)[:, None, None]
        img += rng.normal(0.0, noise, size=img.shape)
        images[n] = img
    return Dataset(np.clip(images, 0.0, 1.0), labels, classes)


def class_hues(classes: int) -> np.ndarray:
    """Zero-mean RGB tint per class; fixed across seeds."""
    hue = np.random.default_rng(0xC0105).uniform(-1.0, 1.0, size=(classes, 3))
    return hue - hue.mean(axis=1, keepdims=True)


def _read_records(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    size = raw.size
    if size == 0 or size % RECORD_BYTES:
        offset = size - size % RECORD_BYTES
        raise FormatError(f"{path}: size {size} is not a multiple of {RECORD_BYTES}; "
                          f"incomplete record at byte offset {offset}")
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if bad.size:
        r = int(bad[0])
        raise FormatError(f"{path}: label byte {labels[r]} > 9 at byte offset {r * RECORD_BYTES}")
    pixels = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).astype(np.float64) / 255.0
    return pixels, labels


def load_cifar10_binary(path: Union[str, os.PathLike, Sequence[Union[str, os.PathLike]]]) -> Dataset:
    """Read one or more CIFAR-10 binary batch files.

    Each record is 1 label byte followed by 1024 red, 1024 green and 1024
    blue bytes in row-major order. Files are validated before any data is
    returned.
    """
    paths: List[Path] = [Path(path)] if isinstance(path, (str, os.PathLike)) else [Path(p) for p in path]
    if not paths:
        raise FormatError("no CIFAR-10 files given")
    parts = [_read_records(p) for p in paths]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    return Dataset(images, labels, CIFAR_CLASSES)


def load_cifar10_dir(root: Union[str, os.PathLike]) -> Tuple[Dataset, Dataset]:
    """(train, test) from a ``cifar-10-batches-bin`` directory."""
    root = Path(root)
    train = [root / f"data_batch_{i}.bin" for i in range(1, 6)]
    missing = [str(p) for p in train + [root / "test_batch.bin"] if not p.exists()]
    if missing:
        raise FileNotFoundError(f"missing CIFAR-10 files: {missing}")
    return load_cifar10_binary(train), load_cifar10_binary(root / "test_batch.bin")


@dataclass(frozen=True)
class SplitSpec:
    fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ValueError(f"split fraction {self.fraction} outside (0, 1)")


def split(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> Tuple[Dataset, Dataset]:
    """Disjoint shuffled (weight split, architecture split)."""
    n = len(dataset)
    perm = np.random.default_rng([spec.seed, 0x5B17]).permutation(n)
    n_w = int(round(spec.fraction * n))
    if not 0 < n_w < n:
        raise ValueError(f"split of {n} samples at {spec.fraction} leaves an empty side")
    return dataset.subset(np.sort(perm[:n_w])), dataset.subset(np.sort(perm[n_w:]))


def batches(dataset: Dataset, batch_size: int, seed: int, epoch: int,
            flip: bool = False) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Shuffled mini-batches keyed by ``(seed, epoch)``; the last one may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    rng = np.random.default_rng([seed, epoch, 0xBA7C])
    order = rng.permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        x = dataset.images[idx]
        if flip:
            mirror = rng.random(len(idx)) < 0.5
            x = np.where(mirror[:, None, None, None], x[..., ::-1], x)
        yield x, dataset.labels[idx]


def channel_stats(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    mean = dataset.images.mean(axis=(0, 2, 3))
    std = dataset.images.std(axis=(0, 2, 3))
    return mean, np.where(std > 0, std, 1.0)


def normalize(images: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (images - mean[None, :, None, None]) / std[None, :, None, None]
