"""Datasets: CIFAR-10 binary batches, block-mean downsampling, flip/crop
augmentation and synthetic sets."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"
CIFAR_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)


class DataError(Exception):
    pass


class CorruptFileError(DataError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    """Images ``(n, c, h, w)`` float32 in [0, 1] and integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_names: Optional[tuple[str, ...]] = None
    classes: Optional[int] = None

    def __post_init__(self):
        images = np.asarray(self.images)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images must be rank 4 (n, c, h, w), got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ValueError(f"{labels.shape[0] if labels.ndim else 0} labels for {images.shape[0]} images")
        if not np.isfinite(images).all():
            raise ValueError("images contain NaN or Inf")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be >= 0")
        k = self.classes
        if k is None:
            k = len(self.class_names) if self.class_names else int(labels.max()) + 1 if labels.size else 0
        if labels.size and labels.max() >= k:
            raise ValueError(f"label {labels.max()} outside [0, {k})")
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "classes", k)
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def num_classes(self) -> int:
        return self.classes

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.images[idx], self.labels[idx], self.class_names, self.classes)


# --------------------------------------------------------------------------
# CIFAR-10
# --------------------------------------------------------------------------

def read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """One binary batch: ``(uint8 images (n, 3, 32, 32), int64 labels)``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing CIFAR-10 file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD:
        raise CorruptFileError(f"{path}: size {raw.size} bytes is not a positive multiple of {RECORD}")
    rec = raw.reshape(-1, RECORD)
    return rec[:, 1:].reshape(-1, 3, 32, 32), rec[:, 0].astype(np.int64)


def write_cifar_batch(path, images: np.ndarray, labels: Sequence[int]) -> None:
    """Inverse of :func:`read_cifar_batch` (uint8 images ``(n, 3, 32, 32)``)."""
    images = np.asarray(images)
    if images.dtype != np.uint8 or images.shape[1:] != (3, 32, 32):
        raise ValueError("expected uint8 images of shape (n, 3, 32, 32)")
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    np.concatenate([labels, images.reshape(len(images), -1)], axis=1).tofile(path)


def _cifar_split(directory: Path, names) -> LabeledDataset:
    parts = [read_cifar_batch(directory / f) for f in names]
    images = np.concatenate([p[0] for p in parts]).astype(np.float32) / np.float32(255)
    labels = np.concatenate([p[1] for p in parts])
    if labels.max() >= 10:
        raise CorruptFileError(f"{directory}: label byte {labels.max()} outside [0, 10)")
    return LabeledDataset(images, labels, CIFAR_CLASSES)


def load_cifar10(directory) -> tuple[LabeledDataset, LabeledDataset]:
    """Train (5 batches) and test sets from the CIFAR-10 binary distribution.

    Accepts the extracted ``cifar-10-batches-bin`` folder or its parent.
    """
    directory = Path(directory)
    if not (directory / CIFAR_TEST_FILE).exists() and (directory / "cifar-10-batches-bin").is_dir():
        directory = directory / "cifar-10-batches-bin"
    for f in CIFAR_TRAIN_FILES + (CIFAR_TEST_FILE,):
        if not (directory / f).is_file():
            raise DataError(f"missing CIFAR-10 file: {directory / f}")
    return _cifar_split(directory, CIFAR_TRAIN_FILES), _cifar_split(directory, (CIFAR_TEST_FILE,))


def find_cifar10() -> Optional[Path]:
    """Locate a CIFAR-10 binary folder via ``$CIFAR10_DIR`` or a few usual places."""
    candidates = [os.environ.get("CIFAR10_DIR")]
    for base in (Path.cwd(), Path.home(), Path("/data"), Path("/datasets")):
        candidates += [base / "cifar-10-batches-bin", base / "data" / "cifar-10-batches-bin"]
    for c in candidates:
        if c and (Path(c) / CIFAR_TEST_FILE).is_file():
            return Path(c)
    return None


def balanced_subset(ds: LabeledDataset, per_class: int, seed: int) -> LabeledDataset:
    """``per_class`` samples of every class, drawn without replacement, in shuffled order."""
    rng = np.random.default_rng(seed)
    picks = []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) < per_class:
            raise DataError(f"class {c} has only {len(idx)} samples, need {per_class}")
        picks.append(rng.choice(idx, per_class, replace=False))
    return ds.take(rng.permutation(np.concatenate(picks)))


# --------------------------------------------------------------------------
# transforms
# --------------------------------------------------------------------------

def block_mean(images: np.ndarray, factor: int) -> np.ndarray:
    n, c, h, w = images.shape
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"spatial size {h}x{w} not divisible by factor {factor}")
    if factor == 1:
        return images
    return images.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5), dtype=np.float64).astype(images.dtype)


def downsample(ds: LabeledDataset, factor: int) -> LabeledDataset:
    """Average-pool every image by ``factor``; labels untouched."""
    if factor == 1:
        return ds
    return LabeledDataset(block_mean(ds.images, factor), ds.labels, ds.class_names, ds.classes)


def standardize(ds: LabeledDataset, mean=None, std=None) -> tuple[LabeledDataset, np.ndarray, np.ndarray]:
    """Per-channel zero mean / unit variance (statistics from ``ds`` unless given)."""
    if mean is None:
        mean = ds.images.mean(axis=(0, 2, 3), dtype=np.float64)
        std = ds.images.std(axis=(0, 2, 3), dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    std = np.maximum(np.asarray(std, dtype=np.float64), 1e-12)
    x = ((ds.images - mean[:, None, None]) / std[:, None, None]).astype(ds.images.dtype)
    return LabeledDataset(x, ds.labels, ds.class_names, ds.classes), mean, std


@dataclass(frozen=True)
class AugmentPolicy:
    flip_p: float = 0.5
    crop_pad: int = 4

    def __post_init__(self):
        if not 0 <= self.flip_p <= 1:
            raise ValueError("flip_p must be in [0, 1]")
        if self.crop_pad < 0:
            raise ValueError("crop_pad must be >= 0")


def augment(batch: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Random horizontal flip, then zero-pad by ``crop_pad`` and crop back at a random offset."""
    n, c, h, w = batch.shape
    flip = rng.random(n) < policy.flip_p
    out = np.where(flip[:, None, None, None], batch[..., ::-1], batch)
    p = policy.crop_pad
    if p == 0:
        return out if policy.flip_p > 0 else batch.copy()
    padded = np.pad(out, ((0, 0), (0, 0), (p, p), (p, p)))
    oy = rng.integers(0, 2 * p + 1, n)
    ox = rng.integers(0, 2 * p + 1, n)
    rows = oy[:, None] + np.arange(h)
    cols = ox[:, None] + np.arange(w)
    return padded[np.arange(n)[:, None, None, None], np.arange(c)[None, :, None, None],
                  rows[:, None, :, None], cols[:, None, None, :]]


# --------------------------------------------------------------------------
# synthetic sets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n: int = 1000
    classes: int = 4
    h: int = 16
    w: int = 16
    kind: str = "separable"
    channels: int = 3

    def __post_init__(self):
        if self.n < self.classes:
            raise ValueError("n must be >= classes")
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.kind not in SYNTH_KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}; choose from {sorted(SYNTH_KINDS)}")


def _separable(spec: SynthSpec, labels: np.ndarray, rng) -> np.ndarray:
    # class k lights up a fixed random color; the per-image blob position and
    # background noise vary but never move a channel mean across classes
    colors = np.random.default_rng(0x5EED).random((spec.classes, spec.channels)) * 0.6
    colors[:, 0] = np.linspace(0.0, 0.6, spec.classes)
    n = len(labels)
    x = rng.random((n, spec.channels, spec.h, spec.w)) * 0.2
    bh, bw = max(1, spec.h // 2), max(1, spec.w // 2)
    oy = rng.integers(0, spec.h - bh + 1, n)
    ox = rng.integers(0, spec.w - bw + 1, n)
    for i in range(n):
        x[i, :, oy[i]:oy[i] + bh, ox[i]:ox[i] + bw] += colors[labels[i]][:, None, None]
    return np.clip(x, 0, 1)


def _parity_grid(spec: SynthSpec, labels: np.ndarray, rng) -> np.ndarray:
    # Pairs of saturated dots on a dim noise floor; class k puts the two dots
    # of every pair 2 + k pixels apart along a row.  Neighbouring classes
    # differ by one pixel of spacing (and flip its parity), which survives an
    # SPD rearrangement but not a stride-2 sampler plus pooling.
    gaps = 2 + labels
    if spec.w <= gaps.max():
        raise ValueError(f"parity-grid with {spec.classes} classes needs width > {gaps.max()}")
    n = len(labels)
    x = rng.random((n, spec.channels, spec.h, spec.w)) * 0.3
    pairs = PARITY_PAIRS
    rows = rng.integers(0, spec.h, (n, pairs))
    starts = (rng.random((n, pairs)) * (spec.w - gaps)[:, None]).astype(np.int64)
    img = np.repeat(np.arange(n), pairs)
    r, c = rows.ravel(), starts.ravel()
    x[img, :, r, c] = 1.0
    x[img, :, r, c + np.repeat(gaps, pairs)] = 1.0
    return x


PARITY_PAIRS = 2


SYNTH_KINDS = {"separable": _separable, "parity-grid": _parity_grid}


def synth_dataset(spec: SynthSpec, seed: int) -> LabeledDataset:
    """Balanced synthetic classification set; identical for identical ``(spec, seed)``.

    ``separable``: each class adds a fixed color blob; the red-channel mean
    alone separates classes.  ``parity-grid``: two pairs of bright dots per
    image, the horizontal spacing inside each pair (``2 + label`` pixels)
    being the label.
    """
    rng = np.random.default_rng([seed, 0xDA7A])
    labels = rng.permutation(np.arange(spec.n) % spec.classes)
    x = SYNTH_KINDS[spec.kind](spec, labels, rng).astype(np.float32)
    return LabeledDataset(x, labels, tuple(f"class{k}" for k in range(spec.classes)), spec.classes)
