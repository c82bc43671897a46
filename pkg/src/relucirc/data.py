"""Synthetic nested 2-D datasets, CSV persistence, IDX (MNIST-format) image
ingestion for the digit>=5 binary task, and the prosthetic subsampling rule.

The synthetic tiers are built from one fixed ladder of Gaussian bands on the
y-axis (x jitter only) and are nested by construction:

    band centers   (0, -2.2)  (0, -1.0)  (0, +1.0)  (0, +2.2)
    band labels        1          0          1          0

* tier 1 uses bands 2..3 (one positive, one negative blob; linearly separable)
* tier 2 uses bands 1..3 (positive class flanks the negative band)
* tier 3 uses bands 0..3 (alternating bands)

Each tier is recentred by the mean of its raw band centers, so the affine map
carrying tier t onto the matching bands of tier t+1 is the pure y-shift
``y -> y + center_shift(t) - center_shift(t+1)`` (see :func:`nesting_map`).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .mlp import InputError

__all__ = [
    "Dataset",
    "SyntheticSpec",
    "TIER_NAMES",
    "gen_synthetic",
    "nesting_map",
    "save_csv",
    "load_csv",
    "write_idx_images",
    "write_idx_labels",
    "read_idx",
    "load_mnist_binary",
    "subsample_prosthetic",
    "FormatError",
]

TIER_NAMES = ("DataI", "DataII", "DataIII")

_BAND_CENTERS = np.array([-2.2, -1.0, 1.0, 2.2])
_BAND_LABELS = np.array([1, 0, 1, 0])
_TIER_BANDS = {1: (1, 2), 2: (0, 1, 2), 3: (0, 1, 2, 3)}


class FormatError(ValueError):
    """Malformed IDX file."""


@dataclass
class Dataset:
    points: np.ndarray  # (m, dim) float64
    labels: np.ndarray  # (m,) int, values in {0,1}
    name: str = ""
    digits: np.ndarray | None = None  # optional 0-9 side channel per sample

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.ndim != 2 or self.points.shape[0] != self.labels.shape[0]:
            raise InputError("points/labels length mismatch")
        if not np.isin(self.labels, (0, 1)).all():
            raise InputError("labels must be 0/1")
        if self.digits is not None:
            self.digits = np.asarray(self.digits, dtype=np.int64)
            if self.digits.shape[0] != self.labels.shape[0]:
                raise InputError("digits length mismatch")

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.points[idx], self.labels[idx], self.name,
                       None if self.digits is None else self.digits[idx])


@dataclass(frozen=True)
class SyntheticSpec:
    tier: int  # 1..3 for DataI..DataIII
    samples_per_class: int = 100  # per band
    noise_std: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.tier not in (1, 2, 3):
            raise InputError(f"tier must be 1..3, got {self.tier}")
        if self.samples_per_class < 1:
            raise InputError("samples_per_class must be >= 1")


def center_shift(tier: int) -> float:
    """Mean y of the raw band centers of a tier (subtracted during generation)."""
    bands = _TIER_BANDS[tier]
    return float(np.mean(_BAND_CENTERS[list(bands)]))


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    bands = _TIER_BANDS[spec.tier]
    shift = center_shift(spec.tier)
    pts, labels = [], []
    for b in bands:
        noise = rng.standard_normal((spec.samples_per_class, 2)) * spec.noise_std
        center = np.array([0.0, _BAND_CENTERS[b] - shift])
        pts.append(center + noise)
        labels.append(np.full(spec.samples_per_class, _BAND_LABELS[b]))
    return Dataset(np.vstack(pts), np.concatenate(labels), TIER_NAMES[spec.tier - 1])


def nesting_map(tier_from: int, tier_to: int) -> tuple[np.ndarray, np.ndarray]:
    """Affine map ``x -> A x + b`` carrying tier_from points onto the matching
    bands of tier_to (a pure y-translation)."""
    if tier_from not in (1, 2, 3) or tier_to not in (1, 2, 3):
        raise InputError("tiers must be 1..3")
    b = np.array([0.0, center_shift(tier_from) - center_shift(tier_to)])
    return np.eye(2), b


# -- CSV --------------------------------------------------------------------


def save_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        header = [f"x{i}" for i in range(data.dim)] + ["label"]
        if data.digits is not None:
            header.append("digit")
        w.writerow(header)
        for i in range(data.m):
            row = [repr(v) for v in data.points[i]] + [int(data.labels[i])]
            if data.digits is not None:
                row.append(int(data.digits[i]))
            w.writerow(row)


def load_csv(path, name: str = "") -> Dataset:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        has_digit = header[-1] == "digit"
        dim = len(header) - 1 - (1 if has_digit else 0)
        pts, labels, digits = [], [], []
        for row in r:
            pts.append([float(v) for v in row[:dim]])
            labels.append(int(row[dim]))
            if has_digit:
                digits.append(int(row[dim + 1]))
    return Dataset(np.array(pts), np.array(labels), name, np.array(digits) if has_digit else None)


# -- IDX --------------------------------------------------------------------

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def write_idx_images(path, images: np.ndarray) -> None:
    """Write uint8 images of shape (n, rows, cols) in IDX3 format."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", _IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", _IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def read_idx(path) -> np.ndarray:
    """Read an IDX file; returns uint8 array (n, rows, cols) or (n,)."""
    with open(path, "rb") as f:
        magic = struct.unpack(">I", f.read(4))[0]
        if magic == _IDX_IMAGES_MAGIC:
            n, rows, cols = struct.unpack(">III", f.read(12))
            buf = f.read(n * rows * cols)
            if len(buf) != n * rows * cols:
                raise FormatError(f"truncated image data in {path}")
            return np.frombuffer(buf, dtype=np.uint8).reshape(n, rows, cols)
        if magic == _IDX_LABELS_MAGIC:
            n = struct.unpack(">I", f.read(4))[0]
            buf = f.read(n)
            if len(buf) != n:
                raise FormatError(f"truncated label data in {path}")
            return np.frombuffer(buf, dtype=np.uint8)
        raise FormatError(f"bad IDX magic 0x{magic:08x} in {path}")


def load_mnist_binary(idx_image_path, idx_label_path, m: int, seed: int = 0) -> Dataset:
    """Load an MNIST-format digit corpus as the digit>=5 binary task.

    Pixels are scaled to [0,1] and flattened; ``m`` samples are drawn without
    replacement; the original digit of each sample is kept in ``digits``.
    """
    images = read_idx(idx_image_path)
    labels = read_idx(idx_label_path)
    if images.ndim != 3:
        raise FormatError(f"{idx_image_path} is not an image file")
    if labels.ndim != 1:
        raise FormatError(f"{idx_label_path} is not a label file")
    if images.shape[0] != labels.shape[0]:
        raise FormatError("image/label count mismatch")
    if m > images.shape[0]:
        raise InputError(f"requested {m} samples, file has {images.shape[0]}")
    idx = np.random.default_rng(seed).choice(images.shape[0], size=m, replace=False)
    X = images[idx].reshape(m, -1).astype(np.float64) / 255.0
    digits = labels[idx].astype(np.int64)
    return Dataset(X, (digits >= 5).astype(np.int64), "mnist-binary", digits)


def subsample_prosthetic(data: Dataset, seed: int = 0) -> Dataset:
    """Digit 4 relabeled False, digits 5-9 relabeled True with 30% of the
    True samples kept (deterministic per seed); all other digits dropped."""
    if data.digits is None:
        raise InputError("digit metadata required")
    fours = np.flatnonzero(data.digits == 4)
    if fours.size == 0:
        raise InputError("no digit-4 samples to relabel")
    highs = np.flatnonzero(data.digits >= 5)
    rng = np.random.default_rng(seed)
    keep_n = int(round(0.3 * highs.size))
    kept = rng.choice(highs, size=keep_n, replace=False) if keep_n else np.empty(0, np.int64)
    idx = np.sort(np.concatenate([fours, kept]))
    out = data.subset(idx)
    out.labels = (out.digits >= 5).astype(np.int64)
    out.name = data.name + "-prosthetic"
    return out
