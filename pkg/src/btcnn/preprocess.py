"""Image variants fed to the network: uncropped, cropped and segmented."""
import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, EmptyMask, OutOfBounds

INPUT_SIZES = (32, 64, 128)


class Variant(str, enum.Enum):
    UNCROPPED = "uncropped"
    CROPPED = "cropped"
    SEGMENTED = "segmented"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Rect:
    """Inclusive pixel bounds."""

    row_min: int
    row_max: int
    col_min: int
    col_max: int


def mask_bbox(mask: np.ndarray) -> Rect:
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        raise EmptyMask("mask has no lesion pixels")
    cols = np.flatnonzero(mask.any(axis=0))
    return Rect(int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1]))


def crop(image: np.ndarray, r: Rect) -> np.ndarray:
    h, w = image.shape
    if not (0 <= r.row_min <= r.row_max < h and 0 <= r.col_min <= r.col_max < w):
        raise OutOfBounds(f"{r} outside a {h}x{w} image")
    return image[r.row_min : r.row_max + 1, r.col_min : r.col_max + 1].copy()


def apply_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if image.shape != mask.shape:
        raise DimensionMismatch(f"image {image.shape} vs mask {mask.shape}")
    return np.where(mask, image, 0).astype(image.dtype, copy=False)


def _axis_map(src: int, dst: int):
    # half-pixel centres, clamped to the valid sample range
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def resize_bilinear(image: np.ndarray, size: int) -> np.ndarray:
    """Resize to ``size x size`` with half-pixel-centre bilinear sampling."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    r0, r1, fr = _axis_map(h, size)
    c0, c1, fc = _axis_map(w, size)
    # lerp as a + (b - a) * t so constant regions stay exactly constant
    rows = img[r0] + (img[r1] - img[r0]) * fr[:, None]
    out = rows[:, c0] + (rows[:, c1] - rows[:, c0]) * fc[None, :]
    return np.clip(out, img.min(), img.max())


def normalize(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def region(record, variant: Variant) -> np.ndarray:
    """The pre-resize image for a variant, as float64 raw intensities."""
    variant = Variant(variant)
    image = np.asarray(record.image, dtype=np.float64)
    if variant is Variant.UNCROPPED:
        return image
    box = mask_bbox(record.mask)
    if variant is Variant.SEGMENTED:
        image = apply_mask(image, record.mask)
    return crop(image, box)


def preprocess(record, variant: Variant, size: int) -> np.ndarray:
    """``DatasetRecord -> [1, size, size]`` tensor with values in [0, 1]."""
    if size not in INPUT_SIZES:
        raise ValueError(f"input size must be one of {INPUT_SIZES}, got {size}")
    return normalize(resize_bilinear(region(record, variant), size))[None]


class Samples(NamedTuple):
    x: np.ndarray  # [n, 1, N, N]
    y: np.ndarray  # [n] class indices

    def __len__(self):
        return len(self.y)


def prepare_samples(records, variant: Variant, size: int) -> Samples:
    records = list(records)
    x = np.empty((len(records), 1, size, size))
    for i, rec in enumerate(records):
        x[i] = preprocess(rec, variant, size)
    y = np.array([int(r.label) for r in records], dtype=np.int64)
    return Samples(x, y)
