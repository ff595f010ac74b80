"""Procedural stand-ins for the MRI dataset.

Each phantom is a noisy elliptical "brain" with one circular lesion whose
texture encodes the class:

* glioma: solid bright blob with a soft radial falloff
* meningioma: bright ring around a dark core
* pituitary: bright/dark stripes at a random orientation

The lesion disk is also the mask.
"""
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import INDEX_HEADER, INDEX_NAME, DatasetRecord, Label
from .pgm import encode_pgm

BRAIN_LEVEL = 12000.0
LESION_HIGH = 30000.0
LESION_LOW = 5000.0
NOISE_SD = 600.0


@dataclass(frozen=True)
class SynthSpec:
    per_class: int = 100
    size: int = 128
    seed: int = 0


def _lesion(label: Label, dy, dx, radius, rng):
    d = np.hypot(dy, dx) / radius
    if label is Label.GLIOMA:
        return LESION_HIGH * (1.0 - 0.4 * d**2)
    if label is Label.MENINGIOMA:
        return np.where(d > 0.55, LESION_HIGH, LESION_LOW)
    theta = rng.uniform(0.0, np.pi)
    period = 0.8 * radius
    proj = dy * np.cos(theta) + dx * np.sin(theta)
    return np.where(np.cos(2.0 * np.pi * proj / period) > 0, LESION_HIGH, LESION_LOW)


def make_phantom(label: Label, size: int, rng: np.random.Generator):
    """One ``(uint16 image, bool mask)`` pair."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    ay, ax = 0.46 * size, 0.40 * size
    brain = ((yy - c) / ay) ** 2 + ((xx - c) / ax) ** 2 <= 1.0
    shade = 1.0 + 0.15 * np.sin(2 * np.pi * (xx / size + rng.uniform()))
    img = np.where(brain, BRAIN_LEVEL * shade, 300.0)

    radius = rng.uniform(0.16, 0.24) * size
    # keep the lesion well inside the brain ellipse
    slack_y, slack_x = ay - radius - 2, ax - radius - 2
    cy = c + rng.uniform(-0.7, 0.7) * slack_y
    cx = c + rng.uniform(-0.7, 0.7) * slack_x
    dy, dx = yy - cy, xx - cx
    mask = dy**2 + dx**2 <= radius**2
    img = np.where(mask, _lesion(label, dy, dx, radius, rng), img)
    img = img + rng.normal(0.0, NOISE_SD, img.shape)
    return np.clip(np.rint(img), 0, 65535).astype(np.uint16), mask


def generate(spec: SynthSpec):
    """Class-balanced records, interleaved glioma/meningioma/pituitary."""
    rng = np.random.default_rng(spec.seed)
    records = []
    for i in range(spec.per_class):
        for lab in Label:
            image, mask = make_phantom(lab, spec.size, rng)
            rid = f"{lab.text[0]}{i:05d}"
            records.append(DatasetRecord(rid, f"P{len(records) // 3:05d}", lab, image, mask))
    return records


def write_dataset(records, out_dir) -> Path:
    """Write records as index.csv plus images/ and masks/ PGM files."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in records:
        img_rel = f"images/{rec.record_id}.pgm"
        mask_rel = f"masks/{rec.record_id}.pgm"
        (out / img_rel).write_bytes(encode_pgm(rec.image, 65535))
        (out / mask_rel).write_bytes(encode_pgm(rec.mask.astype(np.uint8) * 255, 255))
        rows.append([rec.record_id, rec.pid, rec.label.text, img_rel, mask_rel])
    with (out / INDEX_NAME).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INDEX_HEADER)
        w.writerows(rows)
    return out
