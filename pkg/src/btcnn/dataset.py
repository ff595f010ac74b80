"""On-disk dataset container, record loading and the stratified split.

A dataset directory holds ``index.csv`` with the exact header
``record_id,pid,label,image,mask``; image and mask paths are relative to the
directory. Images are 16-bit P5 PGM (maxval 65535), masks 8-bit P5 PGM with
samples in {0, 255}.
"""
import csv
import enum
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadRatios,
    DimensionMismatch,
    DuplicateRecordId,
    EmptyManifest,
    InvalidMask,
    MalformedIndex,
    MalformedPgm,
    MissingFile,
    MissingIndex,
    UnknownLabel,
)
from .pgm import read_pgm
from .rng import STREAM_SPLIT, Xorshift64Star

INDEX_NAME = "index.csv"
INDEX_HEADER = ["record_id", "pid", "label", "image", "mask"]
PARTITIONS = ("train", "validation", "test")
DEFAULT_RATIOS = (0.70, 0.15, 0.15)


class Label(enum.IntEnum):
    GLIOMA = 0
    MENINGIOMA = 1
    PITUITARY = 2

    @property
    def text(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "Label":
        return cls[text.strip().upper()]


CLASS_NAMES = [lab.text for lab in Label]


@dataclass(frozen=True)
class ManifestEntry:
    record_id: str
    pid: str
    label: Label
    image: Path
    mask: Path


@dataclass
class Manifest:
    root: Path
    entries: list

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_id(self) -> dict:
        return {e.record_id: e for e in self.entries}


@dataclass
class DatasetRecord:
    record_id: str
    pid: str
    label: Label
    image: np.ndarray  # uint16, H x W
    mask: np.ndarray  # bool, H x W

    def __post_init__(self):
        if self.image.ndim != 2 or min(self.image.shape) < 1:
            raise DimensionMismatch(f"image must be a non-empty 2-D array, got {self.image.shape}")
        if self.image.shape != self.mask.shape:
            raise DimensionMismatch(
                f"{self.record_id}: image {self.image.shape} vs mask {self.mask.shape}"
            )


def load_manifest(path) -> Manifest:
    root = Path(path)
    index = root / INDEX_NAME
    if not index.is_file():
        raise MissingIndex(f"no {INDEX_NAME} in {root}")
    with index.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != INDEX_HEADER:
        raise MalformedIndex(f"{index}: header must be {','.join(INDEX_HEADER)}")
    entries = []
    seen = set()
    for n, row in enumerate(rows[1:], 1):
        if not row:
            continue
        if len(row) != len(INDEX_HEADER):
            raise MalformedIndex(f"{index}: row {n} has {len(row)} fields")
        rid, pid, label, image, mask = row
        if rid in seen:
            raise DuplicateRecordId(n, rid)
        seen.add(rid)
        try:
            lab = Label.parse(label)
        except KeyError:
            raise UnknownLabel(n, label) from None
        entries.append(ManifestEntry(rid, pid, lab, root / image, root / mask))
    if not entries:
        raise EmptyManifest(f"{index} lists no records")
    for e in entries:
        for p in (e.image, e.mask):
            if not p.is_file():
                raise MissingFile(str(p))
    return Manifest(root, entries)


def load_record(entry: ManifestEntry) -> DatasetRecord:
    image, imax = read_pgm(entry.image)
    if imax != 65535:
        raise MalformedPgm(f"{entry.image}: image maxval must be 65535, got {imax}")
    mask, mmax = read_pgm(entry.mask)
    if mmax != 255:
        raise MalformedPgm(f"{entry.mask}: mask maxval must be 255, got {mmax}")
    if image.shape != mask.shape:
        raise DimensionMismatch(f"{entry.record_id}: image {image.shape} vs mask {mask.shape}")
    if not np.isin(mask, (0, 255)).all():
        raise InvalidMask(f"{entry.mask}: samples must be 0 or 255")
    return DatasetRecord(entry.record_id, entry.pid, entry.label, image, mask == 255)


@dataclass
class SplitAssignment:
    assignment: dict  # record_id -> partition name
    seed: int

    def ids(self, partition: str, manifest: Manifest) -> list[str]:
        """Record ids of one partition, in manifest order."""
        if partition not in PARTITIONS:
            raise ValueError(f"unknown partition {partition!r}")
        return [e.record_id for e in manifest if self.assignment[e.record_id] == partition]

    def entries(self, partition: str, manifest: Manifest) -> list[ManifestEntry]:
        return [e for e in manifest if self.assignment[e.record_id] == partition]


def _floor_share(ratio: float, n: int) -> int:
    # guard against 0.15 * 60 -> 8.999999999999998
    return math.floor(ratio * n + 1e-9)


def stratified_split(manifest: Manifest, ratios=DEFAULT_RATIOS, seed: int = 0) -> SplitAssignment:
    """Per-class seeded shuffle; first floor(r_test*n) to test, next
    floor(r_val*n) to validation, remainder to train.

    Classes are processed in label order, each consuming one Fisher-Yates
    permutation of its records (manifest order) from a single stream.
    """
    if len(manifest) == 0:
        raise EmptyManifest("cannot split an empty manifest")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    _, r_val, r_test = ratios
    rng = Xorshift64Star(seed, STREAM_SPLIT)
    assignment = {}
    for lab in Label:
        ids = [e.record_id for e in manifest if e.label == lab]
        n = len(ids)
        perm = rng.permutation(n)
        n_test = _floor_share(r_test, n)
        n_val = _floor_share(r_val, n)
        for rank, k in enumerate(perm):
            if rank < n_test:
                part = "test"
            elif rank < n_test + n_val:
                part = "validation"
            else:
                part = "train"
            assignment[ids[k]] = part
    return SplitAssignment(assignment, seed)


def class_counts(items) -> dict:
    """Per-label tallies for anything yielding labels, entries or records."""
    tally = Counter()
    for it in items:
        lab = it if isinstance(it, (Label, int)) else it.label
        tally[Label(lab)] += 1
    return {lab: tally.get(lab, 0) for lab in Label}
