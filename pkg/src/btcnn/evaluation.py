"""Confusion matrices, one-vs-rest metrics and the accuracy comparison table.

Matrix axes follow the reference figures: rows are the *predicted* class,
columns the *actual* class, both ordered glioma, meningioma, pituitary.
"""
import io
import json
from dataclasses import dataclass

import numpy as np

from .dataset import CLASS_NAMES
from .errors import DuplicateCell, EmptyMatrix, LengthMismatch, ShapeMismatch, UndefinedRate
from .model import ModelParams, forward, forward_batch
from .preprocess import INPUT_SIZES, Variant

CM_COMMENT = "# rows=predicted cols=actual order=glioma,meningioma,pituitary"
REPORT_ROWS = (Variant.CROPPED, Variant.UNCROPPED, Variant.SEGMENTED)
REPORT_COLS = INPUT_SIZES
MISSING = "—"


def predict(params: ModelParams, sample: np.ndarray) -> int:
    """Argmax class; ties go to the lowest index."""
    probs, _ = forward(params, sample)
    return int(np.argmax(probs))


def predict_batch(params: ModelParams, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(x), chunk):
        probs, _ = forward_batch(params, x[start : start + chunk])
        out.append(np.argmax(probs, axis=1))
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [predicted, actual]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(CLASS_NAMES)
        if self.counts.shape != (k, k):
            raise ShapeMismatch(f"confusion matrix must be {k}x{k}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("confusion matrix counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        lines = [CM_COMMENT] + [",".join(str(int(v)) for v in row) for row in self.counts]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        lines = [ln.strip() for ln in text.strip().splitlines()]
        if not lines or lines[0] != CM_COMMENT:
            raise ValueError(f"confusion matrix CSV must start with {CM_COMMENT!r}")
        return cls([[int(v) for v in ln.split(",")] for ln in lines[1:]])


def confusion_matrix(predictions, truths) -> ConfusionMatrix:
    pred = np.asarray(predictions, dtype=np.int64).reshape(-1)
    true = np.asarray(truths, dtype=np.int64).reshape(-1)
    if pred.shape != true.shape:
        raise LengthMismatch(f"{pred.size} predictions vs {true.size} labels")
    k = len(CLASS_NAMES)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (pred, true), 1)
    return ConfusionMatrix(counts)


@dataclass
class ClassMetrics:
    label: str
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    sensitivity: float
    specificity: float
    precision: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _ratio(num, den, metric, label):
    if den == 0:
        raise UndefinedRate(metric, label)
    return num / den


def per_class_metrics(cm: ConfusionMatrix, k: int) -> ClassMetrics:
    total = cm.total
    if total == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    c = cm.counts
    label = CLASS_NAMES[k]
    tp = int(c[k, k])
    fp = int(c[k, :].sum()) - tp
    fn = int(c[:, k].sum()) - tp
    tn = total - tp - fp - fn
    return ClassMetrics(
        label,
        tp,
        fp,
        fn,
        tn,
        accuracy=_ratio(tp + tn, tp + fp + tn + fn, "accuracy", label),
        sensitivity=_ratio(tp, tp + fn, "sensitivity", label),
        specificity=_ratio(tn, tn + fp, "specificity", label),
        precision=_ratio(tp, tp + fp, "precision", label),
    )


@dataclass
class AggregateMetrics:
    overall_accuracy: float
    macro_sensitivity: float
    macro_specificity: float
    macro_precision: float
    per_class: list

    def to_json(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "per_class": [m.to_json() for m in self.per_class],
            "macro": {
                "sensitivity": self.macro_sensitivity,
                "specificity": self.macro_specificity,
                "precision": self.macro_precision,
            },
        }


def aggregate_metrics(cm: ConfusionMatrix) -> AggregateMetrics:
    """Overall accuracy (trace / total) plus unweighted one-vs-rest means."""
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    per = [per_class_metrics(cm, k) for k in range(len(CLASS_NAMES))]
    return AggregateMetrics(
        overall_accuracy=int(np.trace(cm.counts)) / cm.total,
        macro_sensitivity=float(np.mean([m.sensitivity for m in per])),
        macro_specificity=float(np.mean([m.specificity for m in per])),
        macro_precision=float(np.mean([m.precision for m in per])),
        per_class=per,
    )


def metrics_json(metrics: AggregateMetrics, extra: dict = None) -> str:
    doc = metrics.to_json()
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def lenient_metrics_json(cm: ConfusionMatrix, extra: dict = None) -> str:
    """Like :func:`metrics_json` but never raises on a 0/0 rate.

    Undefined rates become ``null``, and so does any macro mean that would
    include one. Their names are listed under ``"undefined"``.
    """
    try:
        return metrics_json(aggregate_metrics(cm), extra)
    except UndefinedRate:
        pass
    c, total = cm.counts, cm.total
    per, undefined = [], []
    for k, label in enumerate(CLASS_NAMES):
        tp = int(c[k, k])
        fp = int(c[k, :].sum()) - tp
        fn = int(c[:, k].sum()) - tp
        tn = total - tp - fp - fn
        row = dict(label=label, tp=tp, fp=fp, fn=fn, tn=tn)
        for metric, num, den in (
            ("accuracy", tp + tn, total),
            ("sensitivity", tp, tp + fn),
            ("specificity", tn, tn + fp),
            ("precision", tp, tp + fp),
        ):
            row[metric] = num / den if den else None
            if not den:
                undefined.append(f"{metric}/{label}")
        per.append(row)
    macro = {}
    for metric in ("sensitivity", "specificity", "precision"):
        vals = [row[metric] for row in per]
        macro[metric] = None if None in vals else float(np.mean(vals))
    doc = dict(overall_accuracy=int(np.trace(c)) / total, per_class=per, macro=macro, undefined=undefined)
    doc.update(extra or {})
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class ComparisonCell:
    variant: Variant
    size: int
    accuracy: float  # fraction in [0, 1]
    metrics: AggregateMetrics = None


def comparison_report(cells) -> str:
    """Markdown table, rows cropped/uncropped/segmented, columns 32/64/128."""
    grid = {}
    for cell in cells:
        key = (Variant(cell.variant), int(cell.size))
        if key in grid:
            raise DuplicateCell(f"two cells for {key[0]} at {key[1]}")
        grid[key] = cell
    out = io.StringIO()
    out.write("| Variant | " + " | ".join(f"{s}x{s}" for s in REPORT_COLS) + " |\n")
    out.write("|---" * (len(REPORT_COLS) + 1) + "|\n")
    for v in REPORT_ROWS:
        vals = []
        for s in REPORT_COLS:
            cell = grid.get((v, s))
            vals.append(MISSING if cell is None else f"{100.0 * cell.accuracy:.2f}")
        out.write(f"| {v.value.capitalize()} | " + " | ".join(vals) + " |\n")
    return out.getvalue()
