"""Confusion-matrix based segmentation metrics (IoU, precision, recall)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ClassCountMismatch, ClassOutOfRange, DimensionMismatch
from .masks import BACKGROUND, IGNORE, LabelMap


@dataclass(frozen=True)
class ConfusionMatrix:
    """cells[g, p] counts pixels with ground truth g predicted as p (classes 0..K)."""

    num_classes: int
    cells: np.ndarray = field(repr=False)

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(num_classes, np.zeros((num_classes + 1, num_classes + 1), dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.cells.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.num_classes == other.num_classes and bool(np.array_equal(self.cells, other.cells))


def _values(label_map, k: int, what: str) -> np.ndarray:
    data = label_map.data if isinstance(label_map, LabelMap) else np.asarray(label_map)
    bad = (data > k) & (data != IGNORE)
    if bad.any():
        raise ClassOutOfRange(f"{what} value {int(data[bad].max())} exceeds K={k}")
    return data


def accumulate(cm: ConfusionMatrix, pred: LabelMap, gt: LabelMap) -> ConfusionMatrix:
    """Return ``cm`` plus the counts of one image pair.

    Pixels whose ground truth is 255 are skipped. A predicted 255 on a scored
    pixel is counted as a background prediction.
    """
    k = cm.num_classes
    p = _values(pred, k, "prediction")
    g = _values(gt, k, "ground truth")
    if p.shape != g.shape:
        raise DimensionMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
    scored = g != IGNORE
    gv = g[scored].astype(np.int64)
    pv = p[scored].astype(np.int64)
    pv[pv == IGNORE] = BACKGROUND
    n = k + 1
    counts = np.bincount(gv * n + pv, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(k, cm.cells + counts)


def merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    if a.num_classes != b.num_classes:
        raise ClassCountMismatch(f"K={a.num_classes} vs K={b.num_classes}")
    return ConfusionMatrix(a.num_classes, a.cells + b.cells)


def confusion_of(pairs, num_classes: int) -> ConfusionMatrix:
    """Accumulate an iterable of (pred, gt) pairs."""
    cm = ConfusionMatrix.zeros(num_classes)
    for pred, gt in pairs:
        cm = accumulate(cm, pred, gt)
    return cm


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return sum(defined) / len(defined) if defined else None


@dataclass
class ClassMetrics:
    class_id: int
    tp: int
    fp: int
    fn: int
    iou: Optional[float]
    precision: Optional[float]
    recall: Optional[float]

    @property
    def defined(self) -> bool:
        return self.iou is not None


@dataclass
class MetricsReport:
    """Per-class and macro-averaged metrics. ``None`` marks an undefined value."""

    num_classes: int
    classes: list[ClassMetrics]
    miou: Optional[float]
    miou_foreground: Optional[float]
    mean_precision: Optional[float]
    mean_recall: Optional[float]
    mean_precision_foreground: Optional[float]
    mean_recall_foreground: Optional[float]
    class_names: Optional[list[str]] = None

    def name(self, k: int) -> str:
        if self.class_names and k < len(self.class_names):
            return self.class_names[k]
        return "background" if k == 0 else f"class_{k}"

    def summary(self) -> dict:
        return {
            "record": "summary",
            "num_classes": self.num_classes,
            "miou": self.miou,
            "miou_foreground": self.miou_foreground,
            "mean_precision": self.mean_precision,
            "mean_recall": self.mean_recall,
            "mean_precision_foreground": self.mean_precision_foreground,
            "mean_recall_foreground": self.mean_recall_foreground,
            "undefined_classes": [c.class_id for c in self.classes if not c.defined],
        }

    def to_lines(self) -> list[str]:
        """Line-delimited JSON: one record per class, then the summary."""
        lines = []
        for c in self.classes:
            lines.append(
                json.dumps(
                    {
                        "record": "class",
                        "class": c.class_id,
                        "name": self.name(c.class_id),
                        "tp": c.tp,
                        "fp": c.fp,
                        "fn": c.fn,
                        "iou": c.iou,
                        "precision": c.precision,
                        "recall": c.recall,
                    }
                )
            )
        lines.append(json.dumps(self.summary()))
        return lines

    def to_text(self) -> str:
        def fmt(v: Optional[float]) -> str:
            return "   n/a" if v is None else f"{100 * v:6.2f}"

        rows = [f"{'class':<16} {'IoU':>6} {'Prec':>6} {'Rec':>6}"]
        for c in self.classes:
            rows.append(f"{self.name(c.class_id):<16} {fmt(c.iou)} {fmt(c.precision)} {fmt(c.recall)}")
        rows.append("-" * 37)
        rows.append(f"{'mIoU (all)':<16} {fmt(self.miou)}")
        rows.append(f"{'mIoU (fg)':<16} {fmt(self.miou_foreground)}")
        rows.append(f"{'mean P / R (all)':<16} {fmt(self.mean_precision)} {fmt(self.mean_recall)}")
        rows.append(
            f"{'mean P / R (fg)':<16} {fmt(self.mean_precision_foreground)} {fmt(self.mean_recall_foreground)}"
        )
        return "\n".join(rows)


def report(cm: ConfusionMatrix, class_names: Optional[list[str]] = None) -> MetricsReport:
    cells = cm.cells
    tp = np.diag(cells)
    fp = cells.sum(axis=0) - tp
    fn = cells.sum(axis=1) - tp
    classes = []
    for c in range(cm.num_classes + 1):
        t, f_p, f_n = int(tp[c]), int(fp[c]), int(fn[c])
        classes.append(
            ClassMetrics(
                c, t, f_p, f_n,
                iou=_ratio(t, t + f_p + f_n),
                precision=_ratio(t, t + f_p),
                recall=_ratio(t, t + f_n),
            )
        )
    fg = classes[1:]
    return MetricsReport(
        num_classes=cm.num_classes,
        classes=classes,
        miou=_mean([c.iou for c in classes]),
        miou_foreground=_mean([c.iou for c in fg]),
        mean_precision=_mean([c.precision for c in classes]),
        mean_recall=_mean([c.recall for c in classes]),
        mean_precision_foreground=_mean([c.precision for c in fg]),
        mean_recall_foreground=_mean([c.recall for c in fg]),
        class_names=class_names,
    )


def miou(pairs, num_classes: int) -> Optional[float]:
    return report(confusion_of(pairs, num_classes)).miou
