"""Multiclass evaluation: confusion matrix, one-vs-rest metrics, and reports.

Every score is derived from a single integer confusion matrix whose rows are
true classes and columns predicted classes. Per-class scores treat the class
as positive and the union of the others as negative. Ratios with a zero
denominator are reported as 0.0 and flagged, never NaN.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count matrix; ``counts[i][j]`` = true class i predicted as j."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.class_names)
        if counts.shape != (k, k):
            raise ValueError(
                f"expected a {k}x{k} matrix for {k} classes, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion matrix counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self, index: int) -> int:
        return int(self.counts[index].sum())


def confusion_matrix(y_true, y_pred, class_names: tuple[str, ...]) -> ConfusionMatrix:
    """Tally label pairs into a ConfusionMatrix; labels are class indices."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("y_true and y_pred must be 1-D with equal length")
    k = len(class_names)
    if y_true.size and not ((0 <= y_true).all() and (y_true < k).all()
                            and (0 <= y_pred).all() and (y_pred < k).all()):
        raise ValueError(f"labels must lie in [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts=counts, class_names=class_names)


@dataclass(frozen=True)
class ClassMetrics:
    """One-vs-rest counts and scores for a single class."""

    name: str
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    sensitivity: float
    specificity: float
    f1: float
    support: int
    degenerate: bool  # True when any score's denominator was zero


def _ratio(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def per_class_metrics(cm: ConfusionMatrix) -> tuple[ClassMetrics, ...]:
    out = []
    total = cm.total
    for i, name in enumerate(cm.class_names):
        tp = int(cm.counts[i, i])
        fp = int(cm.counts[:, i].sum()) - tp
        fn = int(cm.counts[i].sum()) - tp
        tn = total - tp - fp - fn
        precision, d1 = _ratio(tp, tp + fp)
        sensitivity, d2 = _ratio(tp, tp + fn)
        specificity, d3 = _ratio(tn, tn + fp)
        if precision + sensitivity == 0.0:
            f1, d4 = 0.0, True
        else:
            f1, d4 = 2 * precision * sensitivity / (precision + sensitivity), False
        out.append(ClassMetrics(
            name=name, tp=tp, fp=fp, fn=fn, tn=tn,
            precision=precision, sensitivity=sensitivity,
            specificity=specificity, f1=f1,
            support=cm.support(i), degenerate=d1 or d2 or d3 or d4,
        ))
    return tuple(out)


@dataclass(frozen=True)
class MetricsReport:
    """Everything evaluate() produces: per-class scores plus aggregates."""

    confusion: ConfusionMatrix
    per_class: tuple[ClassMetrics, ...]
    accuracy: float
    macro: dict[str, float]
    weighted: dict[str, float]


_SCORE_FIELDS = ("precision", "sensitivity", "specificity", "f1")


def aggregate(cm: ConfusionMatrix) -> MetricsReport:
    """Compute per-class metrics plus accuracy and macro/weighted averages."""
    per_class = per_class_metrics(cm)
    total = cm.total
    accuracy = cm.counts.trace() / total if total else 0.0
    k = len(per_class)
    macro = {f: sum(getattr(m, f) for m in per_class) / k for f in _SCORE_FIELDS}
    if total:
        weighted = {f: sum(getattr(m, f) * m.support for m in per_class) / total
                    for f in _SCORE_FIELDS}
    else:
        weighted = {f: 0.0 for f in _SCORE_FIELDS}
    return MetricsReport(confusion=cm, per_class=per_class,
                         accuracy=float(accuracy), macro=macro, weighted=weighted)


def render_report(report: MetricsReport, loss: float | None = None) -> str:
    """Format a report as a fixed-width text table with percentages.

    One row per class plus macro and weighted average rows; accuracy (and
    optionally mean loss) go in a footer. Scores print as percentages with
    two decimals.
    """
    header = ("class", "precision", "sensitivity", "specificity", "f1", "support")
    rows = []
    for m in report.per_class:
        rows.append((m.name, *(f"{getattr(m, f) * 100:.2f}%" for f in _SCORE_FIELDS),
                     str(m.support)))
    rows.append(("macro avg", *(f"{report.macro[f] * 100:.2f}%" for f in _SCORE_FIELDS),
                 str(report.confusion.total)))
    rows.append(("weighted avg", *(f"{report.weighted[f] * 100:.2f}%" for f in _SCORE_FIELDS),
                 str(report.confusion.total)))

    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]

    def line(cells):
        return "  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i])
                         for i, c in enumerate(cells))

    out = [line(header), line(tuple("-" * w for w in widths))]
    out.extend(line(r) for r in rows)
    out.append("")
    out.append(f"accuracy: {report.accuracy * 100:.2f}%")
    if loss is not None:
        out.append(f"loss: {loss:.4f}")
    return "\n".join(out)


def report_to_csv(report: MetricsReport) -> str:
    """Serialize per-class rows plus averages as CSV (scores as fractions)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("class", "precision", "sensitivity", "specificity", "f1", "support"))
    for m in report.per_class:
        writer.writerow((m.name, *(f"{getattr(m, f):.6f}" for f in _SCORE_FIELDS), m.support))
    writer.writerow(("macro_avg", *(f"{report.macro[f]:.6f}" for f in _SCORE_FIELDS),
                     report.confusion.total))
    writer.writerow(("weighted_avg", *(f"{report.weighted[f]:.6f}" for f in _SCORE_FIELDS),
                     report.confusion.total))
    return buf.getvalue()
