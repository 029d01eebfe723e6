"""Classification metrics, precision-recall curves and report emission.

Zero-denominator precision, recall or F1 contribute 0 to weighted sums.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from hifinet.classes import CLASS_NAMES, N_CLASSES, FaultClass
from hifinet.errors import ConfigError, DataError


def confusion(true_labels, predicted_labels, n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(predicted_labels, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise DataError(f"label arrays differ in length: {t.size} vs {p.size}")
    if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= n_classes):
        raise DataError("labels outside the class range")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def _total(cm) -> int:
    n = int(np.sum(cm))
    if n == 0:
        raise DataError("metric undefined on an empty confusion matrix")
    return n


def accuracy(cm) -> float:
    cm = np.asarray(cm)
    return float(np.trace(cm)) / _total(cm)


def _safe_ratio(num, den) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def per_class_precision(cm) -> np.ndarray:
    cm = np.asarray(cm)
    return _safe_ratio(np.diag(cm), cm.sum(axis=0))


def per_class_recall(cm) -> np.ndarray:
    cm = np.asarray(cm)
    return _safe_ratio(np.diag(cm), cm.sum(axis=1))


def per_class_f1(cm) -> np.ndarray:
    p, r = per_class_precision(cm), per_class_recall(cm)
    return _safe_ratio(2.0 * p * r, p + r)


def _support_weighted(cm, per_class: np.ndarray) -> float:
    # divide once at the end so a perfect matrix gives exactly 1
    cm = np.asarray(cm)
    return float(np.sum(cm.sum(axis=1) * per_class) / _total(cm))


def weighted_precision(cm) -> float:
    return _support_weighted(cm, per_class_precision(cm))


def weighted_f1(cm) -> float:
    return _support_weighted(cm, per_class_f1(cm))


def _check_probs(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise DataError(f"probability matrix must be 2-d, got {probs.shape}")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise DataError("probability rows must be non-negative and sum to 1")
    return probs


def pr_curve_from_scores(scores, positives) -> tuple[np.ndarray, np.ndarray, float]:
    """Threshold sweep over distinct scores (descending), trapezoidal area.

    The curve starts at recall 0 with the precision of the highest threshold,
    so a constant scorer integrates to the positive prevalence.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    pos = np.asarray(positives, dtype=bool).ravel()
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise DataError("precision-recall curve needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], pos[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    precision = np.r_[precision[0], precision]
    recall = np.r_[0.0, recall]
    area = float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))
    return recall, precision, area


def pr_curve_auprc(true_labels, probability_matrix, positive_classes: Sequence[int] | None = None):
    """Micro-averaged one-vs-rest curve pooled over the fault classes.

    Every (sample, fault class) pair is one scored decision: score is the
    class probability, positive when the sample's true class matches.
    Returns ``(recall, precision, auprc)``.
    """
    probs = _check_probs(probability_matrix)
    y = np.asarray(true_labels, dtype=np.int64).ravel()
    if y.size != probs.shape[0]:
        raise DataError("labels and probability rows differ in count")
    classes = list(positive_classes) if positive_classes is not None else [c for c in range(probs.shape[1]) if c != FaultClass.NORMAL]
    scores = probs[:, classes]
    positives = y[:, None] == np.asarray(classes)[None, :]
    return pr_curve_from_scores(scores, positives)


def per_class_pr_curves(true_labels, probability_matrix) -> dict[int, tuple[np.ndarray, np.ndarray, float]]:
    probs = _check_probs(probability_matrix)
    y = np.asarray(true_labels, dtype=np.int64).ravel()
    out = {}
    for c in range(probs.shape[1]):
        if np.any(y == c):
            out[c] = pr_curve_from_scores(probs[:, c], y == c)
    return out


def f1_drop(report_low, report_high) -> float:
    """Weighted-F1 loss, in percentage points, from the low to the high fault-rate report."""
    def _f1(r):
        if isinstance(r, MetricsReport):
            return 100.0 * r.weighted_f1
        return float(r)
    return _f1(report_low) - _f1(report_high)


@dataclass
class MetricsReport:
    accuracy: float
    weighted_precision: float
    weighted_f1: float
    auprc: float | None
    precision: list[float]
    recall: list[float]
    f1: list[float]
    confusion: list[list[int]]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "weighted_precision": self.weighted_precision,
            "weighted_f1": self.weighted_f1,
            "auprc": self.auprc,
            "per_class": {
                name: {"precision": p, "recall": r, "f1": f}
                for name, p, r, f in zip(CLASS_NAMES, self.precision, self.recall, self.f1)
            },
            "confusion": self.confusion,
            "metadata": self.metadata,
        }


def build_report(true_labels, predicted_labels, probabilities=None, metadata: dict | None = None) -> MetricsReport:
    cm = confusion(true_labels, predicted_labels)
    auprc = None
    if probabilities is not None:
        y = np.asarray(true_labels).ravel()
        if np.any(y != FaultClass.NORMAL):
            auprc = pr_curve_auprc(y, np.asarray(probabilities).reshape(y.size, -1))[2]
    return MetricsReport(
        accuracy=accuracy(cm),
        weighted_precision=weighted_precision(cm),
        weighted_f1=weighted_f1(cm),
        auprc=auprc,
        precision=per_class_precision(cm).tolist(),
        recall=per_class_recall(cm).tolist(),
        f1=per_class_f1(cm).tolist(),
        confusion=cm.tolist(),
        metadata=dict(metadata or {}),
    )


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def emit_report(report: MetricsReport, path, format: str = "json") -> Path:
    path = Path(path)
    if format == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    elif format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "class", "value"])
            for key in ("accuracy", "weighted_precision", "weighted_f1", "auprc"):
                w.writerow([key, "all", _fmt(getattr(report, key))])
            for name, p, r, f in zip(CLASS_NAMES, report.precision, report.recall, report.f1):
                w.writerow(["precision", name, _fmt(p)])
                w.writerow(["recall", name, _fmt(r)])
                w.writerow(["f1", name, _fmt(f)])
    else:
        raise ConfigError(f"unknown report format {format!r}")
    return path


def write_confusion_csv(cm, path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + list(CLASS_NAMES))
        for name, row in zip(CLASS_NAMES, np.asarray(cm)):
            w.writerow([name] + [int(v) for v in row])


def write_pr_csv(recall, precision, path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recall", "precision"])
        for r, p in zip(recall, precision):
            w.writerow([repr(float(r)), repr(float(p))])


def write_table_csv(rows: Sequence[dict], path) -> None:
    """Long-form results grid: metric, model, dataset, rate, value."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "model", "dataset", "rate", "value"])
        for r in rows:
            w.writerow([r["metric"], r["model"], r["dataset"], repr(float(r["rate"])), _fmt(r["value"])])


def write_embeddings_csv(window_ids, labels, activations, path) -> None:
    """Penultimate activations per window, for external projection tools."""
    acts = np.asarray(activations, dtype=np.float64)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_id", "label"] + [f"a{i}" for i in range(acts.shape[1])])
        for wid, lab, row in zip(window_ids, labels, acts):
            w.writerow([wid, FaultClass(int(lab)).label] + [repr(float(v)) for v in row])
