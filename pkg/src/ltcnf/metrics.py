"""Classification metrics. Class index 1 (NF1) is the positive class."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError, ShapeError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(true_labels, predicted_labels, num_classes: int = 2) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ShapeError(f"{t.shape[0]} true labels vs {p.shape[0]} predictions")
    if t.size == 0:
        raise ShapeError("confusion matrix needs at least one sample")
    if min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= num_classes:
        raise ShapeError(f"labels must lie in [0, {num_classes - 1}]")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    zero_division: dict = field(default_factory=dict)


def precision_recall_f1(cm: ConfusionMatrix, cls: int = 1) -> ClassScores:
    """Per-class scores; any 0/0 becomes 0.0 and is flagged instead of raising."""
    c = cm.counts
    tp = int(c[cls, cls])
    fp = int(c[:, cls].sum()) - tp
    fn = int(c[cls, :].sum()) - tp
    flags = {}
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision, flags["precision"] = 0.0, True
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall, flags["recall"] = 0.0, True
    if precision + recall:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, flags["f1"] = 0.0, True
    return ClassScores(precision, recall, f1, flags)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise MetricError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ShapeError(f"scores {s.shape} and labels {y.shape} must be equal 1-D shapes")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise MetricError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC is undefined unless both classes are present")
    return s, y, n_pos, n_neg


def _midranks(values):
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, true_binary) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg), ties worth one half."""
    s, y, n_pos, n_neg = _check_binary(scores, true_binary)
    rank_sum = _midranks(s)[y == 1].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, true_binary):
    """``[(fpr, tpr), ...]`` for thresholds +inf then each unique score, descending."""
    s, y, n_pos, n_neg = _check_binary(scores, true_binary)
    points = [(0.0, 0.0)]
    for thr in np.unique(s)[::-1]:
        pred = s >= thr
        tp = int(np.sum(pred & (y == 1)))
        fp = int(np.sum(pred & (y == 0)))
        points.append((fp / n_neg, tp / n_pos))
    return points


def trapezoid_area(points) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


@dataclass
class MetricsReport:
    accuracy: float
    precision: list
    recall: list
    f1: list
    auc_roc: float
    confusion_matrix: list
    zero_division: dict
    class_names: list

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc_roc": self.auc_roc,
            "confusion_matrix": self.confusion_matrix,
            "zero_division": self.zero_division,
            "class_names": self.class_names,
        }


def evaluate_predictions(true_labels, probabilities, class_names=("not_NF1", "NF1")) -> MetricsReport:
    """Full report from integer labels and a (S, 2) probability matrix.

    Argmax ties resolve to class 0. AUC is NaN when only one class is present.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(true_labels, dtype=np.int64)
    pred = probs.argmax(axis=1)
    cm = confusion_matrix(y, pred, probs.shape[1])
    scores = [precision_recall_f1(cm, c) for c in range(probs.shape[1])]
    try:
        auc = roc_auc(probs[:, 1], y)
    except MetricError:
        auc = float("nan")
    return MetricsReport(
        accuracy=accuracy(cm),
        precision=[s.precision for s in scores],
        recall=[s.recall for s in scores],
        f1=[s.f1 for s in scores],
        auc_roc=auc,
        confusion_matrix=cm.counts.tolist(),
        zero_division={class_names[c]: sorted(s.zero_division) for c, s in enumerate(scores) if s.zero_division},
        class_names=list(class_names),
    )


def roc_to_csv(points) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["fpr", "tpr"])
    for fpr, tpr in points:
        writer.writerow([repr(float(fpr)), repr(float(tpr))])
    return buf.getvalue()
