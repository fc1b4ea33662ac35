"""Evaluation metrics: confusion matrices, unweighted average recall, ROC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """Integer counts; rows are true classes, columns predicted classes."""

    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    def total(self) -> int:
        return int(self.counts.sum())


def confusion(labels, predictions, n_classes: int) -> ConfusionMatrix:
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise MetricsError(
            f"labels and predictions disagree in length: {labels.shape} vs {predictions.shape}"
        )
    for name, arr in (("label", labels), ("prediction", predictions)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise MetricsError(f"{name} out of range for {n_classes} classes")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return ConfusionMatrix(counts)


def per_class_recall(cm: ConfusionMatrix) -> np.ndarray:
    row_sums = cm.counts.sum(axis=1)
    if (row_sums == 0).any():
        empty = np.nonzero(row_sums == 0)[0].tolist()
        raise MetricsError(f"recall undefined: no true samples for classes {empty}")
    return np.diag(cm.counts) / row_sums


def uar(cm: ConfusionMatrix) -> float:
    """Unweighted average recall: mean of per-class recalls.

    For two classes this is 0.5 * (TP/(FN+TP) + TN/(TN+FP)).
    """
    return float(per_class_recall(cm).mean())


def sensitivity_specificity(cm: ConfusionMatrix) -> tuple[float, float]:
    """Binary decomposition (positive class = index 1); uar == their mean."""
    if cm.n_classes != 2:
        raise MetricsError(f"binary decomposition needs 2 classes, got {cm.n_classes}")
    recalls = per_class_recall(cm)
    return float(recalls[1]), float(recalls[0])


def roc_points(scores, labels) -> tuple[list[tuple[float, float]], float]:
    """ROC points at every distinct threshold plus (0,0) and (1,1), sorted by
    FPR, and the trapezoidal AUC. Binary labels only; ties share a threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricsError("scores and labels must be equal-length 1-D arrays")
    if not set(np.unique(labels)) <= {0, 1}:
        raise MetricsError("labels must be 0/1")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    # keep the last index of each tied-score group
    last_of_group = np.nonzero(np.append(np.diff(s) != 0, True))[0]
    tpr = tp[last_of_group] / n_pos
    fpr = fp[last_of_group] / n_neg
    fpr = np.concatenate([[0.0], fpr])
    tpr = np.concatenate([[0.0], tpr])
    if fpr[-1] != 1.0 or tpr[-1] != 1.0:
        fpr = np.append(fpr, 1.0)
        tpr = np.append(tpr, 1.0)
    auc = float(np.trapezoid(tpr, fpr))
    return list(zip(fpr.tolist(), tpr.tolist())), auc
