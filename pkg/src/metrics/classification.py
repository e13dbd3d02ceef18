"""
Classification metrics: overall, class-level and balanced accuracy, and
macro one-vs-rest AUC-ROC. Every metric takes an optional retained mask so
the sweep can score only the confident predictions at a threshold.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.stats import rankdata

from src.metrics.base import MetricValue, check_lengths, metric_value, retained_mask
from src.utils.errors import LengthMismatch


def argmax_predictions(mean_probs: np.ndarray) -> np.ndarray:
    """Predicted class per row; ties resolve to the lowest class index."""
    return np.argmax(np.asarray(mean_probs), axis=1)


def accuracy(truth: np.ndarray, pred: np.ndarray, retained: Optional[np.ndarray] = None,
             scope: str = "overall") -> MetricValue:
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    n = check_lengths(truth, pred)
    keep = retained_mask(retained, n)
    kept = int(keep.sum())
    if kept == 0:
        return metric_value("accuracy", None, 0, scope)
    correct = int(np.count_nonzero(truth[keep] == pred[keep]))
    return metric_value("accuracy", correct / kept, kept, scope)


def per_class_accuracy(truth: np.ndarray, pred: np.ndarray, retained: Optional[np.ndarray],
                       class_index: int, scope: Optional[str] = None) -> MetricValue:
    """
    Accuracy over retained instances whose true class is `class_index`.
    """

    truth = np.asarray(truth)
    pred = np.asarray(pred)
    n = check_lengths(truth, pred)
    keep = retained_mask(retained, n) & (truth == class_index)
    kept = int(keep.sum())
    scope = scope or f"class:{class_index}"
    if kept == 0:
        return metric_value("class_accuracy", None, 0, scope)
    correct = int(np.count_nonzero(pred[keep] == class_index))
    return metric_value("class_accuracy", correct / kept, kept, scope)


def balanced_accuracy(truth: np.ndarray, pred: np.ndarray, retained: Optional[np.ndarray] = None,
                      class_count: Optional[int] = None, scope: str = "overall") -> MetricValue:
    """
    Unweighted mean of class-level accuracies over classes that still have
    at least one retained instance.
    """

    truth = np.asarray(truth)
    pred = np.asarray(pred)
    n = check_lengths(truth, pred)
    keep = retained_mask(retained, n)
    if class_count is None:
        class_count = int(max(truth.max(initial=-1), pred.max(initial=-1)) + 1)
    recalls = []
    for c in range(class_count):
        value = per_class_accuracy(truth, pred, keep, c)
        if value.defined:
            recalls.append(value.value)
    kept = int(keep.sum())
    if not recalls:
        return metric_value("balanced_accuracy", None, kept, scope)
    return metric_value("balanced_accuracy", float(np.mean(recalls)), kept, scope)


def binary_auc(is_positive: np.ndarray, scores: np.ndarray) -> Optional[float]:
    """
    Rank-sum AUC: P(score_pos > score_neg) + 0.5 * P(tie). None when one side is empty.
    """

    is_positive = np.asarray(is_positive, dtype=bool)
    n_pos = int(is_positive.sum())
    n_neg = int(is_positive.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(np.asarray(scores, dtype=np.float64), method="average")
    rank_sum = float(ranks[is_positive].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def macro_auc_ovr(truth: np.ndarray, mean_probs: np.ndarray, retained: Optional[np.ndarray] = None,
                  scope: str = "overall") -> MetricValue:
    """
    Macro-averaged one-vs-rest AUC over classes with at least one retained
    positive and one retained negative. Probabilities are used as stored;
    nothing is renormalized after filtering.
    """

    truth = np.asarray(truth)
    probs = np.asarray(mean_probs, dtype=np.float64)
    if probs.ndim != 2:
        raise LengthMismatch(f"mean_probs must be [N x C], got {probs.shape}")
    n = check_lengths(truth, probs)
    keep = retained_mask(retained, n)
    kept = int(keep.sum())
    t = truth[keep]
    p = probs[keep]
    aucs = []
    for c in range(probs.shape[1]):
        value = binary_auc(t == c, p[:, c])
        if value is not None:
            aucs.append(value)
    if not aucs:
        return metric_value("macro_auc", None, kept, scope)
    return metric_value("macro_auc", float(np.mean(aucs)), kept, scope)
