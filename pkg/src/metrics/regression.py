"""
Regression error metrics over retained predictions.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from src.metrics.base import MetricValue, check_lengths, metric_value, retained_mask


def _errors(truth, pred, retained):
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    n = check_lengths(truth, pred)
    keep = retained_mask(retained, n)
    return pred[keep] - truth[keep]


def rmse(truth: np.ndarray, pred: np.ndarray, retained: Optional[np.ndarray] = None,
         scope: str = "overall") -> MetricValue:
    err = _errors(truth, pred, retained)
    if err.size == 0:
        return metric_value("rmse", None, 0, scope)
    return metric_value("rmse", float(np.sqrt(np.mean(err * err))), err.size, scope)


def mae(truth: np.ndarray, pred: np.ndarray, retained: Optional[np.ndarray] = None,
        scope: str = "overall") -> MetricValue:
    err = _errors(truth, pred, retained)
    if err.size == 0:
        return metric_value("mae", None, 0, scope)
    return metric_value("mae", float(np.mean(np.abs(err))), err.size, scope)
