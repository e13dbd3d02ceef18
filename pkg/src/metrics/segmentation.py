"""
Segmentation metrics: region masks, Dice, filtered true positive/negative
ratios and the QU-BraTS aggregate.

Counts are taken over retained voxels only. `VoxelProfile` holds the same
counts as cumulative sums over voxels sorted by normalized uncertainty, so
the sweep can read them off at any threshold without rescanning the volume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from src.data.model import RegionDef
from src.metrics.base import MetricValue, metric_value
from src.utils.errors import GridMismatch, ShapeMismatch


# numpy 2 renamed trapz
_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def region_mask(label_map: np.ndarray, region: RegionDef) -> np.ndarray:
    return np.isin(np.asarray(label_map), np.asarray(region.labels))


def _check_grids(*arrays: Optional[np.ndarray]) -> None:
    shapes = {np.shape(a) for a in arrays if a is not None}
    if len(shapes) != 1:
        raise ShapeMismatch(f"voxel grids differ: {sorted(shapes)}")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred_mask: np.ndarray, truth_mask: np.ndarray,
              retained: Optional[np.ndarray] = None) -> ConfusionCounts:
    pred_mask = np.asarray(pred_mask, dtype=bool)
    truth_mask = np.asarray(truth_mask, dtype=bool)
    _check_grids(pred_mask, truth_mask, retained)
    keep = np.ones(pred_mask.shape, dtype=bool) if retained is None else np.asarray(retained, dtype=bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred_mask & truth_mask & keep)),
        fp=int(np.count_nonzero(pred_mask & ~truth_mask & keep)),
        fn=int(np.count_nonzero(~pred_mask & truth_mask & keep)),
        tn=int(np.count_nonzero(~pred_mask & ~truth_mask & keep)),
    )


def dice_from_counts(counts: ConfusionCounts, scope: str = "overall") -> MetricValue:
    """
    2|P and G| / (|P| + |G|). No retained voxels -> undefined; retained voxels
    but both masks empty -> 1.0.
    """

    if counts.total == 0:
        return metric_value("dice", None, 0, scope)
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return metric_value("dice", 1.0, counts.total, scope)
    return metric_value("dice", 2.0 * counts.tp / denom, counts.total, scope)


def dice(pred_mask: np.ndarray, truth_mask: np.ndarray, retained: Optional[np.ndarray] = None,
         scope: str = "overall") -> MetricValue:
    return dice_from_counts(confusion(pred_mask, truth_mask, retained), scope)


def filtered_ratios(full: ConfusionCounts, kept: ConfusionCounts) -> Tuple[float, float]:
    """
    Fraction of true positives / true negatives lost to filtering; a zero
    baseline count gives a ratio of 0.
    """

    ftp = (full.tp - kept.tp) / full.tp if full.tp else 0.0
    ftn = (full.tn - kept.tn) / full.tn if full.tn else 0.0
    return float(ftp), float(ftn)


def ftp_ftn(pred_mask: np.ndarray, truth_mask: np.ndarray,
            retained: Optional[np.ndarray] = None) -> Tuple[float, float]:
    full = confusion(pred_mask, truth_mask)
    kept = confusion(pred_mask, truth_mask, retained)
    return filtered_ratios(full, kept)


def trapezoid_mean(taus: np.ndarray, values: np.ndarray) -> float:
    """
    Area under a curve over the tau grid, divided by the grid span.
    """

    order = np.argsort(taus, kind="stable")
    x = np.asarray(taus, dtype=np.float64)[order]
    y = np.asarray(values, dtype=np.float64)[order]
    span = x[-1] - x[0]
    if span <= 0:
        return float(y.mean())
    return float(_trapezoid(y, x) / span)


def qubrats_score(taus: Sequence[float], dice_curve: Sequence[Optional[float]],
                  ftp_curve: Sequence[float], ftn_curve: Sequence[float]) -> Optional[float]:
    """
    (AUC(Dice) + (1 - AUC(FTP)) + (1 - AUC(FTN))) / 3 on a 0-100 scale.

    Points where Dice is undefined are skipped; fewer than one remaining
    point gives None.
    """

    taus = np.asarray(taus, dtype=np.float64)
    if not (len(taus) == len(dice_curve) == len(ftp_curve) == len(ftn_curve)):
        raise GridMismatch("Dice, FTP and FTN series must share the tau grid")
    d = np.array([np.nan if v is None else v for v in dice_curve], dtype=np.float64)
    keep = ~np.isnan(d)
    if not keep.any():
        return None
    ftp = np.asarray(ftp_curve, dtype=np.float64)[keep]
    ftn = np.asarray(ftn_curve, dtype=np.float64)[keep]
    x = taus[keep]
    score = (trapezoid_mean(x, d[keep]) + (1.0 - trapezoid_mean(x, ftp)) + (1.0 - trapezoid_mean(x, ftn))) / 3.0
    return 100.0 * score


class VoxelProfile:
    """
    Cumulative confusion counts for one image and one region, indexed by the
    number of least-uncertain voxels retained.
    """

    def __init__(self, pred_mask: np.ndarray, truth_mask: np.ndarray, normalized: np.ndarray):
        _check_grids(pred_mask, truth_mask, normalized)
        u = np.asarray(normalized, dtype=np.float64).ravel()
        order = np.argsort(u, kind="stable")
        self.sorted_u = u[order]
        p = np.asarray(pred_mask, dtype=bool).ravel()[order]
        g = np.asarray(truth_mask, dtype=bool).ravel()[order]
        zero = np.zeros(1, dtype=np.int64)
        self._tp = np.concatenate([zero, np.cumsum(p & g, dtype=np.int64)])
        self._fp = np.concatenate([zero, np.cumsum(p & ~g, dtype=np.int64)])
        self._fn = np.concatenate([zero, np.cumsum(~p & g, dtype=np.int64)])
        self._tn = np.concatenate([zero, np.cumsum(~p & ~g, dtype=np.int64)])
        self.full = self.counts_at(np.inf)

    def retained_count(self, tau: float) -> int:
        return int(np.searchsorted(self.sorted_u, tau, side="right"))

    def counts_at(self, tau: float) -> ConfusionCounts:
        k = self.retained_count(tau)
        return ConfusionCounts(int(self._tp[k]), int(self._fp[k]), int(self._fn[k]), int(self._tn[k]))
