"""
Uncertainty-threshold sweep.

For every threshold tau on a descending grid, predictions whose normalized
uncertainty is above tau are filtered out, the task metric is computed per
subgroup on what remains, and the fairness gap |EM(D0) - EM(D1)| is
recorded. At tau = 100 nothing is filtered and the gap is the plain
subgroup gap.

Determinism: per-instance work (loading, uncertainty, sufficient
statistics) may run on a thread pool, but results are gathered in manifest
order and every reduction is a sequential sum in that order, so the curves
do not depend on the number of threads.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.config.settings import EVAL_SETTINGS, default_bound_max
from src.data.manifest import check_measure, load_label_map, load_predictions
from src.data.model import EvalManifest, InstanceRecord, Measure, Normalization, TaskKind
from src.metrics.base import ERROR_LIKE, GROUP_ALL, MetricValue, metric_value
from src.metrics.classification import (
    accuracy,
    argmax_predictions,
    balanced_accuracy,
    macro_auc_ovr,
    per_class_accuracy,
)
from src.metrics.regression import mae, rmse
from src.metrics.segmentation import (
    VoxelProfile,
    dice_from_counts,
    filtered_ratios,
    qubrats_score,
    region_mask,
)
from src.uncertainty.measures import UncertaintyScores, normalize, predictive_mean, raw_uncertainty
from src.utils.errors import BadBound, BadStep, ScopeMismatch, TooFewPoints, ValidationError


logger = logging.getLogger(__name__)

GROUP_LABELS = ("D0", "D1")
SERIES_LABELS = GROUP_LABELS + (GROUP_ALL,)


# ----------------------------------------------------------------------
# Thresholds, filtering and the gap itself
# ----------------------------------------------------------------------


def threshold_grid(step: float = EVAL_SETTINGS.tau_step) -> np.ndarray:
    """
    Descending grid [100, 100 - step, ..., 0]. `step` must divide 100.
    """

    if not (isinstance(step, (int, float)) and math.isfinite(step) and 0 < step <= 100):
        raise BadStep(f"tau step must lie in (0, 100], got {step!r}")
    count = 100.0 / step
    intervals = int(round(count))
    if abs(count - intervals) > 1e-9:
        raise BadStep(f"tau step {step} does not divide 100")
    return np.array([100.0 - i * (100.0 / intervals) for i in range(intervals)] + [0.0])


def filter_retained(scores, tau: float) -> np.ndarray:
    """
    Retained mask: an element is kept iff its normalized uncertainty <= tau.
    """

    normalized = scores.normalized if isinstance(scores, UncertaintyScores) else scores
    return np.asarray(normalized) <= tau


def fairness_gap(em0: MetricValue, em1: MetricValue) -> Optional[float]:
    if em0.name != em1.name or em0.scope != em1.scope:
        raise ScopeMismatch(f"cannot compare {em0.name}/{em0.scope} with {em1.name}/{em1.scope}")
    if em0.value is None or em1.value is None:
        return None
    return abs(em0.value - em1.value)


# ----------------------------------------------------------------------
# Curves
# ----------------------------------------------------------------------


@dataclass
class FairnessCurve:
    metric: str
    scope: str
    taus: np.ndarray
    em_d0: List[MetricValue]
    em_d1: List[MetricValue]
    em_all: List[MetricValue]
    fg: List[Optional[float]]
    n_retained_d0: np.ndarray
    n_retained_d1: np.ndarray
    qubrats: Dict[str, Optional[float]] = field(default_factory=dict)

    @property
    def key(self) -> Tuple[str, str]:
        return self.metric, self.scope

    @property
    def error_like(self) -> bool:
        return self.metric in ERROR_LIKE

    def series(self, group: str) -> List[MetricValue]:
        return {"D0": self.em_d0, "D1": self.em_d1, GROUP_ALL: self.em_all}[group]

    def defined_points(self) -> int:
        return sum(1 for v in self.fg if v is not None)


def _build_curve(metric: str, scope: str, taus: np.ndarray,
                 evaluate: Callable[[float, Optional[int]], MetricValue],
                 counts: Callable[[float, int], int]) -> FairnessCurve:
    em_d0, em_d1, em_all, fg = [], [], [], []
    n0, n1 = [], []
    for tau in taus:
        v0 = _tag(evaluate(tau, 0), "D0")
        v1 = _tag(evaluate(tau, 1), "D1")
        em_d0.append(v0)
        em_d1.append(v1)
        em_all.append(_tag(evaluate(tau, None), GROUP_ALL))
        fg.append(fairness_gap(v0, v1))
        n0.append(counts(tau, 0))
        n1.append(counts(tau, 1))
    return FairnessCurve(
        metric=metric, scope=scope, taus=np.asarray(taus, dtype=np.float64),
        em_d0=em_d0, em_d1=em_d1, em_all=em_all, fg=fg,
        n_retained_d0=np.asarray(n0, dtype=np.int64), n_retained_d1=np.asarray(n1, dtype=np.int64),
    )


def _tag(value: MetricValue, group: str) -> MetricValue:
    return MetricValue(value.name, value.scope, group, value.value, value.n_retained)


# ----------------------------------------------------------------------
# Per-task sufficient statistics
# ----------------------------------------------------------------------


@dataclass
class ClassificationStats:
    truth: np.ndarray
    mean_probs: np.ndarray
    pred: np.ndarray
    groups: np.ndarray
    scores: UncertaintyScores


@dataclass
class RegressionStats:
    truth: np.ndarray
    pred: np.ndarray
    groups: np.ndarray
    scores: List[UncertaintyScores]
    strata: Optional[np.ndarray] = None


@dataclass
class SegmentationStats:
    groups: np.ndarray
    region_names: Tuple[str, ...]
    # profiles[i][r]: image i, region r
    profiles: List[List[VoxelProfile]]


def _pool_map(fn: Callable, items: Sequence, threads: int) -> List:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _normalization_params(manifest: EvalManifest, measure: Measure,
                          normalization: Normalization) -> Optional[float]:
    if normalization is not Normalization.BOUND:
        return None
    bound = manifest.bound_max or default_bound_max(measure.value, manifest.class_count)
    if bound is None:
        raise BadBound(f"bound normalization for {measure.value} needs a manifest bound_max")
    return bound


def prepare_classification(manifest: EvalManifest, measure: Measure, normalization: Normalization,
                           threads: int = 1) -> ClassificationStats:
    def work(record: InstanceRecord):
        mc = load_predictions(manifest, record)
        return predictive_mean(mc), float(raw_uncertainty(mc, measure))

    results = _pool_map(work, manifest.instances, threads)
    mean_probs = np.stack([r[0] for r in results])
    raw = np.array([r[1] for r in results], dtype=np.float64)
    scores = normalize(raw, normalization, _normalization_params(manifest, measure, normalization), measure)
    truth = np.array([r.truth for r in manifest.instances], dtype=np.int64)
    return ClassificationStats(truth, mean_probs, argmax_predictions(mean_probs), manifest.groups, scores)


def prepare_regression(manifest: EvalManifest, measure: Measure, normalization: Normalization,
                       threads: int = 1) -> RegressionStats:
    def work(record: InstanceRecord):
        mc = load_predictions(manifest, record)
        return predictive_mean(mc), np.asarray(raw_uncertainty(mc, measure), dtype=np.float64)

    results = _pool_map(work, manifest.instances, threads)
    pred = np.stack([r[0] for r in results])
    raw = np.stack([r[1] for r in results])
    bound = _normalization_params(manifest, measure, normalization)
    # each target is normalized on its own
    scores = [normalize(raw[:, k], normalization, bound, measure) for k in range(raw.shape[1])]
    truth = np.array([r.truth for r in manifest.instances], dtype=np.float64)
    strata = None
    if any(r.stratum is not None for r in manifest.instances):
        strata = np.array([r.stratum or "" for r in manifest.instances], dtype=object)
    return RegressionStats(truth, pred, manifest.groups, scores, strata)


def prepare_segmentation(manifest: EvalManifest, measure: Measure, normalization: Normalization,
                         threads: int = 1) -> SegmentationStats:
    def load(record: InstanceRecord):
        mc = load_predictions(manifest, record)
        labels_pred = np.argmax(predictive_mean(mc), axis=0)
        return labels_pred, raw_uncertainty(mc, measure), load_label_map(manifest, record)

    loaded = _pool_map(load, manifest.instances, threads)
    raws = [item[1] for item in loaded]
    bound = _normalization_params(manifest, measure, normalization)
    # voxels of all images are normalized jointly
    flat = normalize(np.concatenate([r.ravel() for r in raws]), normalization, bound, measure).normalized
    offsets = np.cumsum([0] + [r.size for r in raws])
    normalized = [flat[offsets[i]:offsets[i + 1]].reshape(raws[i].shape) for i in range(len(raws))]

    def profile(index: int) -> List[VoxelProfile]:
        labels_pred, _, labels_truth = loaded[index]
        return [
            VoxelProfile(region_mask(labels_pred, region), region_mask(labels_truth, region), normalized[index])
            for region in manifest.regions
        ]

    profiles = _pool_map(profile, list(range(len(loaded))), threads)
    return SegmentationStats(manifest.groups, tuple(r.name for r in manifest.regions), profiles)


# ----------------------------------------------------------------------
# Curve assembly per task
# ----------------------------------------------------------------------


def _group_mask(groups: np.ndarray, group: Optional[int]) -> np.ndarray:
    return np.ones(groups.shape, dtype=bool) if group is None else groups == group


def classification_curves(stats: ClassificationStats, taus: np.ndarray,
                          class_names: Sequence[str]) -> List[FairnessCurve]:
    u = stats.scores.normalized
    class_count = stats.mean_probs.shape[1]

    def mask(tau, group):
        return (u <= tau) & _group_mask(stats.groups, group)

    def counts(tau, group):
        return int(np.count_nonzero(mask(tau, group)))

    curves = [
        _build_curve("accuracy", "overall", taus,
                     lambda tau, g: accuracy(stats.truth, stats.pred, mask(tau, g)), counts),
        _build_curve("balanced_accuracy", "overall", taus,
                     lambda tau, g: balanced_accuracy(stats.truth, stats.pred, mask(tau, g), class_count), counts),
        _build_curve("macro_auc", "overall", taus,
                     lambda tau, g: macro_auc_ovr(stats.truth, stats.mean_probs, mask(tau, g)), counts),
    ]
    for c in range(class_count):
        scope = f"class:{class_names[c]}"
        curves.append(_build_curve(
            "class_accuracy", scope, taus,
            lambda tau, g, c=c, scope=scope: per_class_accuracy(stats.truth, stats.pred, mask(tau, g), c, scope),
            counts,
        ))
    return curves


def regression_curves(stats: RegressionStats, taus: np.ndarray,
                      target_names: Sequence[str]) -> List[FairnessCurve]:
    curves = []
    strata_values = [] if stats.strata is None else sorted({s for s in stats.strata if s})
    for k, name in enumerate(target_names):
        u = stats.scores[k].normalized
        scopes = [(f"target:{name}", None)] + [(f"target:{name}/stratum:{s}", s) for s in strata_values]
        for scope, stratum in scopes:
            base = np.ones(u.shape, dtype=bool) if stratum is None else stats.strata == stratum

            def mask(tau, group, base=base, u=u):
                return base & (u <= tau) & _group_mask(stats.groups, group)

            def counts(tau, group, mask=mask):
                return int(np.count_nonzero(mask(tau, group)))

            for metric_fn in (rmse, mae):
                curves.append(_build_curve(
                    metric_fn.__name__, scope, taus,
                    lambda tau, g, fn=metric_fn, k=k, mask=mask, scope=scope:
                        fn(stats.truth[:, k], stats.pred[:, k], mask(tau, g), scope),
                    counts,
                ))
    return curves


def _image_average(name: str, scope: str, values: Iterable[Optional[float]]) -> MetricValue:
    defined = [v for v in values if v is not None]
    if not defined:
        return metric_value(name, None, 0, scope)
    total = 0.0
    for v in defined:
        total += v
    return metric_value(name, total / len(defined), len(defined), scope)


def segmentation_curves(stats: SegmentationStats, taus: np.ndarray) -> List[FairnessCurve]:
    curves = []
    images = range(len(stats.profiles))

    def members(group):
        return [i for i in images if group is None or stats.groups[i] == group]

    def counts(tau, group):
        return sum(stats.profiles[i][0].retained_count(tau) for i in members(group))

    for r, region in enumerate(stats.region_names):
        scope = f"region:{region}"

        def per_image(tau, group, r=r):
            out = []
            for i in members(group):
                prof = stats.profiles[i][r]
                kept = prof.counts_at(tau)
                out.append((dice_from_counts(kept).value, *filtered_ratios(prof.full, kept)))
            return out

        def dice_at(tau, group, per_image=per_image, scope=scope):
            return _image_average("dice", scope, (d for d, _, _ in per_image(tau, group)))

        def ftp_at(tau, group, per_image=per_image, scope=scope):
            return _image_average("ftp", scope, (f for _, f, _ in per_image(tau, group)))

        def ftn_at(tau, group, per_image=per_image, scope=scope):
            return _image_average("ftn", scope, (f for _, _, f in per_image(tau, group)))

        dice_curve = _build_curve("dice", scope, taus, dice_at, counts)
        ftp_curve = _build_curve("ftp", scope, taus, ftp_at, counts)
        ftn_curve = _build_curve("ftn", scope, taus, ftn_at, counts)
        for label in SERIES_LABELS:
            dice_curve.qubrats[label] = qubrats_score(
                taus,
                [v.value for v in dice_curve.series(label)],
                [v.value if v.value is not None else 0.0 for v in ftp_curve.series(label)],
                [v.value if v.value is not None else 0.0 for v in ftn_curve.series(label)],
            )
        curves.extend([dice_curve, ftp_curve, ftn_curve])
    return curves


def resolve_selectors(manifest: EvalManifest, measure: Optional[Measure] = None,
                      normalization: Optional[Normalization] = None) -> Tuple[Measure, Normalization]:
    """
    Flags override manifest selectors, which override the task defaults.
    """

    if measure is not None and manifest.precomputed and measure is not Measure.PRECOMPUTED:
        raise ValidationError("precomputed segmentation carries its own uncertainty; --measure does not apply")
    measure = measure or manifest.resolved_measure()
    check_measure(manifest.task, measure)
    if normalization is None:
        normalization = manifest.normalization
    if normalization is None:
        normalization = Normalization.BOUND if measure is Measure.ENTROPY else Normalization.MINMAX
    return measure, normalization


def prepare_stats(manifest: EvalManifest, measure: Optional[Measure] = None,
                  normalization: Optional[Normalization] = None, threads: int = 1):
    measure, normalization = resolve_selectors(manifest, measure, normalization)
    logger.info("uncertainty measure %s, %s normalization", measure.value, normalization.value)
    prepare = {
        TaskKind.CLASSIFICATION: prepare_classification,
        TaskKind.REGRESSION: prepare_regression,
        TaskKind.SEGMENTATION: prepare_segmentation,
    }[manifest.task]
    return prepare(manifest, measure, normalization, threads)


def curves_from_stats(manifest: EvalManifest, stats, taus: np.ndarray) -> List[FairnessCurve]:
    if manifest.task is TaskKind.CLASSIFICATION:
        return classification_curves(stats, taus, manifest.class_names)
    if manifest.task is TaskKind.REGRESSION:
        return regression_curves(stats, taus, manifest.target_names)
    return segmentation_curves(stats, taus)


def sweep_curves(manifest: EvalManifest, grid: Optional[Sequence[float]] = None,
                 measure: Optional[Measure] = None, normalization: Optional[Normalization] = None,
                 threads: int = 1) -> List[FairnessCurve]:
    """
    One FairnessCurve per (metric, scope) appropriate to the manifest's task.
    """

    taus = threshold_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    stats = prepare_stats(manifest, measure, normalization, threads)
    curves = curves_from_stats(manifest, stats, taus)
    logger.info("swept %d thresholds, %d curves", len(taus), len(curves))
    return curves


# ----------------------------------------------------------------------
# Desired-behaviour report
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class PairFlags:
    tau_high: float
    tau_low: float
    fg_improved: bool
    em_improved: Dict[str, bool]


@dataclass(frozen=True)
class BehaviorReport:
    metric: str
    scope: str
    pairs: Tuple[PairFlags, ...]
    fg_improved_fraction: float
    em_improved_fraction: Dict[str, float]


def desired_behavior_flags(curve: FairnessCurve) -> BehaviorReport:
    """
    Compare every adjacent pair of defined points (tau2 > tau1): the gap
    should not grow and each group's metric should not get worse as more
    uncertain predictions are filtered.
    """

    points = [i for i, v in enumerate(curve.fg) if v is not None]
    if len(points) < 2:
        raise TooFewPoints(f"{curve.metric}/{curve.scope} has {len(points)} defined points, need 2")

    def better_or_equal(new: Optional[float], old: Optional[float]) -> bool:
        if new is None or old is None:
            return False
        return new <= old if curve.error_like else new >= old

    pairs = []
    for hi, lo in zip(points[:-1], points[1:]):
        em_flags = {
            label: better_or_equal(curve.series(label)[lo].value, curve.series(label)[hi].value)
            for label in SERIES_LABELS
        }
        pairs.append(PairFlags(
            tau_high=float(curve.taus[hi]),
            tau_low=float(curve.taus[lo]),
            fg_improved=curve.fg[lo] <= curve.fg[hi],
            em_improved=em_flags,
        ))
    n = len(pairs)
    return BehaviorReport(
        metric=curve.metric,
        scope=curve.scope,
        pairs=tuple(pairs),
        fg_improved_fraction=sum(p.fg_improved for p in pairs) / n,
        em_improved_fraction={
            label: sum(p.em_improved[label] for p in pairs) / n for label in SERIES_LABELS
        },
    )
