"""
Uncertainty measures computed from Monte-Carlo prediction stacks, and their
normalization to the 0-100 scale the threshold sweep works on.

All functions are pure and operate on numpy arrays with the sample axis
first, so they can be called concurrently on distinct instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import entr

from src.data.model import McPredictions, Measure, Normalization, TaskKind
from src.utils.errors import BadBound, DomainError, NegativeVariance, ValidationError


NEGATIVE_PROB_TOLERANCE = 1e-9


@dataclass(frozen=True)
class UncertaintyScores:
    raw: np.ndarray
    normalized: np.ndarray
    measure: Measure
    normalization_mode: Normalization


def predictive_mean(mc: McPredictions) -> np.ndarray:
    """
    Mean prediction over the sample axis.

    Returns a probability vector [C] (classification), a probability volume
    [C x P x Q x S] (segmentation) or the mean predicted value per target [K]
    (regression).
    """

    if mc.precomputed:
        return np.asarray(mc.mean, dtype=np.float64)
    samples = np.asarray(mc.samples, dtype=np.float64)
    if mc.task is TaskKind.REGRESSION:
        return samples[..., 0].mean(axis=0)
    return samples.mean(axis=0)


def entropy(mean_probs: np.ndarray, axis: int = -1) -> np.ndarray:
    """
    Predictive entropy in nats, -sum p ln p along the class axis, with 0 ln 0 = 0.
    """

    p = np.asarray(mean_probs, dtype=np.float64)
    if p.size and p.min() < -NEGATIVE_PROB_TOLERANCE:
        raise DomainError(f"probability entry {p.min():.3g} is negative")
    p = np.clip(p, 0.0, None)
    h = entr(p).sum(axis=axis)
    c = p.shape[axis]
    return np.clip(h, 0.0, math.log(c))


def sample_variance(samples: np.ndarray, axis: int = 0) -> np.ndarray:
    """
    Population variance over the sample axis, written as E[y^2] - E[y]^2.
    Negative rounding residue is clamped to zero.
    """

    y = np.asarray(samples, dtype=np.float64)
    second = np.mean(y * y, axis=axis)
    first = np.mean(y, axis=axis)
    return np.maximum(second - first * first, 0.0)


def predicted_variance(mc: McPredictions, target: Optional[int] = None) -> np.ndarray:
    """
    Mean of the network-predicted variances over the T samples.
    """

    if mc.task is not TaskKind.REGRESSION:
        raise ValidationError("predicted variance is only defined for regression stacks")
    v_hat = np.asarray(mc.samples[..., 1], dtype=np.float64)
    if np.any(v_hat < 0):
        raise NegativeVariance("predicted variance must be >= 0")
    v_hat = v_hat.mean(axis=0)
    return v_hat if target is None else v_hat[target]


def total_variance(mc: McPredictions, target: Optional[int] = None) -> np.ndarray:
    """
    Sample variance of the predicted means plus the mean predicted variance.
    Returns one value per target, or the value for `target` when given.
    """

    aleatoric = predicted_variance(mc)
    epistemic = sample_variance(mc.samples[..., 0], axis=0)
    total = epistemic + aleatoric
    return total if target is None else total[target]


def raw_uncertainty(mc: McPredictions, measure: Measure) -> np.ndarray:
    """
    Raw (unnormalized) uncertainty for one instance: a scalar for
    classification, one value per target for regression, one value per
    voxel for segmentation.
    """

    if measure is Measure.PRECOMPUTED:
        if mc.raw_uncertainty is None:
            raise ValidationError("precomputed measure requested but no uncertainty volume was loaded")
        return np.asarray(mc.raw_uncertainty, dtype=np.float64)

    if mc.task is TaskKind.REGRESSION:
        if measure is Measure.TOTAL_VAR:
            return total_variance(mc)
        if measure is Measure.SAMPLE_VAR:
            return sample_variance(mc.samples[..., 0], axis=0)
        raise ValidationError(f"measure {measure.value} is not defined for regression")

    if mc.precomputed:
        raise ValidationError("precomputed segmentation only supports its stored uncertainty")
    mean = predictive_mean(mc)
    if measure is Measure.ENTROPY:
        return entropy(mean, axis=0)
    if measure is Measure.SAMPLE_VAR:
        winner = np.argmax(mean, axis=0)
        samples = np.asarray(mc.samples, dtype=np.float64)
        picked = np.take_along_axis(samples, winner[np.newaxis, np.newaxis, ...], axis=1)[:, 0]
        return sample_variance(picked, axis=0)
    raise ValidationError(f"measure {measure.value} is not defined for {mc.task.value}")


def normalize(
    raw: np.ndarray,
    mode: Normalization,
    bound_max: Optional[float] = None,
    measure: Measure = Measure.ENTROPY,
) -> UncertaintyScores:
    """
    Map raw uncertainties to [0, 100].

    bound:  100 * raw / bound_max, clamped at 100
    minmax: 100 * (raw - min) / (max - min) over the whole collection;
            a constant collection maps to all zeros
    """

    values = np.asarray(raw, dtype=np.float64)
    if values.size == 0:
        raise ValidationError("cannot normalize an empty collection")
    if not np.all(np.isfinite(values)) or values.min() < 0:
        raise ValidationError("raw uncertainties must be finite and >= 0")

    mode = Normalization(mode)
    if mode is Normalization.BOUND:
        if bound_max is None or not bound_max > 0 or not math.isfinite(bound_max):
            raise BadBound("bound normalization needs a positive bound_max")
        normalized = np.minimum(100.0 * values / bound_max, 100.0)
    else:
        lo, hi = float(values.min()), float(values.max())
        if hi == lo:
            normalized = np.zeros_like(values)
        else:
            normalized = np.clip(100.0 * (values - lo) / (hi - lo), 0.0, 100.0)
    return UncertaintyScores(raw=values, normalized=normalized, measure=measure, normalization_mode=mode)
