"""
Shared fixtures: small on-disk manifests built from explicit arrays.
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from src.config.logging_config import configure_logging
from src.data.manifest import instance_entry, write_manifest
from src.utils.io import write_tensor


configure_logging("error")


def _entries(tmp_path, stacks, truths, groups, prefix="i", strata=None):
    entries = []
    for i, (stack, truth, group) in enumerate(zip(stacks, truths, groups)):
        rid = f"{prefix}{i:03d}"
        rel = f"pred/{rid}.uqt"
        write_tensor(np.ascontiguousarray(stack), tmp_path / rel)
        stratum = None if strata is None else strata[i]
        entries.append(instance_entry(rid, int(group), truth, rel, stratum=stratum))
    return entries


@pytest.fixture
def classification_manifest(tmp_path):
    """
    build(samples [N x T x C], truths, groups, **schema) -> manifest path
    """

    def build(samples, truths, groups, name="manifest.json", **schema):
        samples = np.asarray(samples, dtype=np.float64)
        class_count = samples.shape[2]
        entries = _entries(tmp_path, samples, [int(t) for t in truths], groups)
        schema.setdefault("class_names", [f"c{c}" for c in range(class_count)])
        write_manifest(tmp_path / name, "classification", entries, class_count=class_count, **schema)
        return tmp_path / name

    return build


@pytest.fixture
def regression_manifest(tmp_path):
    """
    build(samples [N x T x K x 2], truths [N x K], groups, strata=None, **schema)
    """

    def build(samples, truths, groups, strata=None, name="manifest.json", **schema):
        samples = np.asarray(samples, dtype=np.float64)
        k = samples.shape[2]
        truths = [list(map(float, t)) for t in np.asarray(truths, dtype=np.float64)]
        entries = _entries(tmp_path, samples, truths, groups, strata=strata)
        schema.setdefault("target_names", [f"y{j}" for j in range(k)])
        write_manifest(tmp_path / name, "regression", entries, **schema)
        return tmp_path / name

    return build


@pytest.fixture
def segmentation_manifest(tmp_path):
    """
    build(samples [N x T x C x P x Q x S], label_maps [N x P x Q x S], groups, **schema)
    """

    def build(samples, label_maps, groups, name="manifest.json", **schema):
        entries = []
        for i, (stack, labels, group) in enumerate(zip(samples, label_maps, groups)):
            rid = f"s{i:03d}"
            write_tensor(np.ascontiguousarray(stack, dtype=np.float64), tmp_path / f"pred/{rid}.uqt")
            write_tensor(np.ascontiguousarray(labels, dtype=np.uint8), tmp_path / f"truth/{rid}.uqt")
            entries.append(instance_entry(rid, int(group), f"truth/{rid}.uqt", f"pred/{rid}.uqt"))
        class_count = np.asarray(samples[0]).shape[1]
        schema.setdefault("class_names", [f"c{c}" for c in range(class_count)])
        write_manifest(tmp_path / name, "segmentation", entries, class_count=class_count, **schema)
        return tmp_path / name

    return build


@pytest.fixture
def precomputed_manifest(tmp_path):
    """
    build(means [N x C x P x Q x S], uncertainty [N x P x Q x S], label_maps, groups, **schema)
    """

    def build(means, uncertainty, label_maps, groups, name="manifest.json", **schema):
        entries = []
        for i, (mean, raw_u, labels, group) in enumerate(zip(means, uncertainty, label_maps, groups)):
            rid = f"p{i:03d}"
            write_tensor(np.ascontiguousarray(mean, dtype=np.float64), tmp_path / f"mean/{rid}.uqt")
            write_tensor(np.ascontiguousarray(raw_u, dtype=np.float64), tmp_path / f"unc/{rid}.uqt")
            write_tensor(np.ascontiguousarray(labels, dtype=np.uint8), tmp_path / f"truth/{rid}.uqt")
            entries.append(instance_entry(rid, int(group), f"truth/{rid}.uqt", f"mean/{rid}.uqt",
                                          uncertainty_path=f"unc/{rid}.uqt"))
        class_count = np.asarray(means[0]).shape[0]
        schema.setdefault("class_names", [f"c{c}" for c in range(class_count)])
        write_manifest(tmp_path / name, "segmentation", entries, class_count=class_count, **schema)
        return tmp_path / name

    return build


def random_probs(rng, shape, axis=-1, sharpness=2.0):
    logits = sharpness * rng.normal(size=shape)
    e = np.exp(logits - logits.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def make_curve(metric, em0, em1, taus=None, scope="overall", counts=None):
    """
    FairnessCurve from explicit per-group values (None = undefined); the
    "all" series is the plain mean of the two.
    """

    from src.evaluation.sweep import FairnessCurve
    from src.metrics.base import MetricValue

    taus = np.linspace(100, 0, len(em0)) if taus is None else np.asarray(taus, dtype=np.float64)
    counts = np.ones(len(em0), dtype=np.int64) if counts is None else np.asarray(counts, dtype=np.int64)

    def series(values, group):
        return [MetricValue(metric, scope, group, v, 1 if v is not None else 0) for v in values]

    em_all = [None if a is None or b is None else (a + b) / 2 for a, b in zip(em0, em1)]
    fg = [None if a is None or b is None else abs(a - b) for a, b in zip(em0, em1)]
    return FairnessCurve(metric, scope, taus, series(em0, "D0"), series(em1, "D1"),
                         series(em_all, "all"), fg, counts, counts.copy())


def numeric_gradient(model, x, y, weights, mask, block, eps=1e-6):
    """Central-difference gradient of `batch_loss` for one parameter block."""

    from src.mitigation.toy_model import batch_loss

    params = model.params()
    grad = np.zeros_like(params[block])
    for idx in np.ndindex(*params[block].shape):
        plus = {k: v.copy() for k, v in params.items()}
        minus = {k: v.copy() for k, v in params.items()}
        plus[block][idx] += eps
        minus[block][idx] -= eps
        grad[idx] = (
            batch_loss(model.with_params(plus), x, y, weights, mask)
            - batch_loss(model.with_params(minus), x, y, weights, mask)
        ) / (2 * eps)
    return grad
