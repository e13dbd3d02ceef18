"""
Synthetic data generation for uncertainty-fairness experiments.

Each generator writes a complete evaluation set under an output directory:

- manifest.json (M group-0 instances followed by L group-1 instances)
- holdout_manifest.json with an equal number of instances per group, when
  `holdout_per_group` > 0
- features.uqt / holdout_features.uqt (classification, regression)
- truth/ label volumes (segmentation)
- predictions/ with a simulated Monte-Carlo dump per instance, so the
  evaluator runs on the output as-is
- synth_meta.json with the config and construction witnesses

The simulated "model" behind the prediction dumps knows the unshifted data
distribution only: instances that a group shift or extra noise pushes
across a decision boundary are mispredicted and, being close to it, also
come out more uncertain.

All randomness comes from Philox streams keyed by (seed, stream).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
from scipy.special import softmax

from src.config.settings import PATHS, SynthConfig
from src.data.manifest import instance_entry, write_manifest
from src.data.model import BRATS_REGIONS
from src.utils.io import PathLike, write_json, write_tensor
from src.utils.rng import make_rng


logger = logging.getLogger(__name__)

# stream ids; per-instance streams start at INSTANCE_STREAM
FEATURE_STREAM = 1
PREDICTION_STREAM = 2
HOLDOUT_FEATURE_STREAM = 3
HOLDOUT_PREDICTION_STREAM = 4
PARAMETER_STREAM = 5
INSTANCE_STREAM = 1000

BLOB_RADIUS = 1.0
LOGIT_NOISE = 0.6
SEG_CLASSES = 4


def _split(cfg: SynthConfig, holdout: bool) -> Tuple[int, int]:
    return (cfg.holdout_per_group, cfg.holdout_per_group) if holdout else tuple(cfg.n_per_group)


def _groups(m: int, l: int) -> np.ndarray:
    return np.concatenate([np.zeros(m, dtype=np.int64), np.ones(l, dtype=np.int64)])


def _ids(prefix: str, n: int) -> List[str]:
    return [f"{prefix}{i:05d}" for i in range(n)]


def _meta(cfg: SynthConfig, witness: Dict[str, Any], counts: Dict[str, Any]) -> Dict[str, Any]:
    return {"task": cfg.task, "config": asdict(cfg), "witness": witness, "counts": counts}


# ----------------------------------------------------------------------
# Classification
# ----------------------------------------------------------------------


def class_means(class_count: int, feature_dim: int) -> np.ndarray:
    """
    Class centres on a circle in the first two feature dims, spaced so that
    balls of radius BLOB_RADIUS around them never touch.
    """

    radius = 1.5 * BLOB_RADIUS / math.sin(math.pi / class_count)
    angles = 2.0 * math.pi * np.arange(class_count) / class_count + math.pi
    means = np.zeros((class_count, feature_dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def separating_hyperplanes(means: np.ndarray) -> List[Dict[str, Any]]:
    """
    Perpendicular bisector between every pair of class centres:
    w.x + b > 0 on the side of `classes[1]`.
    """

    planes = []
    for i in range(len(means)):
        for j in range(i + 1, len(means)):
            w = means[j] - means[i]
            b = -0.5 * (means[j] @ means[j] - means[i] @ means[i])
            planes.append({"classes": [i, j], "w": w.tolist(), "b": float(b)})
    return planes


def _bounded_noise(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    noise = rng.normal(size=(n, dim))
    norms = np.linalg.norm(noise, axis=1, keepdims=True)
    return noise * np.minimum(1.0, BLOB_RADIUS / np.maximum(norms, 1e-12))


def _classification_set(cfg: SynthConfig, m: int, l: int, rng: np.random.Generator):
    means = class_means(cfg.class_count, cfg.feature_dim)
    groups = _groups(m, l)
    labels = rng.integers(0, cfg.class_count, size=m + l)
    x = means[labels] + _bounded_noise(rng, m + l, cfg.feature_dim)
    shift = np.asarray(cfg.group_shift, dtype=np.float64)[groups]
    x[:, 0] += shift
    sigma = np.asarray(cfg.noise_sigma, dtype=np.float64)[groups]
    x += sigma[:, None] * rng.normal(size=x.shape)
    return x, labels, groups, means


def _classification_samples(x: np.ndarray, means: np.ndarray, t: int, rng: np.random.Generator) -> np.ndarray:
    """[N x T x C] probabilities from a nearest-centre model with noisy logits."""
    sq = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    logits = -0.5 * sq
    noise = rng.normal(0.0, LOGIT_NOISE, size=(x.shape[0], t, means.shape[0]))
    return softmax(logits[:, None, :] + noise, axis=2)


def _write_classification_part(cfg: SynthConfig, out: Path, holdout: bool) -> Dict[str, int]:
    m, l = _split(cfg, holdout)
    rng = make_rng(cfg.seed, HOLDOUT_FEATURE_STREAM if holdout else FEATURE_STREAM)
    x, labels, groups, means = _classification_set(cfg, m, l, rng)
    samples = _classification_samples(
        x, means, cfg.mc_samples, make_rng(cfg.seed, HOLDOUT_PREDICTION_STREAM if holdout else PREDICTION_STREAM)
    )
    features_name = PATHS.holdout_features if holdout else PATHS.features
    write_tensor(x, out / features_name)

    entries = []
    for i, rid in enumerate(_ids("h" if holdout else "t", m + l)):
        rel = f"{PATHS.predictions_dir}/{rid}.uqt"
        write_tensor(samples[i], out / rel)
        entries.append(instance_entry(rid, int(groups[i]), int(labels[i]), rel))
    write_manifest(
        out / (PATHS.holdout_manifest if holdout else PATHS.manifest), "classification", entries,
        class_count=cfg.class_count,
        class_names=[f"class_{c}" for c in range(cfg.class_count)],
        features_path=features_name,
    )
    return {"m": m, "l": l}


def gen_classification(cfg: SynthConfig, out_dir: PathLike) -> Path:
    """
    Gaussian blobs (noise clipped to a ball) around C class centres. With no
    shift and no noise the classes are separable and the pairwise bisectors
    recorded in synth_meta.json witness it.
    """

    out = Path(out_dir)
    counts = {"train": _write_classification_part(cfg, out, holdout=False)}
    if cfg.holdout_per_group:
        counts["holdout"] = _write_classification_part(cfg, out, holdout=True)
    means = class_means(cfg.class_count, cfg.feature_dim)
    witness = {"class_means": means.tolist(), "hyperplanes": separating_hyperplanes(means),
               "blob_radius": BLOB_RADIUS}
    write_json(_meta(cfg, witness, counts), out / PATHS.synth_meta)
    logger.info("generated classification set in %s: %s", out, counts)
    return out / PATHS.manifest


# ----------------------------------------------------------------------
# Segmentation
# ----------------------------------------------------------------------


def sphere_labels(dims: Tuple[int, int, int], center: np.ndarray, radii: Tuple[float, float, float]) -> np.ndarray:
    """
    Nested spheres: label 3 inside r_et, 1 inside r_tc, 2 inside r_wt,
    0 elsewhere. Boundaries are exclusive, so a radius of 0 is empty.
    """

    grid = np.indices(dims, dtype=np.float64)
    dist = np.sqrt(sum((grid[a] - center[a]) ** 2 for a in range(3)))
    r_wt, r_tc, r_et = radii
    labels = np.zeros(dims, dtype=np.uint8)
    labels[dist < r_wt] = 2
    labels[dist < r_tc] = 1
    labels[dist < r_et] = 3
    return labels


def _boundary_distance(dims, center, radii) -> np.ndarray:
    grid = np.indices(dims, dtype=np.float64)
    dist = np.sqrt(sum((grid[a] - center[a]) ** 2 for a in range(3)))
    return np.min(np.stack([np.abs(dist - r) for r in radii if r > 0] or [np.full(dims, np.inf)]), axis=0)


def _instance_geometry(cfg: SynthConfig, group: int, rng: np.random.Generator):
    dims = tuple(cfg.volume_dims)
    center = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0 + rng.uniform(-1.0, 1.0, size=3)
    jitter = rng.uniform(0.9, 1.1, size=3)
    shrink = 1.0 - min(max(cfg.group_shift[group], 0.0), 1.0)
    r_wt, r_tc, r_et = (r * j for r, j in zip(cfg.sphere_radii, jitter))
    radii = (r_wt, min(r_tc * shrink, r_wt), min(r_et * shrink, r_tc * shrink, r_wt))
    return dims, center, radii


def _segmentation_samples(labels: np.ndarray, boundary: np.ndarray, sigma: float, t: int,
                          rng: np.random.Generator) -> np.ndarray:
    """[T x C x P x Q x S] probabilities: confident away from region borders, noisy near them."""
    onehot = np.moveaxis(np.eye(SEG_CLASSES)[labels], -1, 0)
    scale = 0.3 + sigma + 2.0 * np.exp(-(boundary ** 2))
    noise = rng.standard_normal(size=(t, SEG_CLASSES) + labels.shape, dtype=np.float32)
    logits = 3.0 * onehot[None] + scale[None, None] * noise
    return softmax(logits, axis=1).astype(np.float32)


def _write_segmentation_part(cfg: SynthConfig, out: Path, holdout: bool) -> Dict[str, Any]:
    m, l = _split(cfg, holdout)
    groups = _groups(m, l)
    base = HOLDOUT_PREDICTION_STREAM if holdout else PREDICTION_STREAM
    entries, et_voxels = [], {0: [], 1: []}
    for i, rid in enumerate(_ids("h" if holdout else "t", m + l)):
        g = int(groups[i])
        rng = make_rng(cfg.seed, INSTANCE_STREAM * base + i)
        dims, center, radii = _instance_geometry(cfg, g, rng)
        labels = sphere_labels(dims, center, radii)
        samples = _segmentation_samples(
            labels, _boundary_distance(dims, center, radii), cfg.noise_sigma[g], cfg.mc_samples, rng
        )
        truth_rel = f"{PATHS.truth_dir}/{rid}.uqt"
        pred_rel = f"{PATHS.predictions_dir}/{rid}.uqt"
        write_tensor(labels, out / truth_rel)
        write_tensor(samples, out / pred_rel)
        entries.append(instance_entry(rid, g, truth_rel, pred_rel))
        et_voxels[g].append(int(np.count_nonzero(labels == 3)))
    write_manifest(
        out / (PATHS.holdout_manifest if holdout else PATHS.manifest), "segmentation", entries,
        class_count=SEG_CLASSES,
        class_names=["background", "necrotic", "edema", "enhancing"],
        regions=list(BRATS_REGIONS),
    )
    return {"m": m, "l": l, "et_voxels": {str(g): v for g, v in et_voxels.items()}}


def gen_segmentation(cfg: SynthConfig, out_dir: PathLike) -> Path:
    out = Path(out_dir)
    counts = {"train": _write_segmentation_part(cfg, out, holdout=False)}
    if cfg.holdout_per_group:
        counts["holdout"] = _write_segmentation_part(cfg, out, holdout=True)
    witness = {"sphere_radii": list(cfg.sphere_radii), "volume_dims": list(cfg.volume_dims),
               "regions": [{"name": r.name, "labels": list(r.labels)} for r in BRATS_REGIONS]}
    write_json(_meta(cfg, witness, counts), out / PATHS.synth_meta)
    logger.info("generated segmentation set in %s: M=%d L=%d", out, *cfg.n_per_group)
    return out / PATHS.manifest


# ----------------------------------------------------------------------
# Regression
# ----------------------------------------------------------------------

STRATA = ("low", "mid", "high")


def regression_parameters(cfg: SynthConfig) -> Tuple[np.ndarray, np.ndarray]:
    rng = make_rng(cfg.seed, PARAMETER_STREAM)
    weights = rng.normal(size=(cfg.feature_dim, cfg.target_count))
    bias = rng.normal(size=cfg.target_count)
    return weights, bias


def _strata(values: np.ndarray) -> List[str]:
    cuts = np.quantile(values, [1.0 / 3.0, 2.0 / 3.0])
    return [STRATA[int(np.searchsorted(cuts, v, side="right"))] for v in values]


def _write_regression_part(cfg: SynthConfig, out: Path, holdout: bool) -> Dict[str, int]:
    m, l = _split(cfg, holdout)
    groups = _groups(m, l)
    weights, bias = regression_parameters(cfg)
    rng = make_rng(cfg.seed, HOLDOUT_FEATURE_STREAM if holdout else FEATURE_STREAM)
    x = rng.normal(size=(m + l, cfg.feature_dim)) + np.asarray(cfg.group_shift, dtype=np.float64)[groups][:, None]
    clean = x @ weights + bias
    sigma = np.asarray(cfg.noise_sigma, dtype=np.float64)[groups]
    y = clean + sigma[:, None] * rng.normal(size=clean.shape)

    pred_rng = make_rng(cfg.seed, HOLDOUT_PREDICTION_STREAM if holdout else PREDICTION_STREAM)
    spread = 0.1 + 0.1 * np.linalg.norm(x - x.mean(axis=0), axis=1)
    means = clean[:, None, :] + spread[:, None, None] * pred_rng.normal(size=(m + l, cfg.mc_samples, cfg.target_count))
    variances = (sigma ** 2 + 0.01)[:, None, None] * pred_rng.uniform(0.5, 1.5, size=means.shape)
    samples = np.stack([means, variances], axis=-1)

    features_name = PATHS.holdout_features if holdout else PATHS.features
    write_tensor(x, out / features_name)
    strata = _strata(y[:, 0])
    entries = []
    for i, rid in enumerate(_ids("h" if holdout else "t", m + l)):
        rel = f"{PATHS.predictions_dir}/{rid}.uqt"
        write_tensor(samples[i], out / rel)
        entries.append(instance_entry(rid, int(groups[i]), y[i].tolist(), rel, stratum=strata[i]))
    write_manifest(
        out / (PATHS.holdout_manifest if holdout else PATHS.manifest), "regression", entries,
        target_names=[f"target_{k}" for k in range(cfg.target_count)],
        features_path=features_name,
    )
    return {"m": m, "l": l}


def gen_regression(cfg: SynthConfig, out_dir: PathLike) -> Path:
    """
    Targets are a fixed linear map of the features plus per-group Gaussian
    noise; the map is recorded so an exact-fit oracle can be checked.
    """

    out = Path(out_dir)
    counts = {"train": _write_regression_part(cfg, out, holdout=False)}
    if cfg.holdout_per_group:
        counts["holdout"] = _write_regression_part(cfg, out, holdout=True)
    weights, bias = regression_parameters(cfg)
    witness = {"weights": weights.tolist(), "bias": bias.tolist()}
    write_json(_meta(cfg, witness, counts), out / PATHS.synth_meta)
    logger.info("generated regression set in %s: %s", out, counts)
    return out / PATHS.manifest


GENERATORS = {
    "classification": gen_classification,
    "segmentation": gen_segmentation,
    "regression": gen_regression,
}


def generate(cfg: SynthConfig, out_dir: PathLike) -> Path:
    return GENERATORS[cfg.task](cfg, out_dir)
