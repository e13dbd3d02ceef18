"""
Toy trainer
===========

Trains an ensemble of dropout MLPs with one of three strategies:

- baseline: plain mini-batch gradient descent on the mean loss
- balanced: the same, after per-(class, group) undersampling
- groupdro: per batch, group weights q are updated by exponentiated
  gradient and the step minimizes sum_g q_g * loss_g

and draws ensemble-dropout Monte-Carlo predictions (E members x S passes)
written as UQT1 dumps plus a manifest the evaluator reads directly.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from src.config.settings import PATHS, TrainConfig
from src.data.manifest import instance_entry, load_dataset, load_manifest, write_manifest
from src.data.model import GROUPS, Dataset, EvalManifest, TaskKind
from src.mitigation.strategies import GroupWeights, balanced_resample, groupdro_step, robust_loss
from src.mitigation.toy_model import (
    GAUSSIAN,
    PARAM_BLOCKS,
    SOFTMAX,
    ToyModel,
    dropout_mask,
    forward,
    init_model,
    per_sample_loss,
    predict_outputs,
    sgd_update,
    toy_gradients,
)
from src.utils.errors import DivergedLoss, ValidationError
from src.utils.io import PathLike, read_array, read_json, write_json, write_tensor
from src.utils.rng import make_rng


logger = logging.getLogger(__name__)

TRAIN_STREAM = 0
PREDICT_STREAM = 1


@dataclass
class Ensemble:
    members: List[ToyModel]
    config: TrainConfig
    group_weights: List[Optional[GroupWeights]] = field(default_factory=list)

    @property
    def head(self) -> str:
        return self.members[0].head


def _targets(dataset: Dataset) -> np.ndarray:
    return dataset.labels if dataset.task is TaskKind.CLASSIFICATION else dataset.targets


def _output_dim(dataset: Dataset) -> int:
    if dataset.task is TaskKind.CLASSIFICATION:
        return dataset.class_count
    return 2 * dataset.targets.shape[1]


def _group_losses(losses: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Mean loss per group within the batch; an absent group contributes 0."""
    out = np.zeros(len(GROUPS))
    for g in GROUPS:
        members = groups == g
        if members.any():
            out[g] = losses[members].mean()
    return out


def _groupdro_weights(q: GroupWeights, groups: np.ndarray) -> np.ndarray:
    counts = np.array([np.count_nonzero(groups == g) for g in GROUPS], dtype=np.float64)
    per_group = np.divide(q.q, counts, out=np.zeros_like(q.q), where=counts > 0)
    return per_group[groups]


def train_member(dataset: Dataset, config: TrainConfig, member: int):
    rng = make_rng(config.seed + member, TRAIN_STREAM)
    head = SOFTMAX if dataset.task is TaskKind.CLASSIFICATION else GAUSSIAN
    model = init_model(dataset.features.shape[1], config.hidden_width, _output_dim(dataset),
                       head, config.dropout_p, rng)
    y_all = _targets(dataset)
    n = len(dataset)
    q = GroupWeights.uniform() if config.strategy == "groupdro" else None

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for batch, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            x, y, groups = dataset.features[idx], y_all[idx], dataset.groups[idx]
            mask = dropout_mask((len(idx), config.hidden_width), config.dropout_p, rng)

            weights = None
            if q is not None:
                losses = per_sample_loss(model, forward(model, x, mask).out, y)
                group_losses = _group_losses(losses, groups)
                q = groupdro_step(q, group_losses, config.groupdro_step)
                weights = _groupdro_weights(q, groups)
                loss = robust_loss(q, group_losses)
            else:
                loss = float(per_sample_loss(model, forward(model, x, mask).out, y).mean())

            if not np.isfinite(loss):
                raise DivergedLoss(epoch, batch, member)
            model = sgd_update(model, toy_gradients(model, x, y, weights, mask), config.learning_rate)
            if not model.is_finite():
                raise DivergedLoss(epoch, batch, member)
        logger.debug("member %d epoch %d loss %.6f", member, epoch, loss)
    return model, q


def train_toy(dataset: Dataset, config: TrainConfig) -> Ensemble:
    if dataset.task is TaskKind.SEGMENTATION:
        raise ValidationError("the toy trainer supports classification and regression only")
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    if config.strategy == "balanced":
        dataset = balanced_resample(dataset, config.seed, by_stratum=config.balance_strata)

    members, weights = [], []
    for member in range(config.ensemble_size):
        model, q = train_member(dataset, config, member)
        members.append(model)
        weights.append(q)
        logger.info("  -> trained member %d/%d (%s)", member + 1, config.ensemble_size, config.strategy)
    return Ensemble(members, config, weights)


def mc_predict(ensemble: Ensemble, features: np.ndarray, config: Optional[TrainConfig] = None) -> np.ndarray:
    """
    Ensemble-dropout sampling: for each member, `dropout_samples` forward
    passes with dropout active. Returns [N x T x C] class probabilities or
    [N x T x K x 2] (mean, variance) with T = E * S.
    """

    config = config or ensemble.config
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != ensemble.members[0].input_dim:
        raise ValidationError(f"features must be [N x {ensemble.members[0].input_dim}], got {x.shape}")
    samples = []
    for member, model in enumerate(ensemble.members):
        rng = make_rng(config.seed + member, PREDICT_STREAM)
        for _ in range(config.dropout_samples):
            mask = dropout_mask((x.shape[0], model.hidden_width), model.dropout_p, rng)
            samples.append(predict_outputs(model, forward(model, x, mask).out))
    return np.stack(samples, axis=1)


# ----------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------


def _block_file(member: int, block: str) -> str:
    return f"member_{member}_{block}.uqt"


def save_ensemble(ensemble: Ensemble, out_dir: PathLike, meta: Dict) -> None:
    out_dir = Path(out_dir)
    for member, model in enumerate(ensemble.members):
        for block, array in model.params().items():
            write_tensor(np.ascontiguousarray(array, dtype=np.float64), out_dir / _block_file(member, block))
    payload = dict(meta)
    payload.update({
        "config": asdict(ensemble.config),
        "head": ensemble.head,
        "members": len(ensemble.members),
        "input_dim": ensemble.members[0].input_dim,
        "output_dim": ensemble.members[0].output_dim,
        "group_weights": [None if q is None else q.q.tolist() for q in ensemble.group_weights],
    })
    write_json(payload, out_dir / PATHS.model_meta)


def load_ensemble(model_dir: PathLike):
    model_dir = Path(model_dir)
    meta = read_json(model_dir / PATHS.model_meta)
    try:
        config = TrainConfig(**meta["config"])
        head, count = meta["head"], int(meta["members"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{model_dir / PATHS.model_meta} is not a toy model description: {exc}") from exc
    members = []
    for member in range(count):
        params = {block: np.array(read_array(model_dir / _block_file(member, block)), dtype=np.float64)
                  for block in PARAM_BLOCKS}
        members.append(ToyModel(head=head, dropout_p=config.dropout_p, **params))
    weights = [None if q is None else GroupWeights(np.asarray(q)) for q in meta.get("group_weights") or []]
    return Ensemble(members, config, weights), meta


def _rel(path: Path, start: Path) -> str:
    return os.path.relpath(Path(path).resolve(), Path(start).resolve())


def _slug(rid: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", rid)


def write_predictions(manifest: EvalManifest, samples: np.ndarray, out_dir: PathLike) -> Path:
    """
    One UQT1 dump per instance under `predictions/` and a manifest pointing
    at them, with truth, groups and schema copied from `manifest`.
    """

    out_dir = Path(out_dir)
    entries = []
    for record, stack in zip(manifest.instances, samples):
        rel = f"{PATHS.predictions_dir}/{_slug(record.id)}.uqt"
        write_tensor(np.ascontiguousarray(stack, dtype=np.float64), out_dir / rel)
        truth = record.truth if manifest.task is TaskKind.CLASSIFICATION else list(record.truth)
        entries.append(instance_entry(record.id, record.group, truth, rel, stratum=record.stratum))
    target = out_dir / PATHS.manifest
    write_manifest(
        target, manifest.task.value, entries,
        class_count=manifest.class_count,
        class_names=manifest.class_names,
        target_names=manifest.target_names,
        features_path=None if manifest.features_path is None else _rel(manifest.features_path, out_dir),
    )
    return target


# ----------------------------------------------------------------------
# Pipelines behind train-toy / predict-toy
# ----------------------------------------------------------------------


def _holdout_for(manifest_path: Path) -> Path:
    holdout = manifest_path.parent / PATHS.holdout_manifest
    return holdout if manifest_path.name == PATHS.manifest and holdout.is_file() else manifest_path


def run_train(manifest_path: PathLike, out_dir: PathLike, config: TrainConfig) -> Ensemble:
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)

    logger.info("[STEP 1] Loading training set %s", manifest_path)
    manifest = load_manifest(manifest_path, check_payloads=False)
    dataset = load_dataset(manifest)

    logger.info("[STEP 2] Training %d x %s members", config.ensemble_size, config.strategy)
    ensemble = train_toy(dataset, config)

    logger.info("[STEP 3] Saving ensemble to %s", out_dir)
    save_ensemble(ensemble, out_dir, {
        "task": manifest.task.value,
        "train_manifest": _rel(manifest_path, out_dir),
        "eval_manifest": _rel(_holdout_for(manifest_path), out_dir),
    })
    return ensemble


def run_predict(model_dir: PathLike, out_dir: PathLike, manifest_path: Optional[PathLike] = None) -> Path:
    model_dir = Path(model_dir)
    out_dir = Path(out_dir)

    logger.info("[STEP 1] Loading ensemble from %s", model_dir)
    ensemble, meta = load_ensemble(model_dir)
    if manifest_path is None:
        if not meta.get("eval_manifest"):
            raise ValidationError("model.json records no evaluation manifest; pass --manifest")
        manifest_path = model_dir / meta["eval_manifest"]

    logger.info("[STEP 2] Loading evaluation set %s", manifest_path)
    manifest = load_manifest(manifest_path, check_payloads=False)
    dataset = load_dataset(manifest)

    logger.info("[STEP 3] Drawing %d Monte-Carlo samples per instance", ensemble.config.mc_samples)
    samples = mc_predict(ensemble, dataset.features)

    logger.info("[STEP 4] Writing predictions to %s", out_dir)
    return write_predictions(manifest, samples, out_dir)
