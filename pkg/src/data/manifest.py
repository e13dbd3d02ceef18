"""
Manifest loading and validation.

A manifest is a UTF-8 JSON file:

    {
      "task": "classification" | "segmentation" | "regression",
      "class_count": C, "class_names": [...], "regions": [{"name", "labels"}],
      "target_names": [...], "measure": ..., "normalization": ...,
      "bound_max": optional, "features_path": optional,
      "instances": [{"id", "group", "truth", "prediction_path",
                     "uncertainty_path"?, "stratum"?}]
    }

Relative paths are resolved against the manifest's directory. Loading is
eager: every referenced file is opened and checked before the manifest is
returned.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from src.config.settings import EVAL_SETTINGS
from src.data.model import (
    BRATS_REGIONS,
    Dataset,
    EvalManifest,
    InstanceRecord,
    McPredictions,
    Measure,
    Normalization,
    RegionDef,
    TaskKind,
)
from src.utils.errors import ParseError, ValidationError
from src.utils.io import PathLike, read_array, read_json, write_json
from src.utils.quality_checks import check_instance_table, check_probabilities, check_variances


logger = logging.getLogger(__name__)

_LEGAL_MEASURES = {
    TaskKind.CLASSIFICATION: {Measure.ENTROPY, Measure.SAMPLE_VAR},
    TaskKind.SEGMENTATION: {Measure.ENTROPY, Measure.SAMPLE_VAR, Measure.PRECOMPUTED},
    TaskKind.REGRESSION: {Measure.TOTAL_VAR, Measure.SAMPLE_VAR},
}


def check_measure(task: TaskKind, measure: Measure) -> None:
    if measure not in _LEGAL_MEASURES[task]:
        raise ValidationError(f"measure {measure.value} is not supported for {task.value}")


def _enum(cls, value: Any, key: str):
    if value is None:
        return None
    try:
        return cls(value)
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ValidationError(f"{key} must be one of {{{choices}}}, got {value!r}") from None


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _name_list(payload: Mapping, key: str) -> tuple:
    raw = payload.get(key)
    if raw is None:
        return ()
    if not isinstance(raw, list) or not all(isinstance(v, str) and v for v in raw):
        raise ValidationError(f"{key} must be a list of non-empty strings")
    if len(set(raw)) != len(raw):
        raise ValidationError(f"{key} must not repeat a name")
    return tuple(raw)


def _resolve(base: Path, value: Any, key: str, instance_id: Optional[str] = None) -> Path:
    if not isinstance(value, str) or not value:
        raise ValidationError(f"{key} must be a non-empty path string", instance_id)
    path = Path(value)
    return path if path.is_absolute() else base / path


def _require_file(path: Path, key: str, instance_id: Optional[str]) -> None:
    if not path.is_file():
        raise ValidationError(f"{key} {path} does not exist", instance_id)


def _parse_regions(raw: Any, class_count: int) -> tuple:
    if raw is None or raw == []:
        regions = BRATS_REGIONS if class_count == 4 else ()
    else:
        if not isinstance(raw, list):
            raise ValidationError("regions must be a list")
        regions = []
        for entry in raw:
            if not isinstance(entry, Mapping) or "name" not in entry or "labels" not in entry:
                raise ValidationError("each region needs 'name' and 'labels'")
            name, raw_labels = entry["name"], entry["labels"]
            if not isinstance(name, str) or not name:
                raise ValidationError("region name must be a non-empty string")
            if not isinstance(raw_labels, list) or not all(_is_int(v) for v in raw_labels):
                raise ValidationError(f"region {name} labels must be a list of integers")
            regions.append(RegionDef(name, tuple(sorted(set(raw_labels)))))
        regions = tuple(regions)
    if not regions:
        raise ValidationError("segmentation manifests need at least one region")
    for region in regions:
        if not region.labels:
            raise ValidationError(f"region {region.name} has no labels")
        if any(lbl < 0 or lbl >= class_count for lbl in region.labels):
            raise ValidationError(f"region {region.name} labels must lie in 0..{class_count - 1}")
    return regions


def _parse_truth(task: TaskKind, raw: Any, base: Path, class_count: Optional[int],
                 target_count: int, instance_id: str):
    if task is TaskKind.CLASSIFICATION:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ValidationError("classification truth must be an integer class index", instance_id)
        if raw < 0 or raw >= class_count:
            raise ValidationError(f"class index {raw} out of range 0..{class_count - 1}", instance_id)
        return raw
    if task is TaskKind.SEGMENTATION:
        path = _resolve(base, raw, "truth", instance_id)
        _require_file(path, "truth", instance_id)
        return path
    if not isinstance(raw, list) or len(raw) != target_count:
        raise ValidationError(f"regression truth must be a list of {target_count} numbers", instance_id)
    values = []
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValidationError("regression truth values must be finite numbers", instance_id)
        values.append(float(v))
    return tuple(values)


def load_predictions(manifest: EvalManifest, record: InstanceRecord,
                     tolerance: float = EVAL_SETTINGS.prob_tolerance) -> McPredictions:
    """
    Load and validate the prediction dump for one instance.
    """

    rid = record.id
    task = manifest.task

    if record.uncertainty_path is not None:
        mean = read_array(record.prediction_path)
        raw_u = read_array(record.uncertainty_path)
        c = manifest.class_count
        if mean.ndim != 4 or mean.shape[0] != c:
            raise ValidationError(f"precomputed mean must be [C x P x Q x S] with C={c}, got {mean.shape}", rid)
        if raw_u.shape != mean.shape[1:]:
            raise ValidationError(f"uncertainty volume {raw_u.shape} does not match {mean.shape[1:]}", rid)
        check_probabilities(mean, axis=0, tolerance=tolerance, instance_id=rid)
        if not np.all(np.isfinite(raw_u)) or raw_u.min() < 0:
            raise ValidationError("raw uncertainty must be finite and >= 0", rid)
        return McPredictions(task, mean=mean, raw_uncertainty=raw_u)

    samples = read_array(record.prediction_path)
    if samples.shape[0] < 2:
        raise ValidationError(f"need T >= 2 Monte-Carlo samples, got {samples.shape[0]}", rid)

    if task is TaskKind.CLASSIFICATION:
        if samples.ndim != 2 or samples.shape[1] != manifest.class_count:
            raise ValidationError(
                f"classification prediction must be [T x {manifest.class_count}], got {samples.shape}", rid
            )
        check_probabilities(samples, axis=1, tolerance=tolerance, instance_id=rid)
    elif task is TaskKind.SEGMENTATION:
        if samples.ndim != 5 or samples.shape[1] != manifest.class_count:
            raise ValidationError(
                f"segmentation prediction must be [T x {manifest.class_count} x P x Q x S], got {samples.shape}", rid
            )
        check_probabilities(samples, axis=1, tolerance=tolerance, instance_id=rid)
    else:
        k = manifest.target_count
        if samples.ndim != 3 or samples.shape[1] != k or samples.shape[2] != 2:
            raise ValidationError(f"regression prediction must be [T x {k} x 2], got {samples.shape}", rid)
        if not np.all(np.isfinite(samples[..., 0])):
            raise ValidationError("predicted means contain non-finite values", rid)
        check_variances(samples[..., 1], instance_id=rid)
    return McPredictions(task, samples=samples)


def load_label_map(manifest: EvalManifest, record: InstanceRecord) -> np.ndarray:
    labels = read_array(record.truth)
    if labels.ndim != 3:
        raise ValidationError(f"label map must be [P x Q x S], got {labels.shape}", record.id)
    if labels.dtype.kind not in "iu":
        raise ValidationError("label map must hold integer class indices", record.id)
    if labels.min() < 0 or labels.max() >= manifest.class_count:
        raise ValidationError(f"label map values must lie in 0..{manifest.class_count - 1}", record.id)
    return labels


def _check_payloads(manifest: EvalManifest) -> None:
    for record in manifest.instances:
        mc = load_predictions(manifest, record)
        if manifest.task is TaskKind.SEGMENTATION:
            labels = load_label_map(manifest, record)
            grid = mc.mean.shape[1:] if mc.precomputed else mc.samples.shape[2:]
            if labels.shape != tuple(grid):
                raise ValidationError(f"label map {labels.shape} does not match prediction grid {grid}", record.id)
        logger.debug("validated %s", record.id)


def parse_manifest(payload: Any, base: Path, source: Optional[Path] = None) -> EvalManifest:
    if not isinstance(payload, Mapping):
        raise ParseError("manifest must be a JSON object")
    if "task" not in payload or "instances" not in payload:
        raise ParseError("manifest needs 'task' and 'instances'")

    task = _enum(TaskKind, payload["task"], "task")
    class_count = payload.get("class_count")
    class_names: Sequence[str] = _name_list(payload, "class_names")
    regions: tuple = ()
    target_names: Sequence[str] = _name_list(payload, "target_names")

    if task in (TaskKind.CLASSIFICATION, TaskKind.SEGMENTATION):
        if isinstance(class_count, bool) or not isinstance(class_count, int) or class_count < 1:
            raise ValidationError("class_count must be a positive integer")
        if not class_names:
            class_names = tuple(f"class_{c}" for c in range(class_count))
        if len(class_names) != class_count:
            raise ValidationError(f"class_names has {len(class_names)} entries, class_count is {class_count}")
        if task is TaskKind.SEGMENTATION:
            regions = _parse_regions(payload.get("regions"), class_count)
    else:
        class_count = None
        if not target_names:
            raise ValidationError("regression manifests need target_names")

    measure = _enum(Measure, payload.get("measure"), "measure")
    normalization = _enum(Normalization, payload.get("normalization"), "normalization")
    bound_max = payload.get("bound_max")
    if bound_max is not None and not (
        isinstance(bound_max, (int, float)) and not isinstance(bound_max, bool)
        and math.isfinite(bound_max) and bound_max > 0
    ):
        raise ValidationError("bound_max must be a positive number")

    raw_instances = payload["instances"]
    if not isinstance(raw_instances, list):
        raise ParseError("instances must be a list")

    records: List[InstanceRecord] = []
    for idx, entry in enumerate(raw_instances):
        if not isinstance(entry, Mapping):
            raise ParseError(f"instance #{idx} is not an object")
        for key in ("id", "group", "truth", "prediction_path"):
            if key not in entry:
                raise ValidationError(f"missing key {key!r}", str(entry.get("id", f"#{idx}")))
        rid = str(entry["id"])
        group = entry["group"]
        if isinstance(group, bool) or not isinstance(group, int):
            raise ValidationError(f"group must be 0 or 1, got {group!r}", rid)
        truth = _parse_truth(task, entry["truth"], base, class_count, len(target_names), rid)
        pred_path = _resolve(base, entry["prediction_path"], "prediction_path", rid)
        _require_file(pred_path, "prediction_path", rid)
        unc_path = None
        if entry.get("uncertainty_path") is not None:
            if task is not TaskKind.SEGMENTATION:
                raise ValidationError("uncertainty_path is only valid for segmentation", rid)
            unc_path = _resolve(base, entry["uncertainty_path"], "uncertainty_path", rid)
            _require_file(unc_path, "uncertainty_path", rid)
        stratum = entry.get("stratum")
        records.append(InstanceRecord(
            id=rid, group=group, truth=truth, prediction_path=pred_path,
            uncertainty_path=unc_path, stratum=None if stratum is None else str(stratum),
        ))

    table = pd.DataFrame({"id": [r.id for r in records], "group": [r.group for r in records]})
    check_instance_table(table)

    precomputed = [r.uncertainty_path is not None for r in records]
    if any(precomputed) and not all(precomputed):
        raise ValidationError("precomputed and full segmentation instances cannot be mixed")

    features_path = None
    if payload.get("features_path") is not None:
        features_path = _resolve(base, payload["features_path"], "features_path")
        _require_file(features_path, "features_path", None)

    manifest = EvalManifest(
        task=task,
        instances=tuple(records),
        class_count=class_count,
        class_names=tuple(class_names),
        regions=regions,
        target_names=tuple(target_names),
        measure=measure,
        normalization=normalization,
        bound_max=None if bound_max is None else float(bound_max),
        features_path=features_path,
        source=source,
    )
    if measure is not None and manifest.precomputed and measure is not Measure.PRECOMPUTED:
        raise ValidationError("precomputed segmentation carries its own uncertainty; drop 'measure'")
    check_measure(task, manifest.resolved_measure())
    return manifest


def load_manifest(path: PathLike, check_payloads: bool = True) -> EvalManifest:
    """
    Load and fully validate a manifest, including every prediction dump and
    label map it references.
    """

    path = Path(path)
    manifest = parse_manifest(read_json(path), base=path.parent, source=path)
    if check_payloads:
        _check_payloads(manifest)
    logger.info(
        "loaded %s manifest %s: N=%d (M=%d, L=%d)",
        manifest.task.value, path, manifest.n, manifest.m, manifest.l,
    )
    return manifest


def load_dataset(manifest: EvalManifest) -> Dataset:
    """
    Assemble the feature table the toy trainer consumes.
    """

    if manifest.task is TaskKind.SEGMENTATION:
        raise ValidationError("the toy trainer supports classification and regression only")
    if manifest.features_path is None:
        raise ValidationError("manifest has no features_path; the toy trainer needs input features")
    features = np.asarray(read_array(manifest.features_path), dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != manifest.n:
        raise ValidationError(f"features must be [N x D] with N={manifest.n}, got {features.shape}")

    ids = [r.id for r in manifest.instances]
    groups = manifest.groups
    if manifest.task is TaskKind.CLASSIFICATION:
        labels = np.array([r.truth for r in manifest.instances], dtype=np.int64)
        return Dataset(ids, features, groups, labels=labels, task=manifest.task,
                       class_count=manifest.class_count, class_names=manifest.class_names)
    targets = np.array([r.truth for r in manifest.instances], dtype=np.float64)
    strata = None
    if all(r.stratum is not None for r in manifest.instances):
        strata = np.array([r.stratum for r in manifest.instances], dtype=object)
    return Dataset(ids, features, groups, targets=targets, task=manifest.task, strata=strata)


def instance_entry(rid: str, group: int, truth: Any, prediction_path: str,
                   uncertainty_path: Optional[str] = None, stratum: Optional[str] = None) -> Dict[str, Any]:
    entry: Dict[str, Any] = {
        "id": rid,
        "group": int(group),
        "truth": truth,
        "prediction_path": prediction_path,
    }
    if uncertainty_path is not None:
        entry["uncertainty_path"] = uncertainty_path
    if stratum is not None:
        entry["stratum"] = stratum
    return entry


def write_manifest(path: PathLike, task: str, instances: List[Dict[str, Any]], **schema: Any) -> None:
    payload: Dict[str, Any] = {
        "task": task,
        "class_count": schema.get("class_count"),
        "class_names": list(schema.get("class_names") or []),
        "regions": [
            {"name": r.name, "labels": list(r.labels)} if isinstance(r, RegionDef) else r
            for r in schema.get("regions") or []
        ],
        "target_names": list(schema.get("target_names") or []),
        "measure": schema.get("measure"),
        "normalization": schema.get("normalization"),
        "instances": instances,
    }
    for key in ("bound_max", "features_path"):
        if schema.get(key) is not None:
            payload[key] = schema[key]
    write_json(payload, path)
