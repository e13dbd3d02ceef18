"""
Data model for evaluation sets.

A manifest describes the test set (task, class or region schema, one record
per instance). Raw inputs never enter the system: each record points to the
Monte-Carlo prediction dump an upstream model wrote for that instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np


class TaskKind(str, Enum):
    CLASSIFICATION = "classification"
    SEGMENTATION = "segmentation"
    REGRESSION = "regression"


class Measure(str, Enum):
    ENTROPY = "entropy"
    SAMPLE_VAR = "sample-var"
    TOTAL_VAR = "total-var"
    PRECOMPUTED = "precomputed"


class Normalization(str, Enum):
    BOUND = "bound"
    MINMAX = "minmax"


GROUPS = (0, 1)


@dataclass(frozen=True)
class RegionDef:
    name: str
    labels: Tuple[int, ...]


# Label schema 0 background, 1 necrotic core, 2 edema, 3 enhancing.
BRATS_REGIONS = (
    RegionDef("WT", (1, 2, 3)),
    RegionDef("TC", (1, 3)),
    RegionDef("ET", (3,)),
)


Truth = Union[int, Path, Tuple[float, ...]]


@dataclass(frozen=True)
class InstanceRecord:
    id: str
    group: int
    truth: Truth
    prediction_path: Path
    uncertainty_path: Optional[Path] = None
    stratum: Optional[str] = None


@dataclass(frozen=True)
class EvalManifest:
    task: TaskKind
    instances: Tuple[InstanceRecord, ...]
    class_count: Optional[int] = None
    class_names: Tuple[str, ...] = ()
    regions: Tuple[RegionDef, ...] = ()
    target_names: Tuple[str, ...] = ()
    measure: Optional[Measure] = None
    normalization: Optional[Normalization] = None
    bound_max: Optional[float] = None
    features_path: Optional[Path] = None
    source: Optional[Path] = None

    @property
    def n(self) -> int:
        return len(self.instances)

    @property
    def m(self) -> int:
        """Size of subgroup D0."""
        return sum(1 for r in self.instances if r.group == 0)

    @property
    def l(self) -> int:
        """Size of subgroup D1."""
        return sum(1 for r in self.instances if r.group == 1)

    @property
    def groups(self) -> np.ndarray:
        return np.array([r.group for r in self.instances], dtype=np.int64)

    @property
    def target_count(self) -> int:
        return len(self.target_names)

    @property
    def precomputed(self) -> bool:
        return any(r.uncertainty_path is not None for r in self.instances)

    def resolved_measure(self) -> Measure:
        if self.precomputed:
            return Measure.PRECOMPUTED
        if self.measure is not None:
            return self.measure
        if self.task is TaskKind.REGRESSION:
            return Measure.TOTAL_VAR
        return Measure.ENTROPY

    def resolved_normalization(self) -> Normalization:
        if self.normalization is not None:
            return self.normalization
        if self.resolved_measure() is Measure.ENTROPY:
            return Normalization.BOUND
        return Normalization.MINMAX


@dataclass(frozen=True)
class McPredictions:
    """
    Monte-Carlo prediction stack for one instance.

    classification: `samples` is [T x C]
    segmentation (full): `samples` is [T x C x P x Q x S]
    segmentation (precomputed): `mean` is [C x P x Q x S], `raw_uncertainty` [P x Q x S]
    regression: `samples` is [T x K x 2] holding (mean, predicted variance)
    """

    task: TaskKind
    samples: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    raw_uncertainty: Optional[np.ndarray] = None

    @property
    def t(self) -> int:
        return 0 if self.samples is None else int(self.samples.shape[0])

    @property
    def precomputed(self) -> bool:
        return self.samples is None


@dataclass
class Dataset:
    """
    In-memory training/evaluation table used by the toy trainer: features,
    truth and group per instance, in manifest order.
    """

    ids: List[str]
    features: np.ndarray
    groups: np.ndarray
    labels: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None
    task: TaskKind = TaskKind.CLASSIFICATION
    class_count: int = 0
    class_names: Sequence[str] = field(default_factory=tuple)
    strata: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, index: np.ndarray) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            ids=[self.ids[i] for i in index],
            features=self.features[index],
            groups=self.groups[index],
            labels=None if self.labels is None else self.labels[index],
            targets=None if self.targets is None else self.targets[index],
            task=self.task,
            class_count=self.class_count,
            class_names=self.class_names,
            strata=None if self.strata is None else self.strata[index],
        )
