"""
Configuration module for the uncertainty-fairness toolkit.

Defaults live in frozen dataclasses so every run is reproducible from the
command line flags alone. The only value read from the environment is the
log level (see `src.config.logging_config`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

from src.utils.errors import BadConfig


LOG_ENV_VAR = "UQFAIR_LOG"

STRATEGIES = ("baseline", "balanced", "groupdro")
TASKS = ("classification", "segmentation", "regression")


@dataclass(frozen=True)
class EvalSettings:
    tau_step: float = 1.0
    prob_tolerance: float = 1e-4
    mean_tolerance: float = 1e-6
    threads: int = 1
    csv_digits: int = 12
    svg_width: int = 800
    svg_height: int = 500


@dataclass(frozen=True)
class Paths:
    """
    File names used inside dataset, model, prediction and report directories.
    """

    manifest: str = "manifest.json"
    holdout_manifest: str = "holdout_manifest.json"
    features: str = "features.uqt"
    holdout_features: str = "holdout_features.uqt"
    synth_meta: str = "synth_meta.json"
    predictions_dir: str = "predictions"
    truth_dir: str = "truth"

    model_meta: str = "model.json"

    curves_csv: str = "curves.csv"
    summary_json: str = "summary.json"


@dataclass(frozen=True)
class TrainConfig:
    """
    Hyperparameters for the toy trainer.

    `ensemble_size * dropout_samples` is the number of Monte-Carlo samples
    emitted per instance (60 with the defaults).
    """

    strategy: str = "baseline"
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.1
    groupdro_step: float = 0.01
    ensemble_size: int = 3
    dropout_samples: int = 20
    hidden_width: int = 16
    dropout_p: float = 0.2
    seed: int = 0
    balance_strata: bool = False

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise BadConfig(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.ensemble_size < 1 or self.dropout_samples < 1:
            raise BadConfig("ensemble_size and dropout_samples must be >= 1")
        if self.epochs < 1 or self.batch_size < 1 or self.hidden_width < 1:
            raise BadConfig("epochs, batch_size and hidden_width must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise BadConfig(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise BadConfig("learning_rate must be a positive finite number")
        if not (self.groupdro_step > 0 and math.isfinite(self.groupdro_step)):
            raise BadConfig("groupdro_step must be a positive finite number")

    @property
    def mc_samples(self) -> int:
        return self.ensemble_size * self.dropout_samples


@dataclass(frozen=True)
class SynthConfig:
    """
    Knobs for the synthetic generators.

    `group_shift` and `noise_sigma` are (group 0, group 1) pairs. For
    classification the shift moves both class blobs of a group along the
    class-separating axis; for segmentation it shrinks the inner spheres of
    that group (fraction of the radius removed); for regression it offsets
    the features. `noise_sigma` is extra feature noise for classification,
    prediction noise around region borders for segmentation and target
    noise for regression.
    """

    task: str = "classification"
    n_per_group: Tuple[int, int] = (50, 50)
    class_count: int = 2
    target_count: int = 2
    feature_dim: int = 2
    group_shift: Tuple[float, float] = (0.0, 0.0)
    noise_sigma: Tuple[float, float] = (0.0, 0.0)
    volume_dims: Tuple[int, int, int] = (16, 16, 16)
    sphere_radii: Tuple[float, float, float] = (6.0, 4.0, 2.0)
    holdout_per_group: int = 0
    mc_samples: int = 60
    seed: int = 0

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise BadConfig(f"unknown task {self.task!r}")
        m, l = self.n_per_group
        if m < 1 or l < 1:
            raise BadConfig("both groups need at least one instance")
        if min(self.noise_sigma) < 0:
            raise BadConfig("noise_sigma must be >= 0")
        if self.holdout_per_group < 0:
            raise BadConfig("holdout_per_group must be >= 0")
        if self.mc_samples < 2:
            raise BadConfig("mc_samples must be >= 2")
        if self.task == "classification":
            if self.class_count < 2:
                raise BadConfig("classification needs at least 2 classes")
            if not 2 <= self.feature_dim <= 8:
                raise BadConfig("feature_dim must lie in [2, 8]")
        if self.task == "regression" and (self.target_count < 1 or self.feature_dim < 1):
            raise BadConfig("regression needs target_count >= 1 and feature_dim >= 1")
        if self.task == "segmentation":
            if any(d < 4 for d in self.volume_dims):
                raise BadConfig("volume dims must be >= 4 each")
            if any(d > 64 for d in self.volume_dims):
                raise BadConfig("volume dims are capped at 64 (desk scale)")
            radii = self.sphere_radii
            if any(r < 0 for r in radii) or not radii[0] >= radii[1] >= radii[2]:
                raise BadConfig("sphere radii must be non-negative and nested (WT >= TC >= ET)")

    @property
    def instance_count(self) -> int:
        return self.n_per_group[0] + self.n_per_group[1]


def default_bound_max(measure: str, class_count: Optional[int]) -> Optional[float]:
    """
    Natural upper bound of a measure, used by bound-mode normalization.
    """

    if measure == "entropy" and class_count:
        return math.log(class_count)
    if measure == "sample-var" and class_count:
        return 0.25
    return None


EVAL_SETTINGS = EvalSettings()
PATHS = Paths()
