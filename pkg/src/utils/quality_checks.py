"""
Data quality checks run at load time.

Evaluation runs are long, so every rule is checked eagerly and the first
violation is raised with the instance id and the rule that failed.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np
import pandas as pd

from src.data.model import GROUPS
from src.utils.errors import MissingGroup, NegativeVariance, ValidationError


def find_duplicate_keys(df: pd.DataFrame, key_column: str) -> pd.DataFrame:
    """
    Identify duplicate records based on a primary-key-like column.
    """

    counts = df.groupby(key_column, sort=True).size().rename("count").reset_index()
    return counts[counts["count"] > 1]


def compute_group_counts(df: pd.DataFrame, group_column: str = "group") -> Dict[int, int]:
    counts = df[group_column].value_counts()
    return {g: int(counts.get(g, 0)) for g in GROUPS}


def check_instance_table(df: pd.DataFrame) -> Dict[int, int]:
    """
    Check the manifest-level rules on an instance table with columns
    `id` and `group`; returns the per-group counts (M, L).
    """

    if len(df) < 2:
        raise ValidationError(f"an evaluation set needs N >= 2 instances, got {len(df)}")

    duplicates = find_duplicate_keys(df, "id")
    if not duplicates.empty:
        raise ValidationError("instance id is not unique", instance_id=str(duplicates["id"].iloc[0]))

    bad_groups = df[~df["group"].isin(GROUPS)]
    if not bad_groups.empty:
        row = bad_groups.iloc[0]
        raise ValidationError(f"group must be 0 or 1, got {row['group']!r}", instance_id=str(row["id"]))

    counts = compute_group_counts(df)
    for group in GROUPS:
        if counts[group] == 0:
            raise MissingGroup(group)
    if counts[0] + counts[1] != len(df):
        raise ValidationError("subgroup sizes do not add up to N")
    return counts


def check_probabilities(
    probs: np.ndarray,
    axis: int,
    tolerance: float,
    instance_id: Optional[str] = None,
) -> None:
    """
    Probabilities must lie in [0, 1] and sum to 1 along `axis` within `tolerance`.
    """

    if not np.all(np.isfinite(probs)):
        raise ValidationError("prediction contains non-finite values", instance_id)
    if probs.min() < -tolerance or probs.max() > 1.0 + tolerance:
        raise ValidationError("probabilities must lie in [0, 1]", instance_id)
    sums = probs.sum(axis=axis, dtype=np.float64)
    worst = float(np.max(np.abs(sums - 1.0)))
    if worst > tolerance:
        raise ValidationError(
            f"class probabilities sum to 1 +/- {worst:.3g}, tolerance is {tolerance:g}", instance_id
        )


def check_variances(variances: np.ndarray, instance_id: Optional[str] = None) -> None:
    if not np.all(np.isfinite(variances)):
        raise ValidationError("predicted variance contains non-finite values", instance_id)
    if np.any(variances < 0):
        raise NegativeVariance("predicted variance must be >= 0", instance_id)
