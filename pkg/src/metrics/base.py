"""
Shared metric value type and helpers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.utils.errors import LengthMismatch


# Metrics where a lower value is better; the sweep flips the "EM improved"
# direction for these.
ERROR_LIKE = frozenset({"rmse", "mae", "ftp", "ftn"})

GROUP_ALL = "all"


@dataclass(frozen=True)
class MetricValue:
    name: str
    scope: str
    group: str
    value: Optional[float]
    n_retained: int

    @property
    def defined(self) -> bool:
        return self.value is not None


def metric_value(name: str, value: Optional[float], n_retained: int,
                 scope: str = "overall", group: str = GROUP_ALL) -> MetricValue:
    if value is not None:
        value = float(value)
    return MetricValue(name=name, scope=scope, group=group, value=value, n_retained=int(n_retained))


def retained_mask(retained: Optional[np.ndarray], n: int) -> np.ndarray:
    if retained is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(retained, dtype=bool)
    if mask.shape != (n,):
        raise LengthMismatch(f"retained mask has shape {mask.shape}, expected ({n},)")
    return mask


def check_lengths(*arrays: np.ndarray) -> int:
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1:
        raise LengthMismatch(f"inputs have different lengths: {sorted(lengths)}")
    return lengths.pop()
