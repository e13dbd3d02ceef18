"""
Fairness mitigation strategies: balanced undersampling and GroupDRO
group reweighting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from src.data.model import GROUPS, Dataset, TaskKind
from src.utils.errors import EmptyCell, NonFiniteLoss, ValidationError
from src.utils.rng import make_rng


logger = logging.getLogger(__name__)

RESAMPLE_STREAM = 7


def _cells(dataset: Dataset, by_stratum: bool) -> Tuple[np.ndarray, List[str], str]:
    """Cell index per instance, cell names and the cell kind used in errors."""

    if dataset.task is TaskKind.CLASSIFICATION:
        names = list(dataset.class_names) or [str(c) for c in range(dataset.class_count)]
        return np.asarray(dataset.labels, dtype=np.int64), names, "class"
    if not by_stratum:
        return np.zeros(len(dataset), dtype=np.int64), ["all"], "class"
    if dataset.strata is None:
        raise ValidationError("stratum balancing needs a stratum on every regression instance")
    names, index = np.unique(np.asarray(dataset.strata, dtype=str), return_inverse=True)
    return index.astype(np.int64), [str(n) for n in names], "stratum"


def cell_counts(dataset: Dataset, by_stratum: bool = False) -> pd.DataFrame:
    """
    Instance counts per (class, group) cell. Regression has a single
    pseudo-class 0 unless `by_stratum` splits it into (stratum, group) cells.
    """

    cells, names, _ = _cells(dataset, by_stratum)
    frame = pd.DataFrame({"cls": cells, "group": dataset.groups})
    return (
        frame.groupby(["cls", "group"]).size()
        .unstack(fill_value=0)
        .reindex(index=range(len(names)), columns=list(GROUPS), fill_value=0)
    )


def balanced_resample(dataset: Dataset, seed: int, by_stratum: bool = False) -> Dataset:
    """
    Undersample so that, for every class, both groups keep
    min(n(c, 0), n(c, 1)) instances. The larger side is subsampled uniformly
    without replacement; the result is shuffled. Regression balances on
    group only, or on (stratum, group) cells when `by_stratum` is set.
    """

    rng = make_rng(seed, RESAMPLE_STREAM)
    cells, names, kind = _cells(dataset, by_stratum)
    counts = cell_counts(dataset, by_stratum)
    named = kind == "stratum" or (dataset.task is TaskKind.CLASSIFICATION and bool(dataset.class_names))

    selected = []
    for c in counts.index:
        for g in GROUPS:
            if counts.loc[c, g] == 0:
                raise EmptyCell(int(c), g, names[c] if named else None, kind=kind)
        keep = int(counts.loc[c].min())
        for g in GROUPS:
            members = np.flatnonzero((cells == c) & (dataset.groups == g))
            if len(members) > keep:
                members = np.sort(rng.choice(members, size=keep, replace=False))
            selected.append(members)
        logger.debug("%s %s: %s -> %d per group", kind, names[c], counts.loc[c].tolist(), keep)

    index = rng.permutation(np.concatenate(selected))
    logger.info("balanced resample: %d -> %d instances", len(dataset), len(index))
    return dataset.subset(index)


@dataclass(frozen=True)
class GroupWeights:
    q: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim != 1 or q.size == 0 or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
            raise ValidationError(f"group weights must lie on the simplex, got {q.tolist()}")
        object.__setattr__(self, "q", q)

    @classmethod
    def uniform(cls, groups: int = len(GROUPS)) -> "GroupWeights":
        return cls(np.full(groups, 1.0 / groups))


def groupdro_step(weights: GroupWeights, group_losses: Sequence[float], eta_q: float) -> GroupWeights:
    """
    Exponentiated-gradient update q'_g ∝ q_g exp(eta_q * loss_g), computed in
    log space. A zero weight stays zero.
    """

    losses = np.asarray(group_losses, dtype=np.float64)
    if losses.shape != weights.q.shape:
        raise ValidationError(f"expected {weights.q.size} group losses, got {losses.shape}")
    if not np.all(np.isfinite(losses)):
        raise NonFiniteLoss(f"group losses must be finite, got {losses.tolist()}")
    with np.errstate(divide="ignore"):
        logits = np.log(weights.q) + eta_q * losses
    q = np.exp(logits - logsumexp(logits))
    return GroupWeights(q / q.sum())


def robust_loss(weights: GroupWeights, group_losses: Sequence[float]) -> float:
    return float(np.dot(weights.q, np.asarray(group_losses, dtype=np.float64)))
