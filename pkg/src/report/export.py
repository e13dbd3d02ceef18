"""
Report export module for fairness curves: a long-format CSV with one row
per (metric, scope, tau, series) and a canonical JSON summary.
"""

from __future__ import annotations

import io
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.config.settings import EVAL_SETTINGS
from src.evaluation.sweep import BehaviorReport, FairnessCurve
from src.metrics.base import GROUP_ALL
from src.utils.errors import ValidationError
from src.utils.io import PathLike, write_json, write_text


CSV_COLUMNS = ["metric", "scope", "tau", "series", "value", "n_retained"]
SERIES = ("D0", "D1", GROUP_ALL, "FG")


def curves_frame(curves: Sequence[FairnessCurve]) -> pd.DataFrame:
    """
    Long-format table of every curve. Undefined values are NaN; rows are
    sorted by metric, scope, tau (descending) and series.
    """

    if not curves:
        raise ValidationError("no curves to export")
    rows = []
    for curve in curves:
        for i, tau in enumerate(curve.taus):
            n0 = int(curve.n_retained_d0[i])
            n1 = int(curve.n_retained_d1[i])
            counts = {"D0": n0, "D1": n1, GROUP_ALL: n0 + n1, "FG": n0 + n1}
            for series in SERIES:
                value = curve.fg[i] if series == "FG" else curve.series(series)[i].value
                rows.append((curve.metric, curve.scope, float(tau), series,
                             np.nan if value is None else float(value), counts[series]))
    frame = pd.DataFrame(rows, columns=CSV_COLUMNS)
    frame = frame.sort_values(
        ["metric", "scope", "tau", "series"],
        ascending=[True, True, False, True],
        kind="mergesort",
    )
    return frame.reset_index(drop=True)


def render_curves_csv(curves: Sequence[FairnessCurve], digits: int = EVAL_SETTINGS.csv_digits) -> str:
    buffer = io.StringIO()
    curves_frame(curves).to_csv(
        buffer,
        index=False,
        float_format=f"%.{digits}g",
        na_rep="",
        lineterminator="\n",
    )
    return buffer.getvalue()


def emit_curves_csv(curves: Sequence[FairnessCurve], path: PathLike) -> None:
    write_text(render_curves_csv(curves), path)


def _anchor_index(curve: FairnessCurve) -> int:
    return int(np.argmax(curve.taus))


def curve_summary(curve: FairnessCurve, report: Optional[BehaviorReport]) -> Dict[str, Any]:
    i = _anchor_index(curve)
    entry: Dict[str, Any] = {
        "metric": curve.metric,
        "scope": curve.scope,
        "error_like": curve.error_like,
        "anchor": {
            "tau": float(curve.taus[i]),
            "D0": curve.em_d0[i].value,
            "D1": curve.em_d1[i].value,
            GROUP_ALL: curve.em_all[i].value,
            "FG": curve.fg[i],
            "n_retained_D0": int(curve.n_retained_d0[i]),
            "n_retained_D1": int(curve.n_retained_d1[i]),
        },
        "defined_points": curve.defined_points(),
        "behavior": None,
    }
    if curve.qubrats:
        entry["qubrats"] = dict(curve.qubrats)
    if report is not None:
        entry["behavior"] = {
            "pairs": len(report.pairs),
            "fg_improved_fraction": report.fg_improved_fraction,
            "em_improved_fraction": dict(report.em_improved_fraction),
        }
    return entry


def build_summary(curves: Sequence[FairnessCurve],
                  behavior_flags: Mapping[Tuple[str, str], Optional[BehaviorReport]],
                  meta: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    if not curves:
        raise ValidationError("no curves to summarize")
    ordered = sorted(curves, key=lambda c: c.key)
    return {
        "meta": dict(meta or {}),
        "tau_grid": {
            "count": len(ordered[0].taus),
            "max": float(np.max(ordered[0].taus)),
            "min": float(np.min(ordered[0].taus)),
        },
        "curves": [curve_summary(c, behavior_flags.get(c.key)) for c in ordered],
    }


def emit_summary_json(curves: Sequence[FairnessCurve],
                      behavior_flags: Mapping[Tuple[str, str], Optional[BehaviorReport]],
                      path: PathLike, meta: Optional[Mapping[str, Any]] = None) -> None:
    write_json(build_summary(curves, behavior_flags, meta), path)
