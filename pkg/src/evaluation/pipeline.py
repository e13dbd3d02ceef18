"""
Evaluation pipeline
===================

Orchestrates one `evaluate` run:

- loads and validates the manifest (every prediction dump is checked)
- computes and normalizes uncertainty per instance (or per voxel)
- sweeps the threshold grid and builds one fairness curve per metric/scope
- writes curves.csv, summary.json and one SVG chart per plottable curve

Inputs are only read; everything is written under the output directory.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from src.config.settings import EVAL_SETTINGS, PATHS
from src.data.manifest import load_manifest
from src.data.model import Measure, Normalization
from src.evaluation.sweep import (
    BehaviorReport,
    FairnessCurve,
    curves_from_stats,
    desired_behavior_flags,
    prepare_stats,
    resolve_selectors,
    threshold_grid,
)
from src.report.export import emit_curves_csv, emit_summary_json
from src.report.svg_chart import emit_svg
from src.utils.errors import TooFewPoints
from src.utils.io import PathLike


logger = logging.getLogger(__name__)


@dataclass
class EvaluationResult:
    curves: List[FairnessCurve]
    behavior: Dict[Tuple[str, str], Optional[BehaviorReport]]
    out_dir: Path
    svg_files: List[Path]


def svg_file_name(curve: FairnessCurve) -> str:
    slug = re.sub(r"[^A-Za-z0-9._-]+", "_", f"{curve.metric}__{curve.scope}")
    return f"{slug}.svg"


def svg_file_names(curves: List[FairnessCurve]) -> Dict[Tuple[str, str], str]:
    """
    Chart file name per curve key. Scopes that slug to the same name get a
    numeric suffix in key order, so no chart overwrites another.
    """

    names: Dict[Tuple[str, str], str] = {}
    taken = set()
    for curve in sorted(curves, key=lambda c: c.key):
        name = svg_file_name(curve)
        stem, k = name[: -len(".svg")], 2
        while name in taken:
            name = f"{stem}__{k}.svg"
            k += 1
        taken.add(name)
        names[curve.key] = name
    return names


def collect_behavior(curves: List[FairnessCurve]) -> Dict[Tuple[str, str], Optional[BehaviorReport]]:
    behavior: Dict[Tuple[str, str], Optional[BehaviorReport]] = {}
    for curve in curves:
        try:
            behavior[curve.key] = desired_behavior_flags(curve)
        except TooFewPoints:
            logger.debug("%s/%s: too few defined points for behaviour flags", *curve.key)
            behavior[curve.key] = None
    return behavior


def run_evaluation(
    manifest_path: PathLike,
    out_dir: PathLike,
    tau_step: float = EVAL_SETTINGS.tau_step,
    measure: Optional[Measure] = None,
    normalization: Optional[Normalization] = None,
    threads: int = EVAL_SETTINGS.threads,
) -> EvaluationResult:
    out_dir = Path(out_dir)

    logger.info("[STEP 1] Loading manifest %s", manifest_path)
    grid = threshold_grid(tau_step)
    manifest = load_manifest(manifest_path)

    logger.info("[STEP 2] Computing uncertainty scores (threads=%d)", threads)
    stats = prepare_stats(manifest, measure, normalization, threads)

    logger.info("[STEP 3] Sweeping %d thresholds", len(grid))
    curves = curves_from_stats(manifest, stats, grid)
    behavior = collect_behavior(curves)
    for curve in curves:
        logger.debug("  -> %s/%s FG(tau=100)=%s", curve.metric, curve.scope, curve.fg[0])

    logger.info("[STEP 4] Writing reports to %s", out_dir)
    resolved_measure, resolved_norm = resolve_selectors(manifest, measure, normalization)
    meta = {
        "task": manifest.task.value,
        "n": manifest.n,
        "m": manifest.m,
        "l": manifest.l,
        "measure": resolved_measure.value,
        "normalization": resolved_norm.value,
        "tau_step": float(tau_step),
    }
    emit_curves_csv(curves, out_dir / PATHS.curves_csv)
    emit_summary_json(curves, behavior, out_dir / PATHS.summary_json, meta=meta)

    svg_files: List[Path] = []
    names = svg_file_names(curves)
    for curve in sorted(curves, key=lambda c: c.key):
        if curve.defined_points() < 2:
            logger.warning("skipping chart for %s/%s: fewer than 2 defined points", *curve.key)
            continue
        target = out_dir / names[curve.key]
        emit_svg(curve, target)
        svg_files.append(target)

    logger.info("[STEP 5] Done: %d curves, %d charts", len(curves), len(svg_files))
    return EvaluationResult(curves, behavior, out_dir, svg_files)
