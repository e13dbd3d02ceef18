"""
Static SVG line charts for fairness curves.

x axis: 100 - tau, so moving right means filtering more uncertain
predictions. Left axis: EM for D0, D1 and all. Right axis: the fairness
gap. Retained counts are drawn as faint traces scaled to the plot height.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

from src.config.settings import EVAL_SETTINGS
from src.evaluation.sweep import FairnessCurve
from src.metrics.base import GROUP_ALL
from src.utils.errors import TooFewPoints
from src.utils.io import PathLike, write_text


SERIES_COLORS = {
    "D0": "#1f77b4",
    "D1": "#d62728",
    GROUP_ALL: "#2ca02c",
    "FG": "#111111",
}
COUNT_COLORS = {"D0": "#aec7e8", "D1": "#f4b6b6"}

TICKS = 5


def _axis_range(values: Sequence[Optional[float]]) -> Tuple[float, float]:
    defined = [v for v in values if v is not None]
    if not defined:
        return 0.0, 1.0
    lo, hi = min(defined), max(defined)
    if hi == lo:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    return lo, hi


@dataclass(frozen=True)
class SvgViewport:
    """
    Maps data coordinates to pixels. Both y axes share the plot rectangle;
    each has its own data range.
    """

    width: int = EVAL_SETTINGS.svg_width
    height: int = EVAL_SETTINGS.svg_height
    margin_left: int = 70
    margin_right: int = 70
    margin_top: int = 40
    margin_bottom: int = 60
    left_range: Tuple[float, float] = (0.0, 1.0)
    right_range: Tuple[float, float] = (0.0, 1.0)

    @classmethod
    def for_curve(cls, curve: FairnessCurve) -> "SvgViewport":
        em_values = [v.value for v in curve.em_d0 + curve.em_d1 + curve.em_all]
        lo, hi = _axis_range(curve.fg)
        return cls(left_range=_axis_range(em_values), right_range=(min(0.0, lo), hi))

    @property
    def plot_width(self) -> int:
        return self.width - self.margin_left - self.margin_right

    @property
    def plot_height(self) -> int:
        return self.height - self.margin_top - self.margin_bottom

    def x(self, tau: float) -> float:
        return self.margin_left + (100.0 - tau) / 100.0 * self.plot_width

    def _y(self, value: float, lo: float, hi: float) -> float:
        return self.margin_top + (hi - value) / (hi - lo) * self.plot_height

    def y_left(self, value: float) -> float:
        return self._y(value, *self.left_range)

    def y_right(self, value: float) -> float:
        return self._y(value, *self.right_range)


def _segments(taus: Sequence[float], values: Sequence[Optional[float]]) -> List[List[Tuple[float, float]]]:
    """Split a series into runs of consecutive defined points."""
    runs: List[List[Tuple[float, float]]] = []
    current: List[Tuple[float, float]] = []
    for tau, value in zip(taus, values):
        if value is None:
            if current:
                runs.append(current)
            current = []
        else:
            current.append((float(tau), float(value)))
    if current:
        runs.append(current)
    return runs


def _polyline(points: Sequence[Tuple[float, float]], color: str, series: str,
              dashed: bool = False, width: float = 2.0) -> str:
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    dash = ' stroke-dasharray="6,4"' if dashed else ""
    return (f'<polyline data-series="{series}" points="{coords}" fill="none" '
            f'stroke="{color}" stroke-width="{width}"{dash}/>')


def _text(x: float, y: float, label: str, anchor: str = "middle", size: int = 12,
          rotate: Optional[float] = None) -> str:
    transform = f' transform="rotate({rotate:.0f} {x:.2f} {y:.2f})"' if rotate is not None else ""
    return (f'<text x="{x:.2f}" y="{y:.2f}" font-family="sans-serif" font-size="{size}" '
            f'text-anchor="{anchor}" fill="#333"{transform}>{escape(label)}</text>')


def _tick_values(lo: float, hi: float) -> List[float]:
    return [lo + (hi - lo) * i / (TICKS - 1) for i in range(TICKS)]


def render_svg(curve: FairnessCurve) -> str:
    if curve.defined_points() < 2:
        raise TooFewPoints(f"{curve.metric}/{curve.scope} has fewer than 2 defined points to plot")

    vp = SvgViewport.for_curve(curve)
    left, right = vp.margin_left, vp.width - vp.margin_right
    top, bottom = vp.margin_top, vp.height - vp.margin_bottom
    title = f"{curve.metric} ({curve.scope})"

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{vp.width}" height="{vp.height}" '
        f'viewBox="0 0 {vp.width} {vp.height}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
        _text(vp.width / 2, 24, title, size=14),
        f'<rect x="{left}" y="{top}" width="{vp.plot_width}" height="{vp.plot_height}" '
        f'fill="none" stroke="#999"/>',
    ]

    for i in range(6):
        gap = 20.0 * i
        x = vp.x(100.0 - gap)
        parts.append(f'<line x1="{x:.2f}" y1="{bottom}" x2="{x:.2f}" y2="{bottom + 5}" stroke="#999"/>')
        parts.append(_text(x, bottom + 20, f"{gap:g}"))
    for value in _tick_values(*vp.left_range):
        y = vp.y_left(value)
        parts.append(_text(left - 8, y + 4, f"{value:.3g}", anchor="end", size=11))
    for value in _tick_values(*vp.right_range):
        y = vp.y_right(value)
        parts.append(_text(right + 8, y + 4, f"{value:.3g}", anchor="start", size=11))

    parts.append(_text(vp.width / 2, vp.height - 18, "100 - uncertainty threshold"))
    parts.append(_text(18, vp.height / 2, curve.metric, rotate=-90))
    parts.append(_text(vp.width - 18, vp.height / 2, "Fairness Gap (FG)", rotate=90))

    # retained counts, scaled to the plot height
    peak = max(int(curve.n_retained_d0.max(initial=0)), int(curve.n_retained_d1.max(initial=0)), 1)
    for label, counts in (("D0", curve.n_retained_d0), ("D1", curve.n_retained_d1)):
        points = [(vp.x(float(t)), bottom - int(n) / peak * vp.plot_height) for t, n in zip(curve.taus, counts)]
        parts.append(_polyline(points, COUNT_COLORS[label], f"count-{label}", width=1.0))

    for label in ("D0", "D1", GROUP_ALL):
        values = [v.value for v in curve.series(label)]
        for run in _segments(curve.taus, values):
            parts.append(_polyline([(vp.x(t), vp.y_left(v)) for t, v in run], SERIES_COLORS[label], label))
    for run in _segments(curve.taus, curve.fg):
        parts.append(_polyline([(vp.x(t), vp.y_right(v)) for t, v in run], SERIES_COLORS["FG"], "FG", dashed=True))

    legend_y = top + 16
    for i, label in enumerate(("D0", "D1", GROUP_ALL, "FG")):
        x = left + 12 + i * 90
        parts.append(f'<line x1="{x}" y1="{legend_y}" x2="{x + 24}" y2="{legend_y}" '
                     f'stroke="{SERIES_COLORS[label]}" stroke-width="2"/>')
        parts.append(_text(x + 30, legend_y + 4, label, anchor="start", size=11))

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_svg(curve: FairnessCurve, path: PathLike) -> None:
    write_text(render_svg(curve), path)
