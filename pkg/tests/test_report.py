import io
import json
import xml.etree.ElementTree as ET

import numpy as np
import pandas as pd
import pytest

from src.evaluation.pipeline import collect_behavior, svg_file_name, svg_file_names
from src.report.export import (
    CSV_COLUMNS,
    build_summary,
    curves_frame,
    emit_curves_csv,
    emit_summary_json,
    render_curves_csv,
)
from src.report.svg_chart import SvgViewport, render_svg
from src.utils.errors import TooFewPoints
from src.utils.io import dumps_canonical

from conftest import make_curve


SVG_NS = "{http://www.w3.org/2000/svg}"


def _polylines(svg_text, series):
    root = ET.fromstring(svg_text.encode("utf-8"))
    return [p for p in root.iter(f"{SVG_NS}polyline") if p.get("data-series") == series]


def _points(polyline):
    return [tuple(map(float, pair.split(","))) for pair in polyline.get("points").split()]


class TestCurvesCsv:
    def test_rows_and_header(self):
        curve = make_curve("accuracy", [0.8, 0.85, 0.9], [0.7, None, 0.88], counts=[10, 6, 2])
        lines = render_curves_csv([curve]).splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 1 + 3 * 4

    def test_undefined_values_are_empty_cells(self):
        curve = make_curve("accuracy", [0.8, 0.85], [0.7, None])
        frame = pd.read_csv(io.StringIO(render_curves_csv([curve])), keep_default_na=False, dtype=str)
        undefined = frame[(frame["tau"] == "0") & frame["series"].isin(["D1", "all", "FG"])]
        assert len(undefined) == 3
        assert (undefined["value"] == "").all()

    def test_sorted_by_tau_descending(self):
        curve = make_curve("rmse", [1.0, 0.9, 0.7], [1.2, 1.0, 0.8], taus=[100, 50, 0])
        taus = curves_frame([curve])["tau"].tolist()
        assert taus == sorted(taus, reverse=True)

    def test_values_survive_round_trip(self):
        rng = np.random.default_rng(0)
        em0, em1 = rng.uniform(size=6).tolist(), rng.uniform(size=6).tolist()
        curve = make_curve("accuracy", em0, em1)
        back = pd.read_csv(io.StringIO(render_curves_csv([curve])))
        d0 = back[back["series"] == "D0"].sort_values("tau", ascending=False)["value"].to_numpy()
        np.testing.assert_allclose(d0, em0, atol=1e-9)

    def test_counts_for_all_and_gap_rows(self):
        curve = make_curve("accuracy", [0.8], [0.7], taus=[100], counts=[5])
        frame = curves_frame([curve]).set_index("series")
        assert frame.loc["all", "n_retained"] == 10
        assert frame.loc["FG", "n_retained"] == 10

    def test_same_curves_same_bytes(self, tmp_path):
        curves = [make_curve("accuracy", [0.8, 0.9], [0.7, 0.75]), make_curve("mae", [0.3, 0.2], [0.4, 0.1])]
        emit_curves_csv(curves, tmp_path / "a.csv")
        emit_curves_csv(list(reversed(curves)), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestSummary:
    def test_anchor_is_top_threshold(self):
        curve = make_curve("accuracy", [0.9034, 0.95], [0.8699, 0.93])
        summary = build_summary([curve], collect_behavior([curve]), meta={"task": "classification"})
        anchor = summary["curves"][0]["anchor"]
        assert anchor["tau"] == 100.0
        assert anchor["FG"] == pytest.approx(0.0335, abs=1e-12)
        assert summary["tau_grid"] == {"count": 2, "max": 100.0, "min": 0.0}
        assert summary["curves"][0]["behavior"]["pairs"] == 1

    def test_missing_behavior_is_null(self):
        curve = make_curve("accuracy", [0.9, None], [0.8, 0.8])
        summary = build_summary([curve], collect_behavior([curve]))
        assert summary["curves"][0]["behavior"] is None

    def test_json_is_canonical(self, tmp_path):
        curves = [make_curve("mae", [0.3, 0.2], [0.4, 0.1]), make_curve("accuracy", [0.8, 0.9], [0.7, 0.75])]
        emit_summary_json(curves, collect_behavior(curves), tmp_path / "summary.json", meta={"n": 4})
        text = (tmp_path / "summary.json").read_text()
        payload = json.loads(text)
        assert text == dumps_canonical(payload)
        assert [c["metric"] for c in payload["curves"]] == ["accuracy", "mae"]


class TestSvgChart:
    def test_well_formed_with_all_series(self):
        curve = make_curve("accuracy", [0.8, 0.85, 0.9], [0.7, 0.8, 0.88], counts=[10, 8, 3])
        svg = render_svg(curve)
        for series in ("D0", "D1", "all", "FG", "count-D0", "count-D1"):
            assert len(_polylines(svg, series)) == 1
        assert _polylines(svg, "FG")[0].get("stroke-dasharray")

    def test_undefined_point_splits_the_line(self):
        curve = make_curve("accuracy", [0.8, 0.82, 0.83, 0.85, 0.9], [0.7, 0.72, None, 0.8, 0.88])
        svg = render_svg(curve)
        assert len(_polylines(svg, "D0")) == 1
        assert len(_polylines(svg, "D1")) == 2
        fg = _polylines(svg, "FG")
        assert [len(_points(p)) for p in fg] == [2, 2]

    def test_x_axis_runs_from_top_threshold(self):
        vp = SvgViewport()
        assert vp.x(100.0) == vp.margin_left
        assert vp.x(0.0) == vp.margin_left + vp.plot_width

    def test_constant_series_is_horizontal(self):
        curve = make_curve("accuracy", [0.5] * 4, [0.5] * 4)
        vp = SvgViewport.for_curve(curve)
        line = _polylines(render_svg(curve), "D0")[0]
        ys = {y for _, y in _points(line)}
        assert ys == {round(vp.y_left(0.5), 2)}

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            render_svg(make_curve("accuracy", [0.8, None], [0.7, 0.7]))

    def test_file_names_are_safe(self):
        curve = make_curve("rmse", [1.0, 0.9], [1.1, 1.0], scope="target:age/stratum:mid")
        assert svg_file_name(curve) == "rmse__target_age_stratum_mid.svg"

    def test_colliding_file_names_get_suffixes(self):
        curves = [
            make_curve("class_accuracy", [0.8, 0.7], [0.6, 0.5], scope="class:a/b"),
            make_curve("class_accuracy", [0.8, 0.7], [0.6, 0.5], scope="class:a b"),
            make_curve("accuracy", [0.8, 0.7], [0.6, 0.5]),
        ]
        names = svg_file_names(curves)
        assert len(set(names.values())) == 3
        assert names[("class_accuracy", "class:a b")] == "class_accuracy__class_a_b.svg"
        assert names[("class_accuracy", "class:a/b")] == "class_accuracy__class_a_b__2.svg"
        assert names[("accuracy", "overall")] == "accuracy__overall.svg"
