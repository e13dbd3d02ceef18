import math

import numpy as np
import pytest

from src.data.manifest import load_manifest
from src.data.model import Measure, Normalization
from src.evaluation.sweep import (
    desired_behavior_flags,
    fairness_gap,
    filter_retained,
    sweep_curves,
    threshold_grid,
)
from src.metrics.base import metric_value
from src.metrics.segmentation import confusion, dice, dice_from_counts, filtered_ratios, qubrats_score, region_mask
from src.uncertainty.measures import entropy, normalize
from src.utils.errors import BadBound, BadStep, ScopeMismatch, TooFewPoints, ValidationError

from conftest import make_curve, random_probs


def _by_key(curves):
    return {c.key: c for c in curves}


def _classification_set(rng, n=40, t=5, c=3):
    samples = random_probs(rng, (n, t, c), sharpness=1.5)
    truth = rng.integers(0, c, size=n)
    groups = np.array([i % 2 for i in range(n)])
    return samples, truth, groups


class TestThresholdGrid:
    def test_step_50(self):
        np.testing.assert_array_equal(threshold_grid(50), [100.0, 50.0, 0.0])

    def test_step_1_has_101_points(self):
        grid = threshold_grid(1)
        assert len(grid) == 101
        assert grid[0] == 100.0 and grid[-1] == 0.0
        assert np.all(np.diff(grid) < 0)

    @pytest.mark.parametrize("step", [7, 0, -5, 150, float("nan")])
    def test_bad_steps(self, step):
        with pytest.raises(BadStep):
            threshold_grid(step)


class TestFilterAndGap:
    def test_boundary_is_retained(self):
        np.testing.assert_array_equal(filter_retained(np.array([10.0, 50.0, 90.0]), 50.0), [True, True, False])

    def test_accepts_uncertainty_scores(self):
        scores = normalize(np.array([0.0, 1.0]), Normalization.MINMAX)
        np.testing.assert_array_equal(filter_retained(scores, 0.0), [True, False])

    @pytest.mark.parametrize("em0, em1, expected", [
        (90.34, 86.99, 3.35),
        (85.14, 70.33, 14.81),
        (78.74, 76.83, 1.91),
        (9.68, 8.18, 1.50),
    ])
    def test_gap_anchors(self, em0, em1, expected):
        gap = fairness_gap(metric_value("accuracy", em0, 10), metric_value("accuracy", em1, 10))
        assert gap == pytest.approx(expected, abs=1e-9)

    def test_gap_is_symmetric(self):
        a, b = metric_value("mae", 0.3, 4), metric_value("mae", 0.8, 2)
        assert fairness_gap(a, b) == fairness_gap(b, a)

    def test_undefined_side_gives_undefined_gap(self):
        assert fairness_gap(metric_value("dice", None, 0), metric_value("dice", 0.7, 5)) is None

    def test_scope_mismatch(self):
        with pytest.raises(ScopeMismatch):
            fairness_gap(metric_value("rmse", 1.0, 3, scope="target:a"), metric_value("rmse", 1.0, 3, scope="target:b"))
        with pytest.raises(ScopeMismatch):
            fairness_gap(metric_value("accuracy", 1.0, 3), metric_value("balanced_accuracy", 1.0, 3))


class TestClassificationSweep:
    def test_top_threshold_keeps_everything(self, classification_manifest):
        samples, truth, groups = _classification_set(np.random.default_rng(0))
        manifest = load_manifest(classification_manifest(samples, truth, groups))
        curve = _by_key(sweep_curves(manifest, grid=[100, 50, 0]))[("accuracy", "overall")]

        pred = samples.mean(axis=1).argmax(axis=1)
        for g, series in ((0, curve.em_d0), (1, curve.em_d1)):
            in_group = groups == g
            assert series[0].value == pytest.approx(np.mean(pred[in_group] == truth[in_group]))
        assert curve.n_retained_d0[0] == manifest.m
        assert curve.n_retained_d1[0] == manifest.l

    def test_matches_naive_oracle(self, classification_manifest):
        rng = np.random.default_rng(1)
        samples, truth, groups = _classification_set(rng, n=60)
        manifest = load_manifest(classification_manifest(samples, truth, groups))
        curve = _by_key(sweep_curves(manifest, grid=threshold_grid(5)))[("accuracy", "overall")]

        mean = samples.mean(axis=1)
        h = -np.sum(np.where(mean > 0, mean * np.log(mean), 0.0), axis=1)
        u = 100.0 * h / math.log(3)
        pred = mean.argmax(axis=1)
        for j, tau in enumerate(curve.taus):
            values = []
            for g in (0, 1):
                keep = (u <= tau) & (groups == g)
                values.append(None if not keep.any() else float(np.mean(pred[keep] == truth[keep])))
            for value, series in zip(values, (curve.em_d0, curve.em_d1)):
                if value is None:
                    assert series[j].value is None
                else:
                    assert series[j].value == pytest.approx(value, abs=1e-12)
            if None in values:
                assert curve.fg[j] is None
            else:
                assert curve.fg[j] == pytest.approx(abs(values[0] - values[1]), abs=1e-12)

    def test_counts_are_monotone(self, classification_manifest):
        samples, truth, groups = _classification_set(np.random.default_rng(2))
        manifest = load_manifest(classification_manifest(samples, truth, groups))
        for curve in sweep_curves(manifest, grid=threshold_grid(10)):
            assert np.all(np.diff(curve.n_retained_d0) <= 0)
            assert np.all(np.diff(curve.n_retained_d1) <= 0)

    def test_gap_symmetric_under_group_swap(self, classification_manifest):
        samples, truth, groups = _classification_set(np.random.default_rng(3))
        a = _by_key(sweep_curves(load_manifest(classification_manifest(samples, truth, groups, name="a.json")),
                                 grid=threshold_grid(10)))
        b = _by_key(sweep_curves(load_manifest(classification_manifest(samples, truth, 1 - groups, name="b.json")),
                                 grid=threshold_grid(10)))
        for key, curve in a.items():
            assert curve.fg == b[key].fg
            np.testing.assert_array_equal(curve.n_retained_d0, b[key].n_retained_d1)

    def test_curve_set_for_classification(self, classification_manifest):
        samples, truth, groups = _classification_set(np.random.default_rng(4))
        manifest = load_manifest(classification_manifest(samples, truth, groups, class_names=["a", "b", "c"]))
        keys = set(_by_key(sweep_curves(manifest, grid=[100, 0])))
        assert keys == {
            ("accuracy", "overall"), ("balanced_accuracy", "overall"), ("macro_auc", "overall"),
            ("class_accuracy", "class:a"), ("class_accuracy", "class:b"), ("class_accuracy", "class:c"),
        }

    def test_single_uncertain_member_makes_gap_undefined(self, classification_manifest):
        confident = np.tile([[0.98, 0.01, 0.01]], (4, 1))
        uniform = np.full((4, 3), 1.0 / 3.0)
        samples = np.stack([confident, confident, uniform])
        manifest = load_manifest(classification_manifest(samples, [0, 0, 0], [0, 0, 1]))
        curve = _by_key(sweep_curves(manifest, grid=[100, 50, 0]))[("accuracy", "overall")]
        assert curve.fg[0] is not None
        assert curve.em_d1[1].value is None
        assert curve.fg[1] is None
        assert curve.n_retained_d1[1] == 0

    def test_thread_count_does_not_change_curves(self, classification_manifest):
        samples, truth, groups = _classification_set(np.random.default_rng(5))
        manifest = load_manifest(classification_manifest(samples, truth, groups))
        one = sweep_curves(manifest, grid=threshold_grid(5), threads=1)
        many = sweep_curves(manifest, grid=threshold_grid(5), threads=6)
        for a, b in zip(one, many):
            assert a.key == b.key
            assert a.fg == b.fg
            assert [v.value for v in a.em_all] == [v.value for v in b.em_all]


class TestRegressionSweep:
    @staticmethod
    def _samples(rng, n=30, t=6, k=2):
        means = rng.normal(size=(n, t, k))
        variances = rng.uniform(0.05, 1.0, size=(n, t, k))
        return np.stack([means, variances], axis=-1)

    def test_curves_per_target_and_stratum(self, regression_manifest):
        rng = np.random.default_rng(6)
        samples = self._samples(rng)
        truths = rng.normal(size=(30, 2))
        groups = np.arange(30) % 2
        strata = ["low", "high", "mid"] * 10
        manifest = load_manifest(regression_manifest(samples, truths, groups, strata=strata))
        keys = set(_by_key(sweep_curves(manifest, grid=[100, 0])))
        assert ("rmse", "target:y0") in keys
        assert ("mae", "target:y1/stratum:mid") in keys
        assert len(keys) == 2 * 2 * 4

    def test_matches_naive_oracle(self, regression_manifest):
        rng = np.random.default_rng(7)
        samples = self._samples(rng, k=1)
        truths = rng.normal(size=(30, 1))
        groups = np.arange(30) % 2
        manifest = load_manifest(regression_manifest(samples, truths, groups))
        curve = _by_key(sweep_curves(manifest, grid=threshold_grid(10)))[("rmse", "target:y0")]

        mu = samples[..., 0, 0]
        total = mu.var(axis=1) + samples[..., 0, 1].mean(axis=1)
        u = 100.0 * (total - total.min()) / (total.max() - total.min())
        pred = mu.mean(axis=1)
        for j, tau in enumerate(curve.taus):
            for g, series in ((0, curve.em_d0), (1, curve.em_d1)):
                keep = (u <= tau) & (groups == g)
                if keep.any():
                    expected = np.sqrt(np.mean((pred[keep] - truths[keep, 0]) ** 2))
                    assert series[j].value == pytest.approx(expected, abs=1e-10)
                else:
                    assert series[j].value is None

    def test_rescaling_scales_error_gap(self, regression_manifest):
        rng = np.random.default_rng(8)
        samples = self._samples(rng, k=1)
        truths = rng.normal(size=(30, 1))
        groups = np.arange(30) % 2
        scaled = samples.copy()
        scaled[..., 0] *= 3.0
        scaled[..., 1] *= 9.0
        base = _by_key(sweep_curves(load_manifest(regression_manifest(samples, truths, groups, name="a.json")),
                                    grid=threshold_grid(10)))
        big = _by_key(sweep_curves(load_manifest(regression_manifest(scaled, 3.0 * truths, groups, name="b.json")),
                                   grid=threshold_grid(10)))
        key = ("rmse", "target:y0")
        np.testing.assert_array_equal(base[key].n_retained_d0, big[key].n_retained_d0)
        for small, large in zip(base[key].fg, big[key].fg):
            if small is None:
                assert large is None
            else:
                assert large == pytest.approx(3.0 * small, abs=1e-9)


class TestSegmentationSweep:
    def test_matches_naive_oracle(self, segmentation_manifest):
        rng = np.random.default_rng(9)
        n = 10
        samples = [random_probs(rng, (3, 4, 8, 8, 8), axis=1, sharpness=1.0) for _ in range(n)]
        labels = [rng.integers(0, 4, size=(8, 8, 8)) for _ in range(n)]
        groups = [i % 2 for i in range(n)]
        manifest = load_manifest(segmentation_manifest(samples, labels, groups))
        taus = threshold_grid(1)
        curves = _by_key(sweep_curves(manifest, grid=taus))

        means = [s.mean(axis=0) for s in samples]
        raw = [-np.sum(np.where(m > 0, m * np.log(m), 0.0), axis=0) for m in means]
        u = [np.minimum(100.0 * h / math.log(4), 100.0) for h in raw]
        preds = [m.argmax(axis=0) for m in means]

        for region in manifest.regions:
            scope = f"region:{region.name}"
            masks = [(region_mask(preds[i], region), region_mask(labels[i], region)) for i in range(n)]
            for label, members in (("D0", [i for i in range(n) if groups[i] == 0]),
                                   ("D1", [i for i in range(n) if groups[i] == 1]),
                                   ("all", list(range(n)))):
                dice_naive, ftp_naive, ftn_naive = [], [], []
                for tau in taus:
                    dices, ftps, ftns = [], [], []
                    for i in members:
                        p, t = masks[i]
                        kept = confusion(p, t, u[i] <= tau)
                        value = dice_from_counts(kept).value
                        if value is not None:
                            dices.append(value)
                        ftp, ftn = filtered_ratios(confusion(p, t), kept)
                        ftps.append(ftp)
                        ftns.append(ftn)
                    dice_naive.append(None if not dices else float(np.mean(dices)))
                    ftp_naive.append(float(np.mean(ftps)))
                    ftn_naive.append(float(np.mean(ftns)))

                for metric, naive in (("dice", dice_naive), ("ftp", ftp_naive), ("ftn", ftn_naive)):
                    series = curves[(metric, scope)].series(label)
                    for j, expected in enumerate(naive):
                        if expected is None:
                            assert series[j].value is None
                        else:
                            assert abs(series[j].value - expected) < 1e-10

                expected_score = qubrats_score(taus, dice_naive, ftp_naive, ftn_naive)
                recorded = curves[("dice", scope)].qubrats[label]
                if expected_score is None:
                    assert recorded is None
                else:
                    assert recorded == pytest.approx(expected_score, abs=1e-9)

    def test_retained_voxels_shrink_by_inclusion(self, segmentation_manifest):
        rng = np.random.default_rng(11)
        samples = [random_probs(rng, (3, 4, 6, 6, 6), axis=1, sharpness=1.0) for _ in range(4)]
        labels = [rng.integers(0, 4, size=(6, 6, 6)) for _ in range(4)]
        manifest = load_manifest(segmentation_manifest(samples, labels, [0, 1, 0, 1]))
        taus = threshold_grid(1)

        raw = np.stack([entropy(s.mean(axis=0), axis=0) for s in samples])
        scores = normalize(raw, Normalization.BOUND, math.log(4))
        previous = None
        for tau in taus:
            kept = filter_retained(scores, tau)
            if previous is not None:
                assert not np.any(kept & ~previous)
            previous = kept

        curves = sweep_curves(manifest, grid=taus)
        wt = _by_key(curves)[("dice", "region:WT")]
        for j, tau in enumerate(taus):
            kept = filter_retained(scores, tau)
            assert wt.n_retained_d0[j] == int(kept[0].sum() + kept[2].sum())
            assert wt.n_retained_d1[j] == int(kept[1].sum() + kept[3].sum())

    def test_qubrats_recorded_on_dice_curves(self, segmentation_manifest):
        rng = np.random.default_rng(10)
        samples = [random_probs(rng, (2, 4, 4, 4, 4), axis=1) for _ in range(2)]
        labels = [rng.integers(0, 4, size=(4, 4, 4)) for _ in range(2)]
        manifest = load_manifest(segmentation_manifest(samples, labels, [0, 1]))
        curves = _by_key(sweep_curves(manifest, grid=threshold_grid(25)))
        dice_wt = curves[("dice", "region:WT")]
        assert set(dice_wt.qubrats) == {"D0", "D1", "all"}
        for value in dice_wt.qubrats.values():
            assert value is None or 0.0 <= value <= 100.0
        assert curves[("ftp", "region:WT")].qubrats == {}


class TestPrecomputedSweep:
    @staticmethod
    def _volumes(seed, n=4):
        rng = np.random.default_rng(seed)
        means = [random_probs(rng, (4, 6, 6, 6), axis=0, sharpness=1.0) for _ in range(n)]
        uncertainty = [rng.uniform(0.0, 3.0, size=(6, 6, 6)) for _ in range(n)]
        labels = [rng.integers(0, 4, size=(6, 6, 6)) for _ in range(n)]
        return means, uncertainty, labels, [i % 2 for i in range(n)]

    def test_minmax_default_normalizes_all_voxels_jointly(self, precomputed_manifest):
        means, uncertainty, labels, groups = self._volumes(12)
        manifest = load_manifest(precomputed_manifest(means, uncertainty, labels, groups))
        taus = threshold_grid(10)
        curves = _by_key(sweep_curves(manifest, grid=taus))

        flat = np.concatenate([u.ravel() for u in uncertainty])
        lo, hi = flat.min(), flat.max()
        u = [100.0 * (v - lo) / (hi - lo) for v in uncertainty]
        preds = [m.argmax(axis=0) for m in means]
        for region in manifest.regions:
            curve = curves[("dice", f"region:{region.name}")]
            for j, tau in enumerate(taus):
                for g, series in ((0, curve.em_d0), (1, curve.em_d1)):
                    values = []
                    for i in (i for i in range(len(means)) if groups[i] == g):
                        value = dice(region_mask(preds[i], region), region_mask(labels[i], region), u[i] <= tau).value
                        if value is not None:
                            values.append(value)
                    if not values:
                        assert series[j].value is None
                    else:
                        assert series[j].value == pytest.approx(float(np.mean(values)), abs=1e-12)

    def test_bound_mode_needs_manifest_bound(self, precomputed_manifest):
        means, uncertainty, labels, groups = self._volumes(13)
        manifest = load_manifest(precomputed_manifest(means, uncertainty, labels, groups))
        with pytest.raises(BadBound):
            sweep_curves(manifest, grid=[100, 0], normalization=Normalization.BOUND)

    def test_bound_mode_with_manifest_bound(self, precomputed_manifest):
        means, uncertainty, labels, groups = self._volumes(14)
        manifest = load_manifest(precomputed_manifest(means, uncertainty, labels, groups,
                                                      normalization="bound", bound_max=2.0))
        taus = threshold_grid(25)
        curve = _by_key(sweep_curves(manifest, grid=taus))[("dice", "region:WT")]
        for j, tau in enumerate(taus):
            kept = [np.minimum(100.0 * u / 2.0, 100.0) <= tau for u in uncertainty]
            assert curve.n_retained_d0[j] == int(kept[0].sum() + kept[2].sum())
            assert curve.n_retained_d1[j] == int(kept[1].sum() + kept[3].sum())

    def test_measure_flag_rejected(self, precomputed_manifest):
        means, uncertainty, labels, groups = self._volumes(15)
        manifest = load_manifest(precomputed_manifest(means, uncertainty, labels, groups))
        with pytest.raises(ValidationError, match="precomputed"):
            sweep_curves(manifest, grid=[100, 0], measure=Measure.ENTROPY)


class TestDesiredBehavior:
    def test_improving_accuracy_curve(self):
        report = desired_behavior_flags(make_curve("accuracy", [0.80, 0.85, 0.90], [0.70, 0.80, 0.88]))
        assert report.fg_improved_fraction == 1.0
        assert report.em_improved_fraction == {"D0": 1.0, "D1": 1.0, "all": 1.0}
        assert [(p.tau_high, p.tau_low) for p in report.pairs] == [(100.0, 50.0), (50.0, 0.0)]

    def test_constant_curve_counts_as_improved(self):
        report = desired_behavior_flags(make_curve("accuracy", [0.7] * 4, [0.6] * 4))
        assert report.fg_improved_fraction == 1.0
        assert report.em_improved_fraction["D0"] == 1.0

    def test_rising_gap_is_flagged(self):
        report = desired_behavior_flags(make_curve("accuracy", [0.80, 0.835], [0.78, 0.80]))
        assert report.pairs[0].fg_improved is False
        assert report.fg_improved_fraction == 0.0

    def test_error_like_metrics_improve_downwards(self):
        report = desired_behavior_flags(make_curve("rmse", [1.0, 0.8], [1.2, 0.9]))
        assert report.em_improved_fraction["D0"] == 1.0
        worse = desired_behavior_flags(make_curve("rmse", [1.0, 1.3], [1.2, 1.4]))
        assert worse.em_improved_fraction["D0"] == 0.0

    def test_undefined_points_are_skipped(self):
        report = desired_behavior_flags(make_curve("accuracy", [0.7, None, 0.8], [0.6, 0.5, 0.75]))
        assert len(report.pairs) == 1
        assert (report.pairs[0].tau_high, report.pairs[0].tau_low) == (100.0, 0.0)

    def test_needs_two_defined_points(self):
        with pytest.raises(TooFewPoints):
            desired_behavior_flags(make_curve("accuracy", [0.7, None], [0.6, 0.6]))


def test_measure_override_reaches_uncertainty(classification_manifest):
    samples, truth, groups = _classification_set(np.random.default_rng(11))
    manifest = load_manifest(classification_manifest(samples, truth, groups))
    curves = sweep_curves(manifest, grid=[100, 50, 0], measure=Measure.SAMPLE_VAR)
    assert curves[0].n_retained_d0[0] == manifest.m
    # minmax puts the least uncertain instance at 0
    assert curves[0].n_retained_d0[-1] + curves[0].n_retained_d1[-1] >= 1
