import math

import numpy as np
import pytest

from cdmp_bag.exceptions import AlphaRuleError, ElongationUndefinedError, MetricsStageError
from cdmp_bag.filters import MarkerCloud
from cdmp_bag.geometry import convex_hull_2d
from cdmp_bag.metrics import AlphaRule, BagReference, elongation, evaluate, opening_area

from .conftest import bag_cloud


def ellipse(a: float, b: float, count: int = 360):
    theta = np.linspace(0, 2 * np.pi, count, endpoint=False)
    return np.column_stack([a * np.cos(theta), b * np.sin(theta)])


def test_elongation_of_circle():
    assert elongation(ellipse(0.15, 0.15)) == pytest.approx(1.0, abs=1e-6)


def test_elongation_of_ellipse_along_x():
    assert elongation(ellipse(2.0, 1.0)) == pytest.approx(0.5, abs=1e-3)


def test_elongation_of_ellipse_along_y():
    assert elongation(ellipse(1.0, 2.0)) == pytest.approx(2.0, abs=1e-3)


def test_elongation_of_collinear_rim():
    with pytest.raises(ElongationUndefinedError):
        elongation([[0, 0], [1, 0], [2, 0]])


def test_round_rim_area_equals_hull():
    rim = ellipse(0.15, 0.15, 24)
    assert opening_area(rim) == pytest.approx(convex_hull_2d(rim).area, abs=1e-9)


def test_crescent_rim_area_below_hull():
    theta = np.linspace(0, np.pi, 40)
    outer = np.column_stack([0.15 * np.cos(theta), 0.15 * np.sin(theta)])
    inner = np.column_stack([0.13 * np.cos(theta), 0.13 * np.sin(theta)])
    rim = np.vstack([outer, inner])
    assert opening_area(rim, AlphaRule(0.0, 0.02)) < 0.5 * convex_hull_2d(rim).area


def test_occluded_rim_underestimates_area():
    rim = ellipse(0.15, 0.15, 48)
    theta = np.linspace(0, 2 * np.pi, 48, endpoint=False)
    visible = rim[theta >= np.pi / 2]
    assert opening_area(visible) < opening_area(rim)


def test_misconfigured_alpha_rule():
    with pytest.raises(AlphaRuleError):
        AlphaRule(k_alpha=-1.0, b_alpha=0.1)


def test_report_against_itself():
    cloud = bag_cloud()
    report = evaluate(cloud, AlphaRule(), BagReference.from_cloud(cloud))
    assert report.volume_ratio == 1.0
    assert report.area_ratio == 1.0
    assert report.elongation == pytest.approx(1.0, abs=1e-9)
    assert report.delta_elongation == pytest.approx(0.0, abs=1e-9)
    assert report.meets(0.6, 0.7)


def test_scaled_cloud_ratios():
    cloud = bag_cloud(0.2, 0.1)
    wide = AlphaRule(0.0, 10.0)
    reference = BagReference.from_cloud(cloud, wide)
    report = evaluate(cloud.transformed(scale=0.5), wide, reference)
    full = evaluate(cloud, wide, reference)
    assert report.volume_ratio == pytest.approx(0.125, rel=1e-9)
    assert report.area_ratio == pytest.approx(0.25, rel=1e-9)
    assert report.elongation == pytest.approx(full.elongation, abs=1e-9)
    assert not report.meets(0.6, 0.7)


def test_rigid_motion_invariance():
    cloud = bag_cloud(0.2, 0.1)
    wide = AlphaRule(0.0, 10.0)
    reference = BagReference.from_cloud(cloud, wide)
    base = evaluate(cloud, wide, reference)
    half_turn = np.diag([-1.0, -1.0, 1.0])
    moved = evaluate(cloud.transformed(rotation=half_turn, translation=[0.3, -0.2, 0.1]), wide, reference)
    assert moved.volume == pytest.approx(base.volume, rel=1e-9)
    assert moved.area == pytest.approx(base.area, rel=1e-9)
    assert moved.elongation == pytest.approx(base.elongation, abs=1e-9)
    quarter_turn = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    turned = evaluate(cloud.transformed(rotation=quarter_turn), wide, reference)
    assert turned.elongation == pytest.approx(1.0 / base.elongation, abs=1e-9)
    assert base.elongation == pytest.approx(0.5, abs=1e-9)


def test_pressed_flat_rim_has_small_area():
    cloud = bag_cloud()
    reference = BagReference.from_cloud(cloud)
    flat = np.array(cloud.points)
    rim = flat[:, 2] == 0.4
    flat[rim, 1] = np.sign(flat[rim, 1]) * 0.0005
    report = evaluate(MarkerCloud(points=flat, labels=cloud.labels), AlphaRule(), reference)
    assert report.area_ratio < 0.1


def test_stage_is_attributed():
    with pytest.raises(MetricsStageError) as error:
        evaluate(MarkerCloud(points=np.eye(3)), AlphaRule(), BagReference(1.0, 1.0))
    assert error.value.stage == "filter"


def test_volume_grows_with_added_points():
    cloud = bag_cloud()
    reference = BagReference.from_cloud(cloud)
    extra = MarkerCloud(
        points=np.vstack([cloud.points, [[0.0, 0.0, 0.45]]]),
        labels=cloud.labels + (cloud.labels[-1],),
    )
    assert evaluate(extra, AlphaRule(), reference).volume >= reference.volume_ref


def test_delta_elongation_is_distance_from_round():
    cloud = bag_cloud(0.2, 0.1)
    report = evaluate(cloud, AlphaRule(), BagReference.from_cloud(cloud))
    assert report.delta_elongation == pytest.approx(abs(1 - report.elongation))
    assert report.as_dict()["area_ratio"] == 1.0
    assert math.isfinite(report.as_dict()["hull_area"])
