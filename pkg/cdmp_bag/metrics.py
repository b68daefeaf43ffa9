"""Bag state metrics from a marker cloud: hull volume, opening area, elongation."""

import logging
from dataclasses import dataclass, field

import numpy as np

from cdmp_bag.exceptions import (
    AlphaRuleError,
    CdmpError,
    DegenerateHullError,
    ElongationUndefinedError,
    MetricsStageError,
)
from cdmp_bag.filters import FilterConfig, MarkerCloud, filter_markers, rim_points
from cdmp_bag.geometry import alpha_shape, convex_hull_2d, convex_hull_3d_volume, pca_2d

DEFAULT_K_ALPHA = 1.0
DEFAULT_B_ALPHA = 0.12


@dataclass(frozen=True)
class AlphaRule:
    """alpha = k_alpha * hull_area + b_alpha.

    Args:
        k_alpha (float): Slope, 1/m.
        b_alpha (float): Offset, m.
        area_range (tuple): Hull areas (m^2) over which alpha must stay positive.
    """

    k_alpha: float = DEFAULT_K_ALPHA
    b_alpha: float = DEFAULT_B_ALPHA
    area_range: tuple = (0.0, 0.25)

    def __post_init__(self):
        for area in self.area_range:
            if not self.alpha(area) > 0:
                raise AlphaRuleError(self.alpha(area))

    def alpha(self, hull_area: float) -> float:
        return self.k_alpha * hull_area + self.b_alpha


def elongation(rim_xy) -> float:
    """Direction-aware PCA axis ratio of the rim's 2D hull vertices.

    Returns:
        float: y-directed axis length over x-directed axis length; below 1
        when the opening is stretched along x.

    Raises:
        ElongationUndefinedError: The rim is collinear or its PCA degenerate.
    """
    try:
        hull = convex_hull_2d(rim_xy)
    except DegenerateHullError as e:
        raise ElongationUndefinedError("Rim points are collinear") from e
    pca = pca_2d(hull.vertices)
    if pca.degenerate or pca.lambda1 <= 0 or pca.lambda2 <= 0:
        raise ElongationUndefinedError(
            f"Degenerate rim PCA: lambda1={pca.lambda1:.6g}, lambda2={pca.lambda2:.6g}"
        )
    if abs(pca.v1[0]) > abs(pca.v2[0]):
        return float(np.sqrt(pca.lambda2 / pca.lambda1))
    return float(np.sqrt(pca.lambda1 / pca.lambda2))


def opening_area(rim_xy, rule: AlphaRule = AlphaRule()) -> float:
    """Alpha-shape area of the rim with alpha scaled by the rim hull area.

    Raises:
        AlphaRuleError: The rule yields a non-positive alpha for this rim.
    """
    hull_area = convex_hull_2d(rim_xy).area
    alpha = rule.alpha(hull_area)
    if not alpha > 0:
        raise AlphaRuleError(alpha)
    return alpha_shape(rim_xy, alpha).area


@dataclass(frozen=True)
class BagReference:
    """Volume (m^3) and opening area (m^2) of a successful opening"""

    volume_ref: float
    area_ref: float

    def __post_init__(self):
        assert self.volume_ref > 0, f"volume_ref must be positive, got {self.volume_ref}"
        assert self.area_ref > 0, f"area_ref must be positive, got {self.area_ref}"

    @classmethod
    def from_cloud(
        cls,
        cloud: MarkerCloud,
        rule: AlphaRule = AlphaRule(),
        filter_config: FilterConfig = FilterConfig(),
    ) -> "BagReference":
        volume, area, _, _, _ = _measure(cloud, rule, filter_config)
        return cls(volume_ref=volume, area_ref=area)


@dataclass(frozen=True)
class BagMetricsReport:
    volume: float
    area: float
    elongation: float
    delta_elongation: float
    volume_ratio: float
    area_ratio: float
    hull_area: float = None
    flags: tuple = field(default=())

    def meets(self, area_target: float, volume_target: float) -> bool:
        return self.area_ratio >= area_target and self.volume_ratio >= volume_target

    def as_dict(self) -> dict:
        return dict(
            volume=self.volume,
            area=self.area,
            elongation=self.elongation,
            delta_elongation=self.delta_elongation,
            volume_ratio=self.volume_ratio,
            area_ratio=self.area_ratio,
            hull_area=self.hull_area,
            flags=list(self.flags),
        )


def _stage(name: str, operation, *args):
    try:
        return operation(*args)
    except CdmpError as e:
        logging.error(f"Metrics stage '{name}' failed: {e}")
        raise MetricsStageError(name, e) from e


def _measure(cloud: MarkerCloud, rule: AlphaRule, filter_config: FilterConfig):
    filtered = _stage("filter", filter_markers, cloud, filter_config)
    rim = _stage("rim", rim_points, filtered, filter_config)
    rim_xy = rim[:, :2]
    volume = _stage("volume", convex_hull_3d_volume, filtered.points)
    hull_area = _stage("area", lambda points: convex_hull_2d(points).area, rim_xy)
    area = _stage("area", opening_area, rim_xy, rule)
    value = _stage("elongation", elongation, rim_xy)
    return volume, area, value, hull_area, filtered.flags


def evaluate(
    cloud: MarkerCloud,
    rule: AlphaRule,
    reference: BagReference,
    filter_config: FilterConfig = FilterConfig(),
) -> BagMetricsReport:
    """Volume, opening area and elongation of a cloud, relative to a reference.

    Args:
        cloud (MarkerCloud): Raw markers.
        rule (AlphaRule): Alpha scaling for the opening area.
        reference (BagReference): Values of a successful opening.
        filter_config (FilterConfig): Outlier and rim thresholds.

    Returns:
        BagMetricsReport: Metrics, ratios and flags.

    Raises:
        MetricsStageError: A stage failed; ``stage`` names it.
    """
    volume, area, value, hull_area, flags = _measure(cloud, rule, filter_config)
    return BagMetricsReport(
        volume=volume,
        area=area,
        elongation=value,
        delta_elongation=abs(1.0 - value),
        volume_ratio=volume / reference.volume_ref,
        area_ratio=area / reference.area_ref,
        hull_area=hull_area,
        flags=flags,
    )
