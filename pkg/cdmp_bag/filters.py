import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from cdmp_bag.exceptions import InsufficientMarkersError, RimNotFoundError

MIN_MARKERS = 8
MIN_RIM_MARKERS = 3
MAD_TO_SIGMA = 1.4826


class Label(str, Enum):
    RIM = "rim"
    RIM_INNER = "rim_inner"
    BODY = "body"
    UNKNOWN = "unknown"


@dataclass(frozen=True, eq=False)
class MarkerCloud:
    """Labeled 3D marker positions in the robot frame, meters.

    Args:
        points (np.ndarray): Shape (N, 3).
        labels (tuple): One ``Label`` per point.
        flags (tuple): Notes left by processing stages.
    """

    points: np.ndarray
    labels: tuple = None
    flags: tuple = field(default=())

    def __post_init__(self):
        points = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise ValueError("Marker coordinates must be finite")
        points.setflags(write=False)
        labels = self.labels
        if labels is None:
            labels = (Label.UNKNOWN,) * points.shape[0]
        labels = tuple(Label(label) for label in labels)
        if len(labels) != points.shape[0]:
            raise ValueError(f"{len(labels)} labels for {points.shape[0]} points")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "flags", tuple(self.flags))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def labeled(self) -> bool:
        return any(label is not Label.UNKNOWN for label in self.labels)

    def subset(self, mask) -> "MarkerCloud":
        mask = np.asarray(mask, dtype=bool)
        return replace(
            self,
            points=self.points[mask],
            labels=tuple(label for label, keep in zip(self.labels, mask) if keep),
        )

    def with_flag(self, flag: str) -> "MarkerCloud":
        return replace(self, flags=self.flags + (flag,))

    def transformed(self, rotation=None, translation=None, scale: float = 1.0) -> "MarkerCloud":
        """Rigidly moved (and uniformly scaled) copy"""
        points = self.points * scale
        if rotation is not None:
            points = points @ np.asarray(rotation, dtype=float).T
        if translation is not None:
            points = points + np.asarray(translation, dtype=float)
        return replace(self, points=points)


@dataclass(frozen=True)
class FilterConfig:
    k_mad: float = 3.0
    max_removed_fraction: float = 0.2
    rim_band: float = 0.15

    def __post_init__(self):
        assert self.k_mad > 0, f"k_mad must be positive, got {self.k_mad}"
        assert (
            0 <= self.max_removed_fraction < 1
        ), f"max_removed_fraction must be in [0, 1), got {self.max_removed_fraction}"
        assert 0 < self.rim_band <= 1, f"rim_band must be in (0, 1], got {self.rim_band}"


def geometric_median(points: np.ndarray, tolerance: float = 1e-10, max_iters: int = 500) -> np.ndarray:
    """Weiszfeld iteration started from the centroid"""
    median = points.mean(axis=0)
    scale = max(1.0, float(np.max(np.abs(points))))
    for _ in range(max_iters):
        distance = np.maximum(np.linalg.norm(points - median, axis=1), 1e-12 * scale)
        weights = 1.0 / distance
        updated = weights @ points / weights.sum()
        if np.linalg.norm(updated - median) <= tolerance * scale:
            return updated
        median = updated
    return median


class MarkerFilter:
    """Base of the marker cloud filters"""

    key: str = None

    def __init__(self, config: FilterConfig = FilterConfig()):
        self.config = config

    def apply(self, cloud: MarkerCloud):
        raise NotImplementedError


class OutlierFilter(MarkerFilter):
    """Drops markers far from the geometric median of the cloud"""

    key: str = "outliers"

    def apply(self, cloud: MarkerCloud) -> MarkerCloud:
        if len(cloud) == 0:
            raise InsufficientMarkersError(0, MIN_MARKERS)
        median = geometric_median(cloud.points)
        distance = np.linalg.norm(cloud.points - median, axis=1)
        scale = max(1.0, float(np.max(np.abs(cloud.points))))
        if distance.max() <= 1e-12 * scale:
            logging.warning("All markers coincide; outlier filter skipped")
            filtered = cloud.with_flag("coincident markers")
        else:
            centre = np.median(distance)
            mad = np.median(np.abs(distance - centre))
            threshold = centre + self.config.k_mad * MAD_TO_SIGMA * mad
            outliers = distance > threshold
            cap = int(np.floor(self.config.max_removed_fraction * len(cloud)))
            if outliers.sum() > cap:
                farthest = np.argsort(-distance, kind="stable")[:cap]
                outliers = np.zeros(len(cloud), dtype=bool)
                outliers[farthest] = True
                logging.warning(f"Outlier filter capped at {cap} of {len(cloud)} markers")
                cloud = cloud.with_flag("outlier cap reached")
            if outliers.any():
                logging.info(f"Removed {int(outliers.sum())} outlier markers")
            filtered = cloud.subset(~outliers)
        if len(filtered) < MIN_MARKERS:
            raise InsufficientMarkersError(len(filtered), MIN_MARKERS)
        return filtered


class RimFilter(MarkerFilter):
    """Selects rim markers: by label when the cloud is labeled, else the top height band"""

    key: str = "rim"

    def apply(self, cloud: MarkerCloud) -> np.ndarray:
        if cloud.labeled:
            mask = np.array([label in (Label.RIM, Label.RIM_INNER) for label in cloud.labels], dtype=bool)
        else:
            z = cloud.points[:, 2] if len(cloud) else np.zeros(0)
            if z.size:
                top = z.max()
                mask = z >= top - self.config.rim_band * (top - z.min())
            else:
                mask = np.zeros(0, dtype=bool)
        if mask.sum() < MIN_RIM_MARKERS:
            raise RimNotFoundError(int(mask.sum()))
        return cloud.points[mask]


def filter_markers(cloud: MarkerCloud, config: FilterConfig = FilterConfig()) -> MarkerCloud:
    """Remove outlying markers, keeping labels.

    Args:
        cloud (MarkerCloud): Raw cloud.
        config (FilterConfig): Thresholds.

    Returns:
        MarkerCloud: Survivors, flagged when the removal cap engaged or the
        markers coincide.

    Raises:
        InsufficientMarkersError: Fewer than 8 markers remain.
    """
    return OutlierFilter(config).apply(cloud)


def rim_points(cloud: MarkerCloud, config: FilterConfig = FilterConfig()) -> np.ndarray:
    """Rim marker positions, shape (K, 3).

    Raises:
        RimNotFoundError: Fewer than 3 rim markers.
    """
    return RimFilter(config).apply(cloud)
