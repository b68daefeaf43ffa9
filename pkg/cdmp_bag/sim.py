"""Synthetic bag: a crumple level and a gripper distance rendered as markers.

The rim is an ellipse with x semi-axis d/2 and y semi-axis
R (1 - 0.8c)^2 (2R / d), so the opening area depends on the crumple c only and
the elongation 4 R^2 (1 - 0.8c)^2 / d^2 is steered by the gripper distance d.
The body hangs below the rim as a tapered surface of depth depth (1 - 0.6c).
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from cdmp_bag.filters import Label, MarkerCloud

MICRONS = 1_000_000


class Action(str, Enum):
    DYNAMIC = "dynamic"
    WIDEN = "widen"
    NARROW = "narrow"
    HOLD = "hold"

    @property
    def reverse(self) -> "Action":
        """The action undoing this one; dynamic motions have none"""
        if self is Action.DYNAMIC:
            raise ValueError("Dynamic actions are irreversible")
        return {
            Action.WIDEN: Action.NARROW,
            Action.NARROW: Action.WIDEN,
            Action.HOLD: Action.HOLD,
        }[self]


@dataclass(frozen=True)
class BagSimConfig:
    """Bag model parameters. Lengths in meters.

    Args:
        rim_radius_nominal (float): Rim radius of the fully open bag.
        depth (float): Rim-to-bottom depth of the fully open bag.
        stiffness (float): 0 soft to 1 stiff; stiffer bags uncrumple less per fling.
        rim_markers, rim_inner_markers, body_markers (int): Marker counts.
        seed (int): Seeds the marker noise and the fling outcomes.
        d_min, d_max (float): Gripper distance clamps.
        step (float): Refinement step.
        uncrumple_gain (float): Fraction of crumple a perfect fling can remove.
        noise (float): Marker noise standard deviation.
        initial_crumple (float): Crumple of the starting state, 1 is the hard state.
        d_initial (float): Starting gripper distance; 2 R when omitted.
        reverse_at_limits (bool): Step the other way instead of clamping.
    """

    rim_radius_nominal: float = 0.15
    depth: float = 0.3
    stiffness: float = 0.0
    rim_markers: int = 24
    rim_inner_markers: int = 8
    body_markers: int = 48
    seed: int = 0
    d_min: float = 0.1
    d_max: float = 0.45
    step: float = 0.01
    uncrumple_gain: float = 0.5
    noise: float = 0.002
    initial_crumple: float = 1.0
    d_initial: float = None
    reverse_at_limits: bool = False

    def __post_init__(self):
        if self.d_initial is None:
            object.__setattr__(self, "d_initial", 2.0 * self.rim_radius_nominal)
        assert self.rim_radius_nominal > 0 and self.depth > 0, "Bag dimensions must be positive"
        assert 0 <= self.stiffness <= 1, f"stiffness must be in [0, 1], got {self.stiffness}"
        assert 0 < self.d_min < self.d_max, "0 < d_min < d_max required"
        assert self.d_min <= self.d_initial <= self.d_max, "d_initial outside [d_min, d_max]"
        assert self.step > 0, "step must be positive"
        assert 0 < self.uncrumple_gain < 1, "uncrumple_gain must be in (0, 1)"
        assert self.rim_markers >= 8 and self.body_markers >= 8, "At least 8 rim and body markers"
        assert self.rim_inner_markers >= 0, "rim_inner_markers must be non-negative"
        assert 0 <= self.initial_crumple <= 1, "initial_crumple must be in [0, 1]"
        assert self.noise >= 0, "noise must be non-negative"

    @classmethod
    def preset(cls, name: str, **overrides) -> "BagSimConfig":
        """One of the bags A-E; soft to stiff in the order A, C, E, D, B"""
        try:
            values = dict(BAG_PRESETS[name.upper()])
        except KeyError:
            raise ValueError(f"Unknown bag preset '{name}', expected one of {', '.join(BAG_PRESETS)}")
        values.update(overrides)
        return cls(**values)

    @property
    def effective_gain(self) -> float:
        return self.uncrumple_gain * (1.0 - 0.4 * self.stiffness)

    @property
    def step_um(self) -> int:
        return int(round(self.step * MICRONS))


BAG_PRESETS = {
    "A": dict(rim_radius_nominal=0.15, depth=0.30, stiffness=0.1),
    "B": dict(rim_radius_nominal=0.15, depth=0.28, stiffness=0.9),
    "C": dict(rim_radius_nominal=0.14, depth=0.30, stiffness=0.3),
    "D": dict(rim_radius_nominal=0.20, depth=0.40, stiffness=0.7, d_max=0.55),
    "E": dict(rim_radius_nominal=0.19, depth=0.38, stiffness=0.5, d_max=0.55),
}


@dataclass(frozen=True)
class BagSimState:
    """Crumple level, gripper distance in integer micrometres and the fling counter.

    ``history`` is informational and excluded from equality.
    """

    crumple: float
    gripper_um: int
    dynamic_count: int = 0
    history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        assert 0 <= self.crumple <= 1, f"crumple must be in [0, 1], got {self.crumple}"

    @property
    def gripper_distance(self) -> float:
        return self.gripper_um / MICRONS

    @classmethod
    def initial(cls, config: BagSimConfig) -> "BagSimState":
        return cls(
            crumple=config.initial_crumple,
            gripper_um=int(round(config.d_initial * MICRONS)),
        )

    @classmethod
    def reference(cls, config: BagSimConfig) -> "BagSimState":
        """Fully open bag with a round rim"""
        return cls(crumple=0.0, gripper_um=int(round(2.0 * config.rim_radius_nominal * MICRONS)))


def rim_semi_axes(config: BagSimConfig, crumple: float, distance: float):
    """(x, y) semi-axes of the noise-free rim"""
    R = config.rim_radius_nominal
    return 0.5 * distance, R * (1.0 - 0.8 * crumple) ** 2 * (2.0 * R / distance)


def model_elongation(config: BagSimConfig, crumple: float, distance: float) -> float:
    a, b = rim_semi_axes(config, crumple, distance)
    return b / a


def _template(config: BagSimConfig):
    """Marker angles, depth fractions, radial scales and labels"""
    angles, levels, scales, labels = [], [], [], []
    for k in range(config.rim_markers):
        angles.append(2 * np.pi * k / config.rim_markers)
        levels.append(0.0)
        scales.append(1.0)
        labels.append(Label.RIM)
    for k in range(config.rim_inner_markers):
        angles.append(2 * np.pi * (k + 0.5) / config.rim_inner_markers)
        levels.append(0.05)
        scales.append(0.9)
        labels.append(Label.RIM_INNER)
    rings = 4
    per_ring = int(np.ceil(config.body_markers / rings))
    placed = 0
    for ring in range(1, rings + 1):
        for k in range(per_ring):
            if placed == config.body_markers:
                break
            angles.append(2 * np.pi * (k + 0.5 * (ring % 2)) / per_ring)
            levels.append(ring / rings)
            scales.append(1.0 - 0.4 * ring / rings)
            labels.append(Label.BODY)
            placed += 1
    return np.array(angles), np.array(levels), np.array(scales), tuple(labels)


def render_markers(state: BagSimState, config: BagSimConfig) -> MarkerCloud:
    """Labeled marker cloud of the state.

    The noise pattern depends on ``config.seed`` only, so two states differ by
    the model geometry alone.
    """
    angles, levels, scales, labels = _template(config)
    a, b = rim_semi_axes(config, state.crumple, state.gripper_distance)
    depth = config.depth * (1.0 - 0.6 * state.crumple)
    points = np.column_stack(
        [
            scales * a * np.cos(angles),
            scales * b * np.sin(angles),
            config.depth - levels * depth,
        ]
    )
    noise = np.random.default_rng(config.seed).normal(0.0, config.noise, points.shape)
    return MarkerCloud(points=points + noise, labels=labels)


def apply_dynamic(state: BagSimState, config: BagSimConfig, trajectory_quality: float) -> BagSimState:
    """One fling: c' = c (1 - gain * quality * u), u ~ Uniform(0.6, 1).

    The draw is seeded by (seed, fling count) so episodes replay exactly.
    """
    if not 0 <= trajectory_quality <= 1:
        raise ValueError(f"trajectory_quality must be in [0, 1], got {trajectory_quality}")
    u = np.random.default_rng((config.seed, state.dynamic_count)).uniform(0.6, 1.0)
    crumple = state.crumple * (1.0 - config.effective_gain * trajectory_quality * u)
    logging.debug(f"Dynamic action {state.dynamic_count}: crumple {state.crumple:.4f} -> {crumple:.4f}")
    return replace(
        state,
        crumple=float(crumple),
        dynamic_count=state.dynamic_count + 1,
        history=state.history + (Action.DYNAMIC,),
    )


def apply_refinement(state: BagSimState, config: BagSimConfig, action: Action) -> BagSimState:
    """Widen or narrow the grippers by one step, clamped to [d_min, d_max]"""
    action = Action(action)
    if action is Action.HOLD:
        return state
    if action is Action.DYNAMIC:
        raise ValueError("apply_refinement takes widen or narrow")
    lo = int(round(config.d_min * MICRONS))
    hi = int(round(config.d_max * MICRONS))
    sign = 1 if action is Action.WIDEN else -1
    target = state.gripper_um + sign * config.step_um
    if not lo <= target <= hi:
        if config.reverse_at_limits:
            logging.warning(f"{action.value} past the gripper limits; stepping back instead")
            target = state.gripper_um - sign * config.step_um
        else:
            logging.warning(f"{action.value} clamped at the gripper limits")
        target = min(max(target, lo), hi)
    return replace(state, gripper_um=target, history=state.history + (action,))


def refinement_lipschitz(config: BagSimConfig, crumple: float) -> float:
    """Bound on the model elongation change of one refinement step.

    |dE/dd| = 8 R^2 (1 - 0.8c)^2 / d^3 is largest at d_min; area and volume of
    the model do not depend on d.
    """
    R = config.rim_radius_nominal
    slope = 8.0 * R**2 * (1.0 - 0.8 * crumple) ** 2 / config.d_min**3
    return slope * config.step
