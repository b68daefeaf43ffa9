"""Two-stage bag opening: repeat the constrained fling, then refine the elongation."""

import logging
from dataclasses import dataclass, field, replace

from cdmp_bag.constraints import ConstrainedResult, trajectory_quality
from cdmp_bag.filters import FilterConfig
from cdmp_bag.metrics import AlphaRule, BagMetricsReport, BagReference, evaluate
from cdmp_bag.sim import (
    Action,
    BagSimConfig,
    BagSimState,
    apply_dynamic,
    apply_refinement,
    render_markers,
)


class Termination:
    DYNAMIC_BUDGET = "dynamic budget"
    TARGETS_MISSED = "targets missed"
    TARGETS_REACHED = "targets reached"
    ELONGATION_TARGET = "elongation target"
    ELONGATION_OPTIMAL = "elongation optimal"
    REVERSED = "reversed"
    ACTION_BUDGET = "action budget"


@dataclass(frozen=True)
class EpisodeConfig:
    """Targets and action budgets of one episode.

    Args:
        area_target (float): Opening area ratio to reach. Defaults to 0.6.
        volume_target (float): Volume ratio to reach. Defaults to 0.7.
        delta_e_target (float): |1 - E| at which refinement stops. Defaults to 0.2.
        max_dynamic (int): Dynamic action budget; 0 runs refinement only.
        max_total (int): Budget over every action.
        refinement (bool): Run the refinement stage. Defaults to True.
    """

    area_target: float = 0.6
    volume_target: float = 0.7
    delta_e_target: float = 0.2
    max_dynamic: int = 10
    max_total: int = 20
    refinement: bool = True

    def __post_init__(self):
        assert 0 < self.area_target <= 1, f"area_target must be in (0, 1], got {self.area_target}"
        assert 0 < self.volume_target <= 1, f"volume_target must be in (0, 1], got {self.volume_target}"
        assert self.delta_e_target > 0, "delta_e_target must be positive"
        assert self.max_dynamic >= 0, "max_dynamic must be non-negative"
        assert self.max_total > 0, "max_total must be positive"
        assert self.max_dynamic <= self.max_total, "max_dynamic exceeds max_total"

    def reached(self, report: BagMetricsReport) -> bool:
        return report.meets(self.area_target, self.volume_target)

    def fell_below(self, before: BagMetricsReport, after: BagMetricsReport) -> bool:
        """A ratio that met its target no longer does"""
        return (before.area_ratio >= self.area_target > after.area_ratio) or (
            before.volume_ratio >= self.volume_target > after.volume_ratio
        )


@dataclass(frozen=True)
class TraceRecord:
    index: int
    stage: str
    action: str
    report: BagMetricsReport
    crumple: float
    gripper_distance: float


@dataclass
class EpisodeTrace:
    records: list = field(default_factory=list)
    reached_targets: bool = False
    termination: str = None
    seed: int = None

    @property
    def final(self) -> BagMetricsReport:
        return self.records[-1].report

    @property
    def dynamic_actions(self) -> int:
        return sum(1 for record in self.records if record.action == Action.DYNAMIC.value)

    @property
    def refinement_actions(self) -> int:
        return sum(1 for record in self.records if record.stage == "refinement")

    @property
    def actions(self) -> int:
        return len(self.records) - 1

    def record(self, stage: str, action: str, state: BagSimState, report: BagMetricsReport):
        self.records.append(
            TraceRecord(
                index=len(self.records),
                stage=stage,
                action=action,
                report=report,
                crumple=state.crumple,
                gripper_distance=state.gripper_distance,
            )
        )


def refine_step(state: BagSimState, config: BagSimConfig, report: BagMetricsReport) -> Action:
    """Narrow an x-elongated opening, widen a y-elongated one, hold a round one"""
    if report.elongation < 1.0:
        return Action.NARROW
    if report.elongation > 1.0:
        return Action.WIDEN
    return Action.HOLD


def reference_for(
    config: BagSimConfig,
    rule: AlphaRule = AlphaRule(),
    filter_config: FilterConfig = FilterConfig(),
) -> BagReference:
    """Volume and area of the fully open round bag"""
    cloud = render_markers(BagSimState.reference(config), config)
    return BagReference.from_cloud(cloud, rule, filter_config)


def _quality(constrained) -> float:
    if isinstance(constrained, ConstrainedResult):
        return trajectory_quality(constrained)
    return float(constrained)


def run_episode(
    config: BagSimConfig,
    episode: EpisodeConfig,
    constrained,
    reference: BagReference,
    rule: AlphaRule = AlphaRule(),
    filter_config: FilterConfig = FilterConfig(),
) -> EpisodeTrace:
    """One episode from ``config.initial_crumple``.

    Args:
        config (BagSimConfig): Bag model.
        episode (EpisodeConfig): Targets and budgets.
        constrained (ConstrainedResult | float): Executed fling or its quality in [0, 1].
        reference (BagReference): Successful-opening reference values.
        rule (AlphaRule): Opening area alpha rule.
        filter_config (FilterConfig): Marker filter thresholds.

    Returns:
        EpisodeTrace: Every (action, metrics) pair, starting with the initial state.

    Raises:
        MetricsStageError: Metrics failed on a render.
    """
    quality = _quality(constrained)

    def measure(state):
        return evaluate(render_markers(state, config), rule, reference, filter_config)

    state = BagSimState.initial(config)
    report = measure(state)
    trace = EpisodeTrace(seed=config.seed)
    trace.record("initial", "none", state, report)

    while state.dynamic_count < episode.max_dynamic:
        state = apply_dynamic(state, config, quality)
        report = measure(state)
        trace.record("dynamic", Action.DYNAMIC.value, state, report)
        if episode.reached(report):
            break
    trace.reached_targets = episode.reached(report)
    logging.info(
        f"Seed {config.seed}: dynamic stage ended after {state.dynamic_count} actions, "
        f"area {report.area_ratio:.3f}, volume {report.volume_ratio:.3f}"
    )

    if not episode.refinement:
        trace.termination = Termination.TARGETS_REACHED if trace.reached_targets else Termination.DYNAMIC_BUDGET
        return trace
    if not trace.reached_targets and episode.max_dynamic > 0:
        trace.termination = Termination.TARGETS_MISSED
        return trace

    while True:
        if report.delta_elongation <= episode.delta_e_target:
            trace.termination = Termination.ELONGATION_TARGET
            break
        if trace.actions >= episode.max_total:
            trace.termination = Termination.ACTION_BUDGET
            break
        action = refine_step(state, config, report)
        if action is Action.HOLD:
            trace.termination = Termination.ELONGATION_OPTIMAL
            break
        moved = apply_refinement(state, config, action)
        moved_report = measure(moved)
        trace.record("refinement", action.value, moved, moved_report)
        if episode.fell_below(report, moved_report):
            logging.info(f"Seed {config.seed}: {action.value} broke a target; reversing")
            state = apply_refinement(moved, config, action.reverse)
            report = measure(state)
            trace.record("refinement", action.reverse.value, state, report)
            trace.termination = Termination.REVERSED
            break
        state, report = moved, moved_report

    trace.reached_targets = episode.reached(report)
    logging.info(f"Seed {config.seed}: episode terminated ({trace.termination}) after {trace.actions} actions")
    return trace


def run_batch(
    config: BagSimConfig,
    episode: EpisodeConfig,
    constrained,
    reference: BagReference,
    runs: int,
    rule: AlphaRule = AlphaRule(),
    filter_config: FilterConfig = FilterConfig(),
) -> list:
    """``runs`` episodes seeded config.seed, config.seed + 1, ..."""
    assert runs > 0, f"runs must be positive, got {runs}"
    return [
        run_episode(replace(config, seed=config.seed + index), episode, constrained, reference, rule, filter_config)
        for index in range(runs)
    ]
