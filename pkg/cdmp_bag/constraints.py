"""Constrained reproduction of a fitted DMP under joint box limits.

Three methods:

* ``tau``: uniform slowdown, the smallest time-constant scale whose rollout
  respects every limit.
* ``tc``: temporal coupling, tau adapted online as velocities and predicted
  accelerations approach their limits.
* ``opt``: weights re-solved as one quadratic program per DOF, using the
  affine map from weights to sampled position, velocity and acceleration.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from cdmp_bag import qp
from cdmp_bag.dmp import (
    DEFAULT_DT,
    DmpModel,
    Flow,
    RolloutConfig,
    Trajectory,
    integrate,
    rk4_step,
    rollout,
)
from cdmp_bag.exceptions import (
    CdmpError,
    IntegrationDivergenceError,
    OptInfeasibleError,
    OptNotConvergedError,
    TuningExhaustedError,
    UnsatisfiableBySlowdownError,
)

DEFAULT_MARGIN = 0.98
DEFAULT_TOLERANCE = 1e-6
TAU_SEARCH_TOLERANCE = 1e-3
TAU_SEARCH_MAX_DOUBLINGS = 30
BARRIER_ONSET = 0.9
TIKHONOV = 1e-8
QUANTITIES = ("position", "velocity", "acceleration")


class Method(str, Enum):
    TAU = "tau"
    TC = "tc"
    OPT = "opt"


class ObjectiveMode(str, Enum):
    POSITION = "position"
    VELOCITY = "velocity"


def _limit_array(values, size: int = None) -> np.ndarray:
    array = np.atleast_1d(np.array(values, dtype=float))
    if size is not None and array.size == 1 and size > 1:
        array = np.full(size, array[0])
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class KinematicLimits:
    """Per-DOF box limits.

    Args:
        q_lo, q_hi (np.ndarray): Position bounds, rad.
        v_lo, v_hi (np.ndarray): Velocity bounds, rad/s. Must bracket zero.
        a_lo, a_hi (np.ndarray): Acceleration bounds, rad/s^2. Must bracket zero.
        margin (float): Fraction of each range that is usable.
    """

    q_lo: np.ndarray
    q_hi: np.ndarray
    v_lo: np.ndarray
    v_hi: np.ndarray
    a_lo: np.ndarray
    a_hi: np.ndarray
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        size = max(np.size(getattr(self, name)) for name in self._names())
        for name in self._names():
            object.__setattr__(self, name, _limit_array(getattr(self, name), size))
        for lo, hi in self.pairs():
            if lo.size != size or hi.size != size:
                raise ValueError("All limit arrays must have one entry per DOF")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("Limits must be finite")
            if np.any(lo >= hi):
                raise ValueError("Lower limits must be below upper limits")
        for name in ("v", "a"):
            lo, hi = getattr(self, f"{name}_lo"), getattr(self, f"{name}_hi")
            if np.any(lo >= 0) or np.any(hi <= 0):
                raise ValueError(f"{name}_lo < 0 < {name}_hi required, motions start at rest")
        if not 0 < self.margin <= 1:
            raise ValueError(f"margin must be in (0, 1], got {self.margin}")

    @staticmethod
    def _names():
        return ("q_lo", "q_hi", "v_lo", "v_hi", "a_lo", "a_hi")

    @classmethod
    def symmetric(cls, q_lo, q_hi, v_max, a_max, margin: float = DEFAULT_MARGIN):
        v_max = np.abs(np.asarray(v_max, dtype=float))
        a_max = np.abs(np.asarray(a_max, dtype=float))
        return cls(q_lo, q_hi, -v_max, v_max, -a_max, a_max, margin)

    @classmethod
    def from_chain(cls, chain, margin: float = DEFAULT_MARGIN) -> "KinematicLimits":
        """Published joint limits stored with a kinematic chain description"""
        return cls.symmetric(
            chain.q_lo, chain.q_hi, chain.v_max, chain.a_max, margin=margin
        )

    @property
    def dof_count(self) -> int:
        return self.q_lo.size

    def pairs(self):
        return (
            (self.q_lo, self.q_hi),
            (self.v_lo, self.v_hi),
            (self.a_lo, self.a_hi),
        )

    def effective(self) -> "KinematicLimits":
        """Limits with the margin applied about the centre of each range.

        The returned instance has margin 1 so it is never shrunk twice.
        """
        shrunk = []
        for lo, hi in self.pairs():
            centre = 0.5 * (lo + hi)
            half = 0.5 * (hi - lo) * self.margin
            shrunk.extend([centre - half, centre + half])
        return KinematicLimits(*shrunk, margin=1.0)

    def check_dofs(self, dof_count: int) -> None:
        if self.dof_count != dof_count:
            raise ValueError(
                f"Limits describe {self.dof_count} DOFs, model has {dof_count}"
            )


@dataclass(frozen=True)
class TcConfig:
    """Temporal coupling gains.

    Args:
        gamma_a (float): Barrier gain trading limit avoidance against slowdown.
        gamma_r (float): Rate at which tau relaxes back to its nominal value, 1/s.
        horizon (int): Steps of lookahead for the acceleration prediction.
        max_slowdown (float): Hard cap on the rollout length in units of tau.
    """

    gamma_a: float = 100.0
    gamma_r: float = 2.0
    horizon: int = 5
    max_slowdown: float = 20.0

    def __post_init__(self):
        if self.gamma_a < 0:
            raise ValueError(f"gamma_a must be non-negative, got {self.gamma_a}")
        if not self.gamma_r > 0:
            raise ValueError(f"gamma_r must be positive, got {self.gamma_r}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be at least 1, got {self.horizon}")
        if not self.max_slowdown >= 1:
            raise ValueError(f"max_slowdown must be >= 1, got {self.max_slowdown}")


@dataclass(frozen=True)
class OptDmpConfig:
    """Opt-DMP settings.

    Args:
        lambda_mode (ObjectiveMode): Track demonstrated positions or velocities.
        grid_count (int): Constraint sample points across the rollout horizon.
        qp_tolerance (float): Absolute KKT tolerance of each per-DOF QP.
        boundary_equalities (bool): Pin y(T) = g and dy/dt(T) = 0 at the horizon.
        max_refinements (int): Grid refinements after a failed dense check.
    """

    lambda_mode: ObjectiveMode = ObjectiveMode.POSITION
    grid_count: int = 100
    qp_tolerance: float = qp.DEFAULT_TOLERANCE
    boundary_equalities: bool = True
    max_refinements: int = 3
    max_iters: int = qp.DEFAULT_MAX_ITERS

    def __post_init__(self):
        object.__setattr__(self, "lambda_mode", ObjectiveMode(self.lambda_mode))
        if self.grid_count < 10:
            raise ValueError(f"grid_count must be at least 10, got {self.grid_count}")
        if not self.qp_tolerance > 0:
            raise ValueError(f"qp_tolerance must be positive, got {self.qp_tolerance}")
        if self.max_refinements < 0:
            raise ValueError("max_refinements must be non-negative")


@dataclass(frozen=True, eq=False)
class ViolationReport:
    """Per-DOF maximum excess over each effective limit (0 when inside)"""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def quantity(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def worst(self, include_acceleration: bool = True) -> float:
        names = QUANTITIES if include_acceleration else QUANTITIES[:2]
        return max(float(np.max(self.quantity(name), initial=0.0)) for name in names)

    def as_dict(self) -> dict:
        return {name: self.quantity(name).tolist() for name in QUANTITIES}


def _excess(values: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    over = np.max(values - hi[:, None], axis=1)
    under = np.max(lo[:, None] - values, axis=1)
    return np.maximum(np.maximum(over, under), 0.0)


def violation_report(trajectory: Trajectory, limits: KinematicLimits) -> ViolationReport:
    """Excess of a trajectory over the effective limits.

    Args:
        trajectory (Trajectory): Samples to check.
        limits (KinematicLimits): Nominal limits; the margin is applied here.

    Returns:
        ViolationReport: Max excess per DOF and quantity.
    """
    limits.check_dofs(trajectory.dof_count)
    eff = limits.effective()
    return ViolationReport(
        position=_excess(trajectory.positions, eff.q_lo, eff.q_hi),
        velocity=_excess(trajectory.velocities, eff.v_lo, eff.v_hi),
        acceleration=_excess(trajectory.accelerations, eff.a_lo, eff.a_hi),
    )


def _limit_ratio(values, lo, hi) -> np.ndarray:
    """|value| relative to the bound on its side, per DOF (lo < 0 < hi)"""
    return np.where(values >= 0, values / hi, values / lo)


@dataclass(frozen=True, eq=False)
class ConstrainedResult:
    """Output of a constraint method.

    Args:
        trajectory (Trajectory): Constrained samples.
        method (Method): Method that produced it.
        tau_final (float): Time constant at the end of the rollout.
        violations (ViolationReport): Excess over the effective limits.
        solver_stats (dict): Method-specific diagnostics.
        reference_peak_speed (np.ndarray): Per-DOF peak speed of the
            unconstrained rollout.
        tolerance (float): Excess accepted by the method.
        tau_profile (np.ndarray): tau per sample, for ``tc``.
    """

    trajectory: Trajectory
    method: Method
    tau_final: float
    violations: ViolationReport
    solver_stats: dict = field(default_factory=dict)
    reference_peak_speed: np.ndarray = None
    tolerance: float = DEFAULT_TOLERANCE
    tau_profile: np.ndarray = None

    @property
    def satisfied(self) -> bool:
        """Limits hold within tolerance; TC accelerations are not guaranteed"""
        include_acceleration = self.method is not Method.TC
        return self.violations.worst(include_acceleration) <= self.tolerance

    @property
    def duration(self) -> float:
        return self.trajectory.duration


def _check_positions(report: ViolationReport) -> None:
    # the path is invariant under any time warp, so position excess is final
    if report.position.max(initial=0.0) > 0:
        dof = int(np.argmax(report.position))
        raise UnsatisfiableBySlowdownError(dof, float(report.position[dof]))


def _scale_estimate(base: Trajectory, eff: KinematicLimits) -> float:
    speed = np.max(_limit_ratio(base.velocities, eff.v_lo[:, None], eff.v_hi[:, None]))
    accel = np.max(_limit_ratio(base.accelerations, eff.a_lo[:, None], eff.a_hi[:, None]))
    return max(1.0, float(speed), math.sqrt(max(float(accel), 0.0)))


def constrain_tau(
    model: DmpModel,
    limits: KinematicLimits,
    dt: float = DEFAULT_DT,
    config: RolloutConfig = RolloutConfig(),
    tolerance: float = TAU_SEARCH_TOLERANCE,
) -> ConstrainedResult:
    """Slow the whole motion down until every limit holds.

    Brackets the smallest feasible scale s of tau by geometric growth from the
    scaling-law estimate, then bisects until s * (1 - tolerance) lies below
    the infeasible end of the bracket.

    Raises:
        UnsatisfiableBySlowdownError: The path itself leaves the position box.
    """
    limits.check_dofs(model.dof_count)
    eff = limits.effective()
    base = rollout(model, dt, config=config)
    base_report = violation_report(base, limits)
    _check_positions(base_report)
    rollouts = 1

    def attempt(scale):
        trajectory = rollout(model, dt, tau_override=scale * model.tau, config=config)
        report = violation_report(trajectory, limits)
        return trajectory, report, report.worst() <= 0.0

    if base_report.worst() <= 0.0:
        logging.info("tau-DMP: unconstrained rollout already within limits")
        return ConstrainedResult(
            trajectory=base,
            method=Method.TAU,
            tau_final=model.tau,
            violations=base_report,
            solver_stats=dict(scale=1.0, rollouts=rollouts),
            reference_peak_speed=base.peak_speed(),
        )

    # the scaling laws give the answer up to sampling; grow geometrically from there
    estimate = _scale_estimate(base, eff)
    lo, hi = 1.0, estimate
    growth = 0.01
    best = None
    for _ in range(TAU_SEARCH_MAX_DOUBLINGS):
        trajectory, report, feasible = attempt(hi)
        rollouts += 1
        if feasible:
            best = (hi, trajectory, report)
            break
        lo, hi = hi, hi * (1.0 + growth)
        growth *= 2.0
    if best is None:
        raise UnsatisfiableBySlowdownError(
            int(np.argmax(report.velocity + report.acceleration)), report.worst()
        )
    if hi > lo * (1.0 + tolerance):
        candidate = hi / (1.0 + 0.5 * tolerance)
        trajectory, report, feasible = attempt(candidate)
        rollouts += 1
        if feasible:
            hi, best = candidate, (candidate, trajectory, report)
        else:
            lo = candidate
    logging.info(f"tau-DMP: scale bracket [{lo:.6g}, {hi:.6g}]")

    while hi > lo * (1.0 + 0.5 * tolerance):
        mid = 0.5 * (lo + hi)
        trajectory, report, feasible = attempt(mid)
        rollouts += 1
        logging.debug(f"tau-DMP: scale {mid:.6g} feasible={feasible}")
        if feasible:
            hi, best = mid, (mid, trajectory, report)
        else:
            lo = mid

    scale, trajectory, report = best
    logging.info(f"tau-DMP: scale {scale:.6g} after {rollouts} rollouts")
    return ConstrainedResult(
        trajectory=trajectory,
        method=Method.TAU,
        tau_final=scale * model.tau,
        violations=report,
        solver_stats=dict(scale=scale, rollouts=rollouts, bracket=[lo, hi]),
        reference_peak_speed=base.peak_speed(),
    )


def _barrier(ratio: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, np.abs(ratio) - BARRIER_ONSET) ** 2


def constrain_tc(
    model: DmpModel,
    limits: KinematicLimits,
    cfg: TcConfig = TcConfig(),
    dt: float = DEFAULT_DT,
    config: RolloutConfig = RolloutConfig(),
) -> ConstrainedResult:
    """Integrate the DMP with tau adapted online.

    Each step tau follows

        dtau/dt = gamma_r (tau0 - tau) + gamma_a sum_d [p(v_d / v_lim) + p(a_d / a_lim)]

    with p(u) = max(0, |u| - 0.9)^2 and a_d the acceleration predicted
    ``horizon`` steps ahead. tau never drops below tau0 and, when gamma_a > 0,
    never below the value that keeps every velocity inside its limit.
    Accelerations are reported but not guaranteed.

    Raises:
        UnsatisfiableBySlowdownError: The path itself leaves the position box.
        IntegrationDivergenceError: tau or the state became non-finite.
    """
    limits.check_dofs(model.dof_count)
    eff = limits.effective()
    base = rollout(model, dt, config=config)
    _check_positions(violation_report(base, limits))

    flow: Flow = model.flow()
    tau0 = model.tau
    floor = config.phase_floor(flow.alpha_x)
    max_steps = int(math.ceil(config.duration_multiple * cfg.max_slowdown * tau0 / dt))
    dofs = model.dof_count

    positions, velocities, taus, phases = [], [], [], []
    y = flow.start.copy()
    z = np.zeros(dofs)
    x = 1.0
    tau = tau0
    previous_accel = None
    k = 0
    while True:
        k1 = flow(y, z, x)
        accel = k1[1] / tau**2
        predicted = accel if previous_accel is None else accel + cfg.horizon * (accel - previous_accel)
        previous_accel = accel
        pressure = _barrier(_limit_ratio(z / tau, eff.v_lo, eff.v_hi)) + _barrier(
            np.maximum(
                np.abs(_limit_ratio(accel, eff.a_lo, eff.a_hi)),
                np.abs(_limit_ratio(predicted, eff.a_lo, eff.a_hi)),
            )
        )
        tau_rate = cfg.gamma_r * (tau0 - tau) + cfg.gamma_a * float(np.sum(pressure))
        tau = max(tau + dt * tau_rate, tau0)
        if cfg.gamma_a > 0:
            needed = float(np.max(_limit_ratio(z, eff.v_lo, eff.v_hi)))
            tau = max(tau, needed)
        if not math.isfinite(tau):
            raise IntegrationDivergenceError(k, "tau")

        positions.append(y)
        velocities.append(k1[0] / tau)
        taus.append(tau)
        phases.append(x)
        if x <= floor or k >= max_steps:
            break
        y, z, x = rk4_step(flow, y, z, x, k1, dt / tau)
        k += 1
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise IntegrationDivergenceError(k)

    taus = np.asarray(taus)
    t = dt * np.arange(taus.size)
    velocities = np.asarray(velocities).T
    # tau has kinks where the velocity floor binds
    accelerations = np.gradient(velocities, t, axis=1) if taus.size > 1 else np.zeros_like(velocities)
    trajectory = Trajectory(
        t,
        np.asarray(positions).T,
        velocities,
        accelerations,
        phase=np.asarray(phases),
    )
    report = violation_report(trajectory, limits)
    if cfg.gamma_a == 0 and report.worst() > 0:
        logging.warning(
            f"TC-DMP with gamma_a=0 exceeds limits by {report.worst():.6g}; coupling disabled"
        )
    logging.info(
        f"TC-DMP: duration {trajectory.duration:.6g} s, peak tau {taus.max():.6g} s"
    )
    return ConstrainedResult(
        trajectory=trajectory,
        method=Method.TC,
        tau_final=float(taus[-1]),
        violations=report,
        solver_stats=dict(gamma_a=cfg.gamma_a, tau_peak=float(taus.max()), steps=int(taus.size)),
        reference_peak_speed=base.peak_speed(),
        tau_profile=taus,
    )


def tune_tc_gain(
    model: DmpModel,
    limits: KinematicLimits,
    cfg: TcConfig = TcConfig(),
    dt: float = DEFAULT_DT,
    start: float = None,
    factor: float = 2.0,
    max_rounds: int = 12,
    tolerance: float = DEFAULT_TOLERANCE,
) -> ConstrainedResult:
    """Raise gamma_a until the TC rollout respects every limit, accelerations included.

    Raises:
        TuningExhaustedError: No gain in the sweep was violation-free.
    """
    if factor <= 1:
        raise ValueError(f"factor must exceed 1, got {factor}")
    gain = start if start is not None else (cfg.gamma_a or 1.0)
    result = None
    for _ in range(max_rounds):
        result = constrain_tc(model, limits, replace(cfg, gamma_a=gain), dt)
        excess = result.violations.worst()
        logging.debug(f"TC tuning: gamma_a={gain:.6g} excess={excess:.6g}")
        if excess <= tolerance:
            logging.info(f"TC tuning settled on gamma_a={gain:.6g}")
            return result
        gain *= factor
    raise TuningExhaustedError(gain / factor, result.violations.worst())


@dataclass(frozen=True, eq=False)
class AffineMaps:
    """Weights-to-samples maps of one DOF: value[k] = Phi[k] @ w + c[k]"""

    times: np.ndarray
    indices: np.ndarray
    Phi_pos: np.ndarray
    Phi_vel: np.ndarray
    Phi_acc: np.ndarray
    c_pos: np.ndarray
    c_vel: np.ndarray
    c_acc: np.ndarray

    def Phi(self, quantity: str) -> np.ndarray:
        return getattr(self, f"Phi_{quantity[:3]}")

    def c(self, quantity: str) -> np.ndarray:
        return getattr(self, f"c_{quantity[:3]}")

    def predict(self, weights, quantity: str = "position") -> np.ndarray:
        return self.Phi(quantity) @ np.asarray(weights, dtype=float) + self.c(quantity)

    def subset(self, rows) -> "AffineMaps":
        rows = np.asarray(rows)
        return AffineMaps(
            self.times[rows], self.indices[rows],
            self.Phi_pos[rows], self.Phi_vel[rows], self.Phi_acc[rows],
            self.c_pos[rows], self.c_vel[rows], self.c_acc[rows],
        )


def _dense_maps(model: DmpModel, dt: float, config: RolloutConfig):
    """Affine maps of every DOF at every rollout sample, by superposition.

    One batched integration carries, per DOF, a zero-weight system and one
    unit-weight system per kernel.
    """
    H, D = model.kernels.count, model.dof_count
    unit_weights = np.vstack([np.zeros((1, H)), np.eye(H)])
    rows = H + 1
    flow = Flow(
        start=np.repeat(model.start, rows),
        goal=np.repeat(model.goal, rows),
        weights=np.tile(unit_weights, (D, 1)),
        alpha_z=model.alpha_z,
        beta_z=model.beta_z,
        alpha_x=model.canonical.alpha_x,
        kernels=model.kernels,
    )
    t, q, qd, qdd, _ = integrate(flow, model.tau, dt, config)
    maps = []
    for dof in range(D):
        block = slice(dof * rows, (dof + 1) * rows)
        pos, vel, acc = q[block], qd[block], qdd[block]
        maps.append(
            AffineMaps(
                times=t,
                indices=np.arange(t.size),
                Phi_pos=(pos[1:] - pos[0]).T,
                Phi_vel=(vel[1:] - vel[0]).T,
                Phi_acc=(acc[1:] - acc[0]).T,
                c_pos=pos[0].copy(),
                c_vel=vel[0].copy(),
                c_acc=acc[0].copy(),
            )
        )
    return maps


def grid_indices(sample_count: int, grid_count: int) -> np.ndarray:
    """Uniform grid over the rollout samples, first and last included"""
    return np.unique(np.round(np.linspace(0, sample_count - 1, grid_count)).astype(int))


def excursion_peaks(values: np.ndarray, lo: np.ndarray, hi: np.ndarray, tolerance: float = 0.0) -> np.ndarray:
    """Sample index of the largest excess in each run of samples past a limit.

    Args:
        values (np.ndarray): One row per DOF.
        lo, hi (np.ndarray): Bounds per DOF.
        tolerance (float): Excess that still counts as inside.

    Returns:
        np.ndarray: Sorted unique sample indices.
    """
    excess = np.maximum(values - hi[:, None], lo[:, None] - values)
    peaks = []
    for row in excess:
        outside = np.concatenate([[0], (row > tolerance).astype(int), [0]])
        edges = np.flatnonzero(np.diff(outside))
        for begin, end in zip(edges[::2], edges[1::2]):
            peaks.append(begin + int(np.argmax(row[begin:end])))
    return np.unique(np.array(peaks, dtype=int))


def build_affine_maps(
    model: DmpModel,
    grid,
    dt: float = DEFAULT_DT,
    config: RolloutConfig = RolloutConfig(),
) -> list:
    """Affine maps from weights to position, velocity and acceleration.

    Args:
        model (DmpModel): Model whose start, goal, gains and tau are used.
        grid: Times in seconds within the rollout horizon; snapped to
            the nearest ``dt`` sample.
        dt (float): Integration step.

    Returns:
        list[AffineMaps]: One entry per DOF.
    """
    dense = _dense_maps(model, dt, config)
    horizon = dense[0].times[-1]
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < 0) or np.any(grid > horizon + 0.5 * dt):
        raise ValueError(f"Grid must lie within [0, {horizon:.6g}] s")
    rows = np.clip(np.round(grid / dt).astype(int), 0, dense[0].times.size - 1)
    return [maps.subset(rows) for maps in dense]


def opt_problem(
    maps: AffineMaps,
    limits: KinematicLimits,
    dof: int,
    target: np.ndarray,
    cfg: OptDmpConfig,
    goal: float = None,
):
    """Per-DOF QP of Opt-DMP.

    Args:
        maps (AffineMaps): Maps of this DOF on the constraint grid.
        limits (KinematicLimits): Effective limits.
        dof (int): DOF index into ``limits``.
        target (np.ndarray): Tracked samples on the grid (positions or
            velocities per ``cfg.lambda_mode``).
        cfg (OptDmpConfig): Settings.
        goal (float, optional): Goal for the horizon equality.

    Returns:
        tuple: (QpProblem, row labels [(quantity, grid_index)] of G)

    Raises:
        OptInfeasibleError: A constraint row independent of the weights is
            violated by its constant part.
    """
    quantity = cfg.lambda_mode.value
    Phi = maps.Phi(quantity)
    residual = maps.c(quantity) - target
    n = Phi.shape[1]
    P = Phi.T @ Phi + 2.0 * TIKHONOV * np.eye(n)
    q = Phi.T @ residual

    G_rows, h_rows, labels = [], [], []
    for name, (lo, hi) in zip(QUANTITIES, limits.pairs()):
        Phi_k, c_k = maps.Phi(name), maps.c(name)
        upper, lower = hi[dof] - c_k, c_k - lo[dof]
        # rows the weights cannot move (t = 0) only need their constant checked
        free = np.max(np.abs(Phi_k), axis=1) > 1e-14 * max(1.0, np.abs(Phi_k).max(initial=0.0))
        stuck = np.flatnonzero(~free & ((upper < 0) | (lower < 0)))
        if stuck.size:
            k = int(stuck[0])
            raise OptInfeasibleError(dof, name, k, float(-min(upper[k], lower[k])))
        rows = np.flatnonzero(free)
        G_rows.extend([Phi_k[rows], -Phi_k[rows]])
        h_rows.extend([upper[rows], lower[rows]])
        labels.extend([(name, int(k)) for k in rows] * 2)

    A = b = None
    if cfg.boundary_equalities:
        if goal is None:
            raise ValueError("goal is required for boundary equalities")
        A = np.vstack([maps.Phi_pos[-1], maps.Phi_vel[-1]])
        b = np.array([goal - maps.c_pos[-1], -maps.c_vel[-1]])
    problem = qp.QpProblem(
        P=0.5 * (P + P.T),
        q=q,
        G=np.vstack(G_rows),
        h=np.concatenate(h_rows),
        A=A,
        b=b,
    )
    return problem, labels


def _opt_target(source: Trajectory, times, mode: ObjectiveMode) -> np.ndarray:
    """Tracked samples of every DOF at ``times``; velocities are zero past the end"""
    if mode is ObjectiveMode.POSITION:
        return source.sample(times)
    return np.vstack(
        [np.interp(times, source.timestamps, row, right=0.0) for row in source.velocities]
    )


def constrain_opt(
    model: DmpModel,
    limits: KinematicLimits,
    cfg: OptDmpConfig = OptDmpConfig(),
    dt: float = DEFAULT_DT,
    demo: Trajectory = None,
    config: RolloutConfig = RolloutConfig(),
) -> ConstrainedResult:
    """Re-solve the weights of each DOF as a QP, keeping tau fixed.

    The constraint grid is uniform over the rollout horizon. After solving,
    the rollout is checked at every sample; on failure the uniform grid is
    doubled and the peak sample of each excursion past a limit is added, up
    to ``cfg.max_refinements`` times. A QP that runs out of iterations keeps
    its best iterate and the dense check decides.

    Args:
        demo (Trajectory, optional): Tracking target; the unconstrained
            rollout when omitted.

    Raises:
        OptInfeasibleError: A per-DOF QP has no feasible point.
        OptNotConvergedError: The last round still breaks the limits and
            one of its QPs stopped at ``cfg.max_iters``.
    """
    limits.check_dofs(model.dof_count)
    eff = limits.effective()
    reference = rollout(model, dt, config=config)
    dense = _dense_maps(model, dt, config)
    samples = dense[0].times.size
    rows = grid_indices(samples, cfg.grid_count)

    source = demo.shifted() if demo is not None else reference
    weights = np.array(model.weights)
    warm = [None] * model.dof_count
    peaks = np.zeros(0, dtype=int)
    for refinement in range(cfg.max_refinements + 1):
        stats = dict(grid_count=int(rows.size), refinements=refinement, iterations=[], kkt=[])
        unconverged = []
        targets = _opt_target(source, dense[0].times[rows], cfg.lambda_mode)
        for dof in range(model.dof_count):
            if model.degenerate[dof]:
                stats["iterations"].append(0)
                stats["kkt"].append(None)
                continue
            maps = dense[dof].subset(rows)
            target = targets[dof]
            problem, labels = opt_problem(maps, eff, dof, target, cfg, goal=model.goal[dof])
            solution = qp.solve(
                problem,
                tolerance=cfg.qp_tolerance,
                max_iters=cfg.max_iters,
                warm_start=warm[dof],
            )
            if solution.status is qp.QpStatus.INFEASIBLE:
                slack = problem.G @ solution.x - problem.h
                worst = int(np.argmax(slack)) if slack.size else 0
                quantity, grid_index = labels[worst] if labels else ("boundary", samples - 1)
                raise OptInfeasibleError(
                    dof, quantity, grid_index, float(max(slack.max(initial=0.0), solution.primal_residual))
                )
            residuals = qp.kkt_residuals(problem, solution)
            if solution.status is qp.QpStatus.MAX_ITERS:
                logging.warning(
                    f"Opt-DMP QP for DOF {dof} stopped after {solution.iterations} iterations "
                    f"with KKT residual {residuals.worst():.3g}; keeping the best iterate"
                )
                unconverged.append((dof, solution.iterations, residuals.worst()))
            weights[dof] = solution.x
            warm[dof] = solution
            stats["iterations"].append(solution.iterations)
            stats["kkt"].append(
                dict(
                    status=solution.status.value,
                    stationarity=residuals.stationarity,
                    primal=residuals.primal,
                    comp_slack=residuals.comp_slack,
                )
            )

        optimized = model.with_weights(weights)
        trajectory = rollout(optimized, dt, config=config)
        report = violation_report(trajectory, limits)
        if report.worst() <= cfg.qp_tolerance:
            break
        if refinement == cfg.max_refinements:
            if unconverged:
                dof, iterations, residual = unconverged[0]
                raise OptNotConvergedError(dof, iterations, residual, report.worst())
            logging.warning(
                f"Opt-DMP dense check still exceeds limits by {report.worst():.6g} "
                f"after {refinement} grid refinements"
            )
            break
        for values, (lo, hi) in zip(
            (trajectory.positions, trajectory.velocities, trajectory.accelerations), eff.pairs()
        ):
            peaks = np.union1d(peaks, excursion_peaks(values, lo, hi, cfg.qp_tolerance))
        rows = np.union1d(
            grid_indices(samples, cfg.grid_count * 2 ** (refinement + 1)), peaks
        ).astype(int)
        logging.info(f"Opt-DMP: refining constraint grid to {rows.size} points")

    logging.info(f"Opt-DMP: solved {model.dof_count} QPs on {rows.size} grid points")
    return ConstrainedResult(
        trajectory=trajectory,
        method=Method.OPT,
        tau_final=model.tau,
        violations=report,
        solver_stats=stats,
        reference_peak_speed=reference.peak_speed(),
        tolerance=cfg.qp_tolerance,
    )


def constrain(
    method,
    model: DmpModel,
    limits: KinematicLimits,
    dt: float = DEFAULT_DT,
    tc: TcConfig = TcConfig(),
    opt: OptDmpConfig = OptDmpConfig(),
    demo: Trajectory = None,
    tau_tolerance: float = TAU_SEARCH_TOLERANCE,
) -> ConstrainedResult:
    """Run one constraint method by name"""
    method = Method(method)
    logging.info(f"Constraining {model.dof_count}-DOF model with {method.value}-DMP")
    if method is Method.TAU:
        return constrain_tau(model, limits, dt, tolerance=tau_tolerance)
    if method is Method.TC:
        return constrain_tc(model, limits, tc, dt)
    return constrain_opt(model, limits, opt, dt, demo=demo)


def trajectory_quality(result: ConstrainedResult) -> float:
    """Mean ratio of constrained to unconstrained peak speed, in [0, 1]"""
    reference = np.asarray(result.reference_peak_speed, dtype=float)
    mask = reference > 0
    if not mask.any():
        return 1.0
    ratios = result.trajectory.peak_speed()[mask] / reference[mask]
    return float(np.clip(np.mean(ratios), 0.0, 1.0))


def path_rmse(trajectory: Trajectory, reference: Trajectory, alpha_x: float, tau: float) -> np.ndarray:
    """Per-DOF RMSE between two paths matched by canonical phase.

    Each sample of ``trajectory`` is compared with ``reference`` at the time
    the nominal system (tau, alpha_x) reaches the same phase, so uniform or
    adaptive slowdowns leave the value unchanged.
    """
    if trajectory.phase is None:
        raise ValueError("Trajectory carries no phase")
    reference = reference.shifted()
    times = -tau * np.log(trajectory.phase) / alpha_x
    inside = times <= reference.timestamps[-1] + 1e-12
    expected = reference.sample(times[inside])
    error = trajectory.positions[:, inside] - expected
    return np.sqrt(np.mean(error**2, axis=1))


@dataclass(frozen=True, eq=False)
class MethodComparison:
    method: Method
    duration: float = None
    peak_speed: np.ndarray = None
    peak_acceleration: np.ndarray = None
    path_rmse: np.ndarray = None
    min_margin: float = None
    tau_final: float = None
    error: str = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _min_margin(trajectory: Trajectory, limits: KinematicLimits) -> float:
    eff = limits.effective()
    ratios = [
        _limit_ratio(trajectory.velocities, eff.v_lo[:, None], eff.v_hi[:, None]),
        _limit_ratio(trajectory.accelerations, eff.a_lo[:, None], eff.a_hi[:, None]),
    ]
    centre = 0.5 * (eff.q_lo + eff.q_hi)[:, None]
    half = 0.5 * (eff.q_hi - eff.q_lo)[:, None]
    ratios.append(np.abs(trajectory.positions - centre) / half)
    return float(1.0 - max(r.max() for r in ratios))


def compare_methods(
    model: DmpModel,
    limits: KinematicLimits,
    dt: float = DEFAULT_DT,
    tc: TcConfig = TcConfig(),
    opt: OptDmpConfig = OptDmpConfig(),
    demo: Trajectory = None,
    methods=tuple(Method),
    tau_tolerance: float = TAU_SEARCH_TOLERANCE,
) -> list:
    """Run each method on the same scenario; failures are recorded, not raised.

    Returns:
        list[MethodComparison]: One row per method, in ``methods`` order.
    """
    reference = demo if demo is not None else rollout(model, dt)
    rows = []
    for method in methods:
        method = Method(method)
        try:
            result = constrain(method, model, limits, dt, tc=tc, opt=opt, demo=demo, tau_tolerance=tau_tolerance)
        except (CdmpError, ValueError) as e:
            logging.warning(f"{method.value}-DMP failed: {e}")
            rows.append(MethodComparison(method=method, error=str(e)))
            continue
        trajectory = result.trajectory
        rows.append(
            MethodComparison(
                method=method,
                duration=trajectory.duration,
                peak_speed=trajectory.peak_speed(),
                peak_acceleration=trajectory.peak_acceleration(),
                path_rmse=path_rmse(trajectory, reference, model.canonical.alpha_x, model.tau),
                min_margin=_min_margin(trajectory, limits),
                tau_final=result.tau_final,
            )
        )
    return rows
