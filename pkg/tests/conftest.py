from itertools import combinations

import numpy as np
import pytest

from cdmp_bag.dmp import Trajectory, fit
from cdmp_bag.qp import QpProblem


def minimum_jerk_trajectory(duration: float = 1.0, samples: int = 501, start=0.0, goal=1.0) -> Trajectory:
    """Analytic rest-to-rest minimum-jerk motion, one row per start/goal pair"""
    start = np.atleast_1d(np.asarray(start, dtype=float))[:, None]
    goal = np.atleast_1d(np.asarray(goal, dtype=float))[:, None]
    t = np.linspace(0.0, duration, samples)
    s = t / duration
    shape = 10 * s**3 - 15 * s**4 + 6 * s**5
    speed = (30 * s**2 - 60 * s**3 + 30 * s**4) / duration
    accel = (60 * s - 180 * s**2 + 120 * s**3) / duration**2
    span = goal - start
    return Trajectory(t, start + span * shape, span * speed, span * accel)


def random_joint_demo(seed: int, dof: int = 7, samples: int = 201) -> Trajectory:
    """Seeded rest-to-rest joint motion: minimum jerk plus a bump that
    vanishes with its slope at both ends"""
    rng = np.random.default_rng(seed)
    duration = rng.uniform(0.8, 1.5)
    start = rng.uniform(-1.0, 1.0, dof)
    span = rng.uniform(0.3, 1.5, dof) * rng.choice([-1.0, 1.0], dof)
    bump = rng.uniform(-0.3, 0.3, dof)[:, None]
    base = minimum_jerk_trajectory(duration, samples, start, start + span)
    s = base.timestamps / duration
    return Trajectory(
        base.timestamps,
        base.positions + bump * 16 * s**2 * (1 - s) ** 2,
        base.velocities + bump * 32 * s * (1 - s) * (1 - 2 * s) / duration,
        base.accelerations + bump * 32 * (1 - 6 * s + 6 * s**2) / duration**2,
    )


def brute_force(problem: QpProblem):
    """Optimum by enumerating every active set of the inequalities"""
    n = problem.n
    best = None
    for size in range(min(problem.m, n - problem.p) + 1):
        for active in combinations(range(problem.m), size):
            rows = np.vstack([problem.A, problem.G[list(active)]])
            k = rows.shape[0]
            K = np.block([[problem.P, rows.T], [rows, np.zeros((k, k))]])
            rhs = np.concatenate([-problem.q, problem.b, problem.h[list(active)]])
            try:
                solution = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, multipliers = solution[:n], solution[n + problem.p :]
            if np.any(problem.G @ x - problem.h > 1e-9) or np.any(multipliers < -1e-9):
                continue
            if best is None or problem.objective(x) < problem.objective(best) - 1e-12:
                best = x
    return best


@pytest.fixture
def demo() -> Trajectory:
    return minimum_jerk_trajectory()


@pytest.fixture
def model(demo):
    return fit(demo, 30)


def bag_cloud(a: float = 0.15, b: float = 0.15, per_ring: int = 16, labeled: bool = True):
    """Noise-free elliptic cylinder: rim ring at z = 0.4, body rings at z <= 0.3"""
    from cdmp_bag.filters import Label, MarkerCloud

    theta = 2 * np.pi * np.arange(per_ring) / per_ring
    points, labels = [], []
    for z in (0.4, 0.3, 0.2, 0.1, 0.0):
        points.append(np.column_stack([a * np.cos(theta), b * np.sin(theta), np.full(per_ring, z)]))
        labels.extend([Label.RIM if z == 0.4 else Label.BODY] * per_ring)
    if not labeled:
        labels = None
    return MarkerCloud(points=np.vstack(points), labels=labels)


def short_trace(seed: int = 1, area_ratios=(0.1, 0.5, 0.8)):
    """Episode trace of flings with the given area ratios"""
    from cdmp_bag.main import EpisodeTrace, Termination
    from cdmp_bag.metrics import BagMetricsReport
    from cdmp_bag.sim import BagSimState

    trace = EpisodeTrace(seed=seed, termination=Termination.TARGETS_REACHED, reached_targets=True)
    for index, area_ratio in enumerate(area_ratios):
        report = BagMetricsReport(
            volume=area_ratio,
            area=area_ratio,
            elongation=0.9,
            delta_elongation=0.1,
            volume_ratio=area_ratio,
            area_ratio=area_ratio,
        )
        state = BagSimState(crumple=1.0 - area_ratio, gripper_um=300_000, dynamic_count=index)
        trace.record("initial" if index == 0 else "dynamic", "none" if index == 0 else "dynamic", state, report)
    return trace
