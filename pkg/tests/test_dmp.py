import numpy as np
import pytest
from scipy.integrate import solve_ivp

from cdmp_bag.dmp import (
    CanonicalSystem,
    DmpModel,
    KernelGrid,
    Trajectory,
    fit,
    forcing_term,
    phase_at,
    rollout,
)
from cdmp_bag.exceptions import DegeneratePhaseError

from .conftest import minimum_jerk_trajectory


@pytest.mark.parametrize(
    "alpha_x, tau, t, expected",
    [(1.0, 1.0, 0.0, 1.0), (1.0, 1.0, 1.0, 0.36787944), (2.0, 2.0, 1.0, 0.36787944)],
)
def test_phase_at(alpha_x, tau, t, expected):
    assert phase_at(CanonicalSystem(alpha_x, tau), t) == pytest.approx(expected, abs=1e-8)


def test_phase_at_matches_integrated_canonical_system():
    canonical = CanonicalSystem(alpha_x=4.0, tau=0.8)
    solution = solve_ivp(
        lambda t, x: -canonical.alpha_x * x / canonical.tau, (0.0, 1.0), [1.0], rtol=1e-12, atol=1e-14
    )
    assert phase_at(canonical, 1.0) == pytest.approx(solution.y[0, -1], abs=1e-9)


def test_phase_at_rejects_negative_time():
    with pytest.raises(ValueError):
        phase_at(CanonicalSystem(), -0.1)


def _model(weights, start=0.0, goal=1.0, kernels=None):
    kernels = kernels or KernelGrid.exponential(5, 4.0)
    weights = np.atleast_2d(weights)
    return DmpModel(weights, [goal], [start], CanonicalSystem(), kernels)


def test_forcing_term_zero_weights():
    model = _model(np.zeros(5))
    assert all(forcing_term(model, 0, x) == 0.0 for x in (1.0, 0.5, 0.01))


def test_forcing_term_vanishes_when_goal_equals_start():
    model = _model(np.arange(5.0), start=2.0, goal=2.0)
    assert forcing_term(model, 0, 0.7) == 0.0


def test_forcing_term_two_kernels():
    kernels = KernelGrid([1.0, 0.5], [0.3, 0.3])
    model = _model([2.0, 4.0], kernels=kernels)
    psi = np.exp(-((1.0 - np.array([1.0, 0.5])) ** 2) / (2 * 0.3**2))
    expected = psi @ np.array([2.0, 4.0]) / psi.sum()
    assert forcing_term(model, 0, 1.0) == pytest.approx(expected, rel=1e-12)


def test_forcing_term_underflow_is_degenerate():
    kernels = KernelGrid([1.0, 0.9], [1e-3, 1e-3])
    with pytest.raises(DegeneratePhaseError):
        forcing_term(_model([1.0, 1.0], kernels=kernels), 0, 0.01)


def test_fit_constant_demo_is_degenerate():
    t = np.linspace(0, 1, 101)
    demo = Trajectory.from_positions(t, np.full((1, t.size), 3.0))
    model = fit(demo, 10)
    assert model.degenerate == (True,)
    assert np.all(model.weights == 0)
    trajectory = rollout(model, 0.005)
    assert np.max(np.abs(trajectory.positions - 3.0)) <= 1e-6


def test_fit_reproduces_minimum_jerk(demo):
    model = fit(demo, 30)
    assert model.tau == pytest.approx(1.0)
    trajectory = rollout(model, 0.002)
    reproduced = trajectory.positions[0, : demo.sample_count]
    rmse = np.sqrt(np.mean((reproduced - demo.positions[0]) ** 2))
    assert rmse <= 1e-2


def test_fit_dofs_are_independent():
    both = minimum_jerk_trajectory(start=[0.0, 2.0], goal=[1.0, -1.0])
    joint = fit(both, 20)
    for dof in range(2):
        single = Trajectory(
            both.timestamps,
            both.positions[dof : dof + 1],
            both.velocities[dof : dof + 1],
            both.accelerations[dof : dof + 1],
        )
        np.testing.assert_allclose(joint.weights[dof], fit(single, 20).weights[0], rtol=1e-10, atol=1e-10)


def test_rollout_zero_weights_converges_to_goal():
    model = _model(np.zeros(5))
    trajectory = rollout(model, 0.001)
    assert trajectory.positions[0, -1] == pytest.approx(1.0, abs=1e-3)
    assert trajectory.phase[0] == 1.0
    assert np.all(np.diff(trajectory.phase) < 0)


def test_rollout_tau_override_halves_speed():
    model = _model(np.zeros(5))
    nominal = rollout(model, 0.001)
    slow = rollout(model, 0.001, tau_override=2.0)
    assert slow.positions[0, -1] == pytest.approx(nominal.positions[0, -1], abs=1e-6)
    assert slow.peak_speed()[0] == pytest.approx(0.5 * nominal.peak_speed()[0], rel=0.02)
    assert slow.duration == pytest.approx(2 * nominal.duration, rel=1e-2)


def test_rollout_temporal_scaling_law(model):
    nominal = rollout(model, 0.001)
    slow = rollout(model, 0.002, tau_override=2 * model.tau)
    assert slow.sample_count == nominal.sample_count
    np.testing.assert_allclose(slow.timestamps, 2 * nominal.timestamps)
    np.testing.assert_allclose(slow.positions, nominal.positions, atol=1e-9)
    np.testing.assert_allclose(slow.velocities, nominal.velocities / 2, atol=1e-9)
    np.testing.assert_allclose(slow.accelerations, nominal.accelerations / 4, atol=1e-8)


def test_rollout_converges_to_goal(model):
    trajectory = rollout(model, 0.001)
    amplitude = abs(model.goal[0] - model.start[0])
    assert abs(trajectory.positions[0, -1] - model.goal[0]) <= 1e-3 * amplitude


def test_rollout_rejects_coarse_step(model):
    with pytest.raises(ValueError):
        rollout(model, 0.05)


def test_trajectory_rejects_non_increasing_time():
    with pytest.raises(ValueError):
        Trajectory.from_positions([0.0, 0.1, 0.1], [[0.0, 1.0, 2.0]])


def test_trajectory_sample_holds_ends(demo):
    sampled = demo.sample([-1.0, 0.5, 2.0])
    assert sampled[0, 0] == demo.positions[0, 0]
    assert sampled[0, 1] == pytest.approx(0.5)
    assert sampled[0, 2] == demo.positions[0, -1]
