"""Point-to-point Dynamic Movement Primitives.

Transformation system per DOF, shared canonical system:

    tau * z' = alpha_z * (beta_z * (g - y) - z) + f(x)
    tau * y' = z
    tau * x' = -alpha_x * x

with the forcing term a normalized mixture of Gaussian kernels scaled by
``x * (g - y0)``.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from cdmp_bag.exceptions import DegeneratePhaseError, IntegrationDivergenceError

DEFAULT_ALPHA_Z = 25.0
DEFAULT_ALPHA_X = 4.0
DEFAULT_KERNELS = 30
DEFAULT_DT = 0.001
KERNEL_OVERLAP = 0.5
ACTIVATION_FLOOR = 1e-300
DEGENERATE_AMPLITUDE = 1e-6


def _frozen_array(values, ndim: int = None) -> np.ndarray:
    array = np.array(values, dtype=float)
    if ndim is not None and array.ndim != ndim:
        raise ValueError(f"Expected {ndim}-D array, got shape {array.shape}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-stamped multi-DOF samples.

    Args:
        timestamps (np.ndarray): Strictly increasing sample times, seconds. Shape (N,).
        positions (np.ndarray): Shape (D, N).
        velocities (np.ndarray): Shape (D, N).
        accelerations (np.ndarray): Shape (D, N).
        phase (np.ndarray): Canonical phase per sample when produced by a rollout.
    """

    timestamps: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    phase: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        t = _frozen_array(self.timestamps, 1)
        q = _frozen_array(self.positions, 2)
        qd = _frozen_array(self.velocities, 2)
        qdd = _frozen_array(self.accelerations, 2)
        if not (q.shape == qd.shape == qdd.shape):
            raise ValueError(
                f"Position/velocity/acceleration shapes differ: {q.shape}, {qd.shape}, {qdd.shape}"
            )
        if q.shape[1] != t.shape[0]:
            raise ValueError(f"{t.shape[0]} timestamps for {q.shape[1]} samples")
        if t.shape[0] < 2:
            raise ValueError("A trajectory needs at least 2 samples")
        if np.any(np.diff(t) <= 0):
            raise ValueError("Timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "positions", q)
        object.__setattr__(self, "velocities", qd)
        object.__setattr__(self, "accelerations", qdd)
        if self.phase is not None:
            object.__setattr__(self, "phase", _frozen_array(self.phase, 1))

    @classmethod
    def from_positions(cls, timestamps, positions) -> "Trajectory":
        """Build a trajectory, differentiating positions numerically.

        Central differences inside, one-sided differences at both ends.
        """
        t = np.asarray(timestamps, dtype=float)
        q = np.atleast_2d(np.asarray(positions, dtype=float))
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("Timestamps must be strictly increasing, at least 2 samples")
        qd = np.gradient(q, t, axis=1, edge_order=1)
        qdd = np.gradient(qd, t, axis=1, edge_order=1)
        return cls(t, q, qd, qdd)

    @property
    def dof_count(self) -> int:
        return self.positions.shape[0]

    @property
    def sample_count(self) -> int:
        return self.positions.shape[1]

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])

    def peak_speed(self) -> np.ndarray:
        return np.max(np.abs(self.velocities), axis=1)

    def peak_acceleration(self) -> np.ndarray:
        return np.max(np.abs(self.accelerations), axis=1)

    def sample(self, times) -> np.ndarray:
        """Linearly interpolated positions, held at the ends. Shape (D, len(times))"""
        times = np.asarray(times, dtype=float)
        return np.vstack(
            [np.interp(times, self.timestamps, row) for row in self.positions]
        )

    def shifted(self) -> "Trajectory":
        """Same samples with the clock starting at zero"""
        return Trajectory(
            self.timestamps - self.timestamps[0],
            self.positions,
            self.velocities,
            self.accelerations,
            self.phase,
        )


@dataclass(frozen=True)
class CanonicalSystem:
    alpha_x: float = DEFAULT_ALPHA_X
    tau: float = 1.0

    def __post_init__(self):
        if not self.alpha_x > 0:
            raise ValueError(f"alpha_x must be positive, got {self.alpha_x}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    def phase_at(self, t):
        """Closed-form phase exp(-alpha_x * t / tau)"""
        return np.exp(-self.alpha_x * np.asarray(t, dtype=float) / self.tau)


def phase_at(canonical: CanonicalSystem, t: float) -> float:
    """Phase of the canonical system at time ``t`` seconds.

    Args:
        canonical (CanonicalSystem): Decay gain and time constant.
        t (float): Non-negative time.

    Returns:
        float: Phase in (0, 1], 1 at t=0.
    """
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    return float(canonical.phase_at(t))


@dataclass(frozen=True, eq=False)
class KernelGrid:
    """Gaussian kernels over the phase, centres decreasing in phase."""

    centers: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        c = _frozen_array(self.centers, 1)
        s = _frozen_array(self.widths, 1)
        if c.shape != s.shape or c.size < 1:
            raise ValueError("Kernel centers and widths must be non-empty and aligned")
        if np.any(np.diff(c) >= 0):
            raise ValueError("Kernel centers must be strictly decreasing")
        if np.any(s <= 0):
            raise ValueError("Kernel widths must be positive")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "widths", s)

    @classmethod
    def exponential(
        cls, count: int, alpha_x: float, overlap: float = KERNEL_OVERLAP
    ) -> "KernelGrid":
        """Centres exp(-alpha_x * i / (H - 1)), i.e. evenly spaced in time"""
        if count < 2:
            raise ValueError(f"At least 2 kernels required, got {count}")
        centers = np.exp(-alpha_x * np.arange(count) / (count - 1))
        widths = np.abs(np.diff(centers)) * overlap
        widths = np.append(widths, widths[-1])
        return cls(centers, widths)

    @property
    def count(self) -> int:
        return self.centers.size

    def _exponents(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        return -((x - self.centers) ** 2) / (2.0 * self.widths**2)

    def activations(self, x) -> np.ndarray:
        """Raw kernel activations, shape x.shape + (H,)"""
        return np.exp(self._exponents(x))

    def normalized(self, x) -> np.ndarray:
        """Activations divided by their sum, evaluated without underflow"""
        e = self._exponents(x)
        e = e - e.max(axis=-1, keepdims=True)
        psi = np.exp(e)
        return psi / psi.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class DmpModel:
    """Multi-DOF DMP sharing one canonical system.

    Args:
        weights (np.ndarray): Shape (D, H).
        goal (np.ndarray): Shape (D,).
        start (np.ndarray): Shape (D,).
        canonical (CanonicalSystem): Shared phase system, holds tau.
        kernels (KernelGrid): Shared kernel placement.
        alpha_z (float): Spring gain.
        beta_z (float): Damper ratio, alpha_z / 4 for critical damping.
        degenerate (tuple): Per-DOF flag set by ``fit`` when g == y0.
    """

    weights: np.ndarray
    goal: np.ndarray
    start: np.ndarray
    canonical: CanonicalSystem
    kernels: KernelGrid
    alpha_z: float = DEFAULT_ALPHA_Z
    beta_z: float = None
    degenerate: tuple = None

    def __post_init__(self):
        w = _frozen_array(np.atleast_2d(self.weights), 2)
        g = _frozen_array(np.atleast_1d(self.goal), 1)
        y0 = _frozen_array(np.atleast_1d(self.start), 1)
        if w.shape != (g.size, self.kernels.count) or y0.shape != g.shape:
            raise ValueError(
                f"Weights {w.shape} do not match {g.size} DOFs x {self.kernels.count} kernels"
            )
        if not np.all(np.isfinite(w)):
            raise ValueError("Weights must be finite")
        if not self.alpha_z > 0:
            raise ValueError(f"alpha_z must be positive, got {self.alpha_z}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "goal", g)
        object.__setattr__(self, "start", y0)
        if self.beta_z is None:
            object.__setattr__(self, "beta_z", self.alpha_z / 4.0)
        if self.degenerate is None:
            object.__setattr__(self, "degenerate", (False,) * g.size)
        else:
            object.__setattr__(self, "degenerate", tuple(bool(d) for d in self.degenerate))

    @property
    def dof_count(self) -> int:
        return self.goal.size

    @property
    def tau(self) -> float:
        return self.canonical.tau

    @property
    def amplitude(self) -> np.ndarray:
        return self.goal - self.start

    def with_weights(self, weights) -> "DmpModel":
        return replace(self, weights=weights)

    def with_tau(self, tau: float) -> "DmpModel":
        return replace(self, canonical=replace(self.canonical, tau=tau))

    def flow(self) -> "Flow":
        return Flow(
            self.start, self.goal, self.weights, self.alpha_z, self.beta_z,
            self.canonical.alpha_x, self.kernels,
        )


class Flow:
    """Right-hand side of the DMP in phase time (tau factored out).

    Rows are independent transformation systems that share the canonical
    phase; a row is a DOF, or a unit-weight system when building affine maps.
    """

    def __init__(self, start, goal, weights, alpha_z, beta_z, alpha_x, kernels):
        self.start = np.asarray(start, dtype=float)
        self.goal = np.asarray(goal, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.alpha_z = alpha_z
        self.beta_z = beta_z
        self.alpha_x = alpha_x
        self.kernels = kernels
        self.amplitude = self.goal - self.start

    def forcing(self, x: float) -> np.ndarray:
        return (self.weights @ self.kernels.normalized(x)) * x * self.amplitude

    def __call__(self, y, z, x):
        dz = self.alpha_z * (self.beta_z * (self.goal - y) - z) + self.forcing(x)
        return z, dz, -self.alpha_x * x


@dataclass(frozen=True)
class RolloutConfig:
    phase_floor_multiple: float = 1.25
    duration_multiple: float = 2.0

    def phase_floor(self, alpha_x: float) -> float:
        return math.exp(-alpha_x * self.phase_floor_multiple)


def forcing_term(model: DmpModel, dof: int, x: float) -> float:
    """Forcing term of one DOF at phase ``x``.

    Raises:
        DegeneratePhaseError: The kernel sum underflows at ``x``.
    """
    if not 0 <= dof < model.dof_count:
        raise IndexError(f"DOF {dof} out of range for {model.dof_count} DOFs")
    psi = model.kernels.activations(x)
    total = float(psi.sum())
    if total < ACTIVATION_FLOOR:
        raise DegeneratePhaseError(x)
    return float(psi @ model.weights[dof] / total * x * model.amplitude[dof])


def fit(
    demo: Trajectory,
    H: int = DEFAULT_KERNELS,
    alpha_z: float = DEFAULT_ALPHA_Z,
    alpha_x: float = DEFAULT_ALPHA_X,
) -> DmpModel:
    """Fit DMP weights to a demonstration by locally weighted regression.

    Args:
        demo (Trajectory): Demonstration; its duration becomes tau.
        H (int): Kernel count.
        alpha_z (float): Spring gain; beta_z = alpha_z / 4.
        alpha_x (float): Canonical decay gain.

    Returns:
        DmpModel: Fitted model. DOFs with g == y0 get zero weights and a
        degeneracy flag.
    """
    demo = demo.shifted()
    t = demo.timestamps
    tau = float(t[-1])
    beta_z = alpha_z / 4.0
    q = demo.positions
    start, goal = q[:, 0], q[:, -1]

    f_target = tau**2 * demo.accelerations - alpha_z * (
        beta_z * (goal[:, None] - q) - tau * demo.velocities
    )
    canonical = CanonicalSystem(alpha_x=alpha_x, tau=tau)
    kernels = KernelGrid.exponential(H, alpha_x)
    x = canonical.phase_at(t)
    psi = kernels.activations(x)

    amplitude = goal - start
    scale = np.maximum.reduce([np.ones_like(goal), np.abs(goal), np.abs(start)])
    degenerate = np.abs(amplitude) < DEGENERATE_AMPLITUDE * scale

    xi = x[None, :] * amplitude[:, None]
    numerator = (xi * f_target) @ psi
    denominator = (xi**2) @ psi
    weights = np.divide(
        numerator, denominator, out=np.zeros_like(numerator), where=denominator > 0
    )
    weights[degenerate] = 0.0
    for dof in np.flatnonzero(degenerate):
        logging.warning(f"DOF {dof} has g == y0; weights zeroed")

    return DmpModel(
        weights=weights,
        goal=goal,
        start=start,
        canonical=canonical,
        kernels=kernels,
        alpha_z=alpha_z,
        beta_z=beta_z,
        degenerate=tuple(degenerate),
    )


def rk4_step(flow: Flow, y, z, x, k1, h: float):
    """One RK4 step of size ``h`` in phase time, reusing the stage ``k1``"""
    half = 0.5 * h
    k2 = flow(y + half * k1[0], z + half * k1[1], x + half * k1[2])
    k3 = flow(y + half * k2[0], z + half * k2[1], x + half * k2[2])
    k4 = flow(y + h * k3[0], z + h * k3[1], x + h * k3[2])
    return (
        y + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        z + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        x + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
    )


def integrate(
    flow: Flow,
    tau: float,
    dt: float,
    config: RolloutConfig = RolloutConfig(),
):
    """Fixed-step RK4 integration of every row of ``flow`` from rest.

    Returns:
        tuple: (timestamps (N,), positions (R, N), velocities (R, N),
        accelerations (R, N), phase (N,))
    """
    floor = config.phase_floor(flow.alpha_x)
    max_steps = int(math.ceil(config.duration_multiple * tau / dt))
    rows = flow.start.size
    positions = np.empty((rows, max_steps + 1))
    velocities = np.empty_like(positions)
    accelerations = np.empty_like(positions)
    phase = np.empty(max_steps + 1)

    y = flow.start.copy()
    z = np.zeros(rows)
    x = 1.0
    k = 0
    while True:
        k1 = flow(y, z, x)
        positions[:, k] = y
        velocities[:, k] = k1[0] / tau
        accelerations[:, k] = k1[1] / tau**2
        phase[k] = x
        if x <= floor or k >= max_steps:
            break
        y, z, x = rk4_step(flow, y, z, x, k1, dt / tau)
        k += 1
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise IntegrationDivergenceError(k)

    n = k + 1
    timestamps = dt * np.arange(n)
    return (
        timestamps,
        positions[:, :n],
        velocities[:, :n],
        accelerations[:, :n],
        phase[:n],
    )


def rollout(
    model: DmpModel,
    dt: float = DEFAULT_DT,
    tau_override: float = None,
    config: RolloutConfig = RolloutConfig(),
) -> Trajectory:
    """Integrate the model from (y0, z=0, x=1) until the phase floor.

    Args:
        model (DmpModel): Model to roll out.
        dt (float): Step in seconds, at most tau / 50.
        tau_override (float, optional): Time constant replacing the model's.
        config (RolloutConfig): Stop criteria.

    Returns:
        Trajectory: Samples every ``dt`` with phase attached.
    """
    tau = model.tau if tau_override is None else float(tau_override)
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if not 0 < dt <= tau / 50.0:
        raise ValueError(f"dt must be in (0, tau/50], got {dt} for tau={tau}")
    t, q, qd, qdd, x = integrate(model.flow(), tau, dt, config)
    return Trajectory(t, q, qd, qdd, phase=x)
