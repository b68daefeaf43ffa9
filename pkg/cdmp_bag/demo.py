"""Demonstration preprocessing: hand distance, rotation filtering, smoothing, IK.

Quaternions are scalar-last (x, y, z, w).
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import savgol_coeffs, savgol_filter
from scipy.spatial.transform import Rotation

from cdmp_bag.constraints import KinematicLimits
from cdmp_bag.dmp import Trajectory
from cdmp_bag.exceptions import DegenerateDemoError
from cdmp_bag.kinematics import IkConfig, KinematicChain, solve_ik

SAVGOL_ORDER = 3
DEFAULT_WINDOW = 21
DEFAULT_RATE = 120.0
UNIT_TOLERANCE = 1e-9
TWIST_FLOOR = 1e-12
SIDES = ("left", "right")


def _array(values, columns: int) -> np.ndarray:
    array = np.array(values, dtype=float).reshape(-1, columns)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class HandPosePair:
    """Synchronized poses of both hands.

    Args:
        timestamps (np.ndarray): Strictly increasing, seconds. Shape (N,).
        left_position, right_position (np.ndarray): Shape (N, 3), m.
        left_quaternion, right_quaternion (np.ndarray): Unit quaternions, shape (N, 4).
        flags (tuple): Notes left by processing steps.
    """

    timestamps: np.ndarray
    left_position: np.ndarray
    left_quaternion: np.ndarray
    right_position: np.ndarray
    right_quaternion: np.ndarray
    flags: tuple = field(default=())

    def __post_init__(self):
        t = np.array(self.timestamps, dtype=float).reshape(-1)
        t.setflags(write=False)
        object.__setattr__(self, "timestamps", t)
        for side in SIDES:
            object.__setattr__(self, f"{side}_position", _array(getattr(self, f"{side}_position"), 3))
            object.__setattr__(self, f"{side}_quaternion", _array(getattr(self, f"{side}_quaternion"), 4))
            for name in ("position", "quaternion"):
                if getattr(self, f"{side}_{name}").shape[0] != t.size:
                    raise ValueError(f"{side} {name} count differs from the {t.size} timestamps")
            norms = np.linalg.norm(getattr(self, f"{side}_quaternion"), axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
                raise ValueError(f"{side} quaternions must have unit norm")
        if t.size < 2:
            raise ValueError("A demonstration needs at least 2 samples")
        if np.any(np.diff(t) <= 0):
            raise ValueError("Timestamps must be strictly increasing")
        object.__setattr__(self, "flags", tuple(self.flags))

    def __len__(self) -> int:
        return self.timestamps.size

    def position(self, side: str) -> np.ndarray:
        return getattr(self, f"{side}_position")

    def quaternion(self, side: str) -> np.ndarray:
        return getattr(self, f"{side}_quaternion")


@dataclass(frozen=True, eq=False)
class DemoBundle:
    path: HandPosePair
    distance_fraction: np.ndarray
    main_axis: np.ndarray


@dataclass(frozen=True)
class PrepConfig:
    """Preprocessing settings.

    Args:
        window (int): Smoothing window, odd sample count.
        scale (float): Uniform amplitude scale about the first sample.
        side (str): Arm whose hand is converted to joint space.
        base_position (tuple): That arm's base in the demonstration frame, m.
    """

    window: int = DEFAULT_WINDOW
    scale: float = 1.0
    side: str = "left"
    base_position: tuple = (0.0, 0.3, 0.0)

    def __post_init__(self):
        assert self.window > 0 and self.window % 2 == 1, f"window must be odd and positive, got {self.window}"
        assert self.scale > 0, f"scale must be positive, got {self.scale}"
        assert self.side in SIDES, f"side must be one of {', '.join(SIDES)}"


def distance_profile(pair: HandPosePair) -> np.ndarray:
    """Hand distance per sample as a fraction of the largest one.

    Raises:
        DegenerateDemoError: The hands never separate.
    """
    distance = np.linalg.norm(pair.left_position - pair.right_position, axis=1)
    peak = distance.max()
    if peak <= 1e-12:
        raise DegenerateDemoError("Hands coincide in every sample; distance profile undefined")
    return distance / peak


def estimate_main_axis(pair: HandPosePair, side: str = "left") -> np.ndarray:
    """Dominant direction of the hand's angular velocity.

    Principal eigenvector of the angular velocity scatter about the origin, so
    a constant-rate spin resolves to its axis. The sign makes the largest
    component positive.

    Raises:
        DegenerateDemoError: The hand never rotates.
    """
    rotations = Rotation.from_quat(pair.quaternion(side))
    dt = np.diff(pair.timestamps)[:, None]
    omega = (rotations[1:] * rotations[:-1].inv()).as_rotvec() / dt
    scatter = omega.T @ omega
    values, vectors = np.linalg.eigh(scatter)
    if values[-1] <= 1e-18:
        raise DegenerateDemoError(f"The {side} hand does not rotate; main axis undefined")
    axis = vectors[:, -1]
    if axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis
    return axis


def twist(quaternions, axis) -> tuple:
    """Twist components about ``axis`` and a mask of samples with no twist.

    Args:
        quaternions (np.ndarray): Shape (N, 4).
        axis (np.ndarray): Unit 3-vector.

    Returns:
        tuple: (np.ndarray (N, 4), np.ndarray bool (N,))
    """
    q = np.atleast_2d(np.asarray(quaternions, dtype=float))
    axis = np.asarray(axis, dtype=float)
    projected = (q[:, :3] @ axis)[:, None] * axis
    result = np.column_stack([projected, q[:, 3]])
    norms = np.linalg.norm(result, axis=1)
    empty = norms <= TWIST_FLOOR
    result[empty] = (0.0, 0.0, 0.0, 1.0)
    result[~empty] /= norms[~empty, None]
    return result, empty


def filter_rotation(pair: HandPosePair, main_axis, reference: bool = False) -> HandPosePair:
    """Keep only rotation about ``main_axis``.

    Args:
        pair (HandPosePair): Poses.
        main_axis (np.ndarray): Unit 3-vector.
        reference (bool): Filter each hand's rotation relative to its first
            sample instead of the frame axes.

    Returns:
        HandPosePair: Twist-only orientations. Samples without twist become the
        identity (or the reference) and the result is flagged.
    """
    axis = np.asarray(main_axis, dtype=float)
    if abs(np.linalg.norm(axis) - 1.0) > UNIT_TOLERANCE:
        raise ValueError("main_axis must have unit norm")
    updates, flags = {}, list(pair.flags)
    for side in SIDES:
        rotations = Rotation.from_quat(pair.quaternion(side))
        start = rotations[0] if reference else Rotation.identity()
        relative = (rotations * start.inv()).as_quat()
        filtered, empty = twist(relative, axis)
        if empty.any():
            logging.warning(f"{int(empty.sum())} {side} samples have no twist about the main axis")
            flags.append(f"{side} twist undefined")
        updates[f"{side}_quaternion"] = (Rotation.from_quat(filtered) * start).as_quat()
    return replace(pair, flags=tuple(flags), **updates)


def _smooth_quaternions(quaternions: np.ndarray, window: int) -> np.ndarray:
    aligned = np.array(quaternions, dtype=float)
    for k in range(1, aligned.shape[0]):
        if aligned[k] @ aligned[k - 1] < 0:
            aligned[k] = -aligned[k]
    half = window // 2
    n = aligned.shape[0]
    smoothed = np.empty_like(aligned)
    for k in range(n):
        reach = min(half, k, n - 1 - k)
        mean = aligned[k - reach : k + reach + 1].mean(axis=0)
        smoothed[k] = mean / np.linalg.norm(mean)
    return smoothed


def _smooth_positions(positions: np.ndarray, window: int) -> np.ndarray:
    smoothed = savgol_filter(positions, window, min(SAVGOL_ORDER, window - 1), axis=0, mode="interp")
    n, half = positions.shape[0], window // 2
    for k in [*range(min(half, n)), *range(max(n - half, half), n)]:
        reach = min(half, k, n - 1 - k)
        if reach == 0:
            smoothed[k] = positions[k]
            continue
        coefficients = savgol_coeffs(2 * reach + 1, min(SAVGOL_ORDER, 2 * reach), use="dot")
        smoothed[k] = coefficients @ positions[k - reach : k + reach + 1]
    return smoothed


def smooth(path: HandPosePair, window: int = DEFAULT_WINDOW) -> HandPosePair:
    """Savitzky-Golay positions and moving-average quaternions.

    Positions use order 3 (lower for windows under 5); quaternions are
    hemisphere-aligned, averaged and renormalized. Both windows shrink
    symmetrically toward the ends, so the first and last samples are kept.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and positive, got {window}")
    if window > len(path):
        raise ValueError(f"window {window} exceeds the {len(path)} samples")
    if window == 1:
        return path
    updates = {}
    for side in SIDES:
        updates[f"{side}_position"] = _smooth_positions(path.position(side), window)
        updates[f"{side}_quaternion"] = _smooth_quaternions(path.quaternion(side), window)
    return replace(path, **updates)


def scale_amplitude(path: HandPosePair, scale: float) -> HandPosePair:
    """Positions scaled about each hand's first sample"""
    if scale == 1.0:
        return path
    updates = {}
    for side in SIDES:
        position = path.position(side)
        updates[f"{side}_position"] = position[0] + scale * (position - position[0])
    return replace(path, **updates)


def mirror_pose_pair(pair: HandPosePair, source: str = "left") -> HandPosePair:
    """Replace the other hand by the mirror image of ``source`` across the x-z plane"""
    other = "right" if source == "left" else "left"
    position = pair.position(source) * np.array([1.0, -1.0, 1.0])
    quaternion = pair.quaternion(source) * np.array([-1.0, 1.0, -1.0, 1.0])
    return replace(pair, **{f"{other}_position": position, f"{other}_quaternion": quaternion})


def to_joint_space(
    path: HandPosePair,
    chain: KinematicChain,
    limits: KinematicLimits = None,
    side: str = "left",
    base_position=(0.0, 0.0, 0.0),
    ik: IkConfig = IkConfig(),
    seed=None,
) -> Trajectory:
    """Joint trajectory tracking one hand.

    Each sample is solved by damped least squares seeded with the previous
    solution; joints are clamped to the limits (the chain's when omitted).

    Raises:
        UnreachablePoseError: A sample stays more than ``ik.tolerance`` off.
    """
    q_lo, q_hi = (chain.q_lo, chain.q_hi) if limits is None else (limits.q_lo, limits.q_hi)
    positions = path.position(side) - np.asarray(base_position, dtype=float)
    quaternions = path.quaternion(side)
    q = chain.home if seed is None else np.asarray(seed, dtype=float)
    solutions = []
    for k in range(len(path)):
        q = solve_ik(chain, positions[k], quaternions[k], q, q_lo, q_hi, ik, sample=k)
        solutions.append(q)
    logging.info(f"Converted {len(path)} {side} hand poses to joint space")
    return Trajectory.from_positions(path.timestamps - path.timestamps[0], np.array(solutions).T)


def prepare(
    pair: HandPosePair,
    chain: KinematicChain,
    limits: KinematicLimits = None,
    config: PrepConfig = PrepConfig(),
    ik: IkConfig = IkConfig(),
):
    """Distance profile, rotation filtering, smoothing, scaling and IK.

    Returns:
        tuple: (DemoBundle, Trajectory)
    """
    fraction = distance_profile(pair)
    axis = estimate_main_axis(pair, config.side)
    logging.info(f"Main rotation axis {np.round(axis, 4).tolist()}")
    filtered = filter_rotation(pair, axis, reference=True)
    window = min(config.window, len(pair) - (1 - len(pair) % 2))
    smoothed = scale_amplitude(smooth(filtered, window), config.scale)
    bundle = DemoBundle(path=smoothed, distance_fraction=fraction, main_axis=axis)
    trajectory = to_joint_space(smoothed, chain, limits, config.side, config.base_position, ik)
    return bundle, trajectory


FLING_AMPLITUDE = np.array([0.4, 1.5, 0.3, 1.8, 0.2, -0.6, 0.3])


def minimum_jerk(s) -> np.ndarray:
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def synthetic_joint_demo(
    seed: int = 0,
    chain: KinematicChain = None,
    duration: float = 1.0,
    dt: float = 0.01,
    jitter: float = 0.1,
) -> Trajectory:
    """Fast rest-to-rest fling from the chain's home configuration.

    Joint amplitudes are the nominal fling scaled by a seeded factor in
    [1 - jitter, 1]; the shoulder and elbow exceed the packaged arm's speed
    limits.
    """
    chain = KinematicChain.load() if chain is None else chain
    rng = np.random.default_rng(seed)
    amplitude = np.resize(FLING_AMPLITUDE, chain.dof_count) * rng.uniform(1.0 - jitter, 1.0, chain.dof_count)
    steps = int(round(duration / dt))
    t = np.arange(steps + 1) * dt
    positions = chain.home[:, None] + amplitude[:, None] * minimum_jerk(t / duration)[None, :]
    return Trajectory.from_positions(t, positions)


def synthetic_demonstration(
    seed: int = 0,
    rate: float = DEFAULT_RATE,
    duration: float = 1.0,
    noise: float = 0.002,
    chain: KinematicChain = None,
    base_position=PrepConfig.base_position,
) -> HandPosePair:
    """Noisy bimanual fling: the left hand follows the chain's tool on the
    synthetic joint fling, the right hand mirrors it across the x-z plane"""
    chain = KinematicChain.load() if chain is None else chain
    joints = synthetic_joint_demo(seed, chain, duration, 1.0 / rate)
    rng = np.random.default_rng((seed, 1))
    positions, quaternions = [], []
    for q in joints.positions.T:
        position, quaternion = chain.forward(q)
        positions.append(position + np.asarray(base_position, dtype=float))
        quaternions.append(quaternion)
    positions = np.array(positions) + rng.normal(0.0, noise, (len(positions), 3))
    jitter = Rotation.from_rotvec(rng.normal(0.0, noise, (len(quaternions), 3)))
    quaternions = (jitter * Rotation.from_quat(quaternions)).as_quat()
    quaternions /= np.linalg.norm(quaternions, axis=1)[:, None]
    one_hand = HandPosePair(joints.timestamps, positions, quaternions, positions, quaternions)
    return mirror_pose_pair(one_hand)
