"""Serial chains in modified Denavit-Hartenberg form and damped least squares IK.

Quaternions are scalar-last (x, y, z, w), the ``scipy.spatial.transform``
convention.
"""

import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.spatial.transform import Rotation

from cdmp_bag.exceptions import FormatError, UnreachablePoseError

DEFAULT_CHAIN = "panda.json"
CONVERGED = 1e-10


def _dh(a: float, d: float, alpha: float, theta: float) -> np.ndarray:
    """RotX(alpha) TransX(a) RotZ(theta) TransZ(d)"""
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array(
        [
            [ct, -st, 0.0, a],
            [st * ca, ct * ca, -sa, -d * sa],
            [st * sa, ct * sa, ca, d * ca],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


@dataclass(frozen=True, eq=False)
class KinematicChain:
    """Revolute serial chain.

    Args:
        name (str): Chain name.
        a, d, alpha (np.ndarray): Modified DH parameters per joint, m and rad.
        tool_offset (np.ndarray): Flange-to-tool translation in the last frame, m.
        q_lo, q_hi (np.ndarray): Joint position limits, rad.
        v_max, a_max (np.ndarray): Joint speed and acceleration limits.
        home (np.ndarray): Default IK seed.
    """

    name: str
    a: np.ndarray
    d: np.ndarray
    alpha: np.ndarray
    tool_offset: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray
    v_max: np.ndarray
    a_max: np.ndarray
    home: np.ndarray

    def __post_init__(self):
        for name in ("a", "d", "alpha", "tool_offset", "q_lo", "q_hi", "v_max", "a_max", "home"):
            array = np.array(getattr(self, name), dtype=float)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        n = self.a.size
        for name in ("d", "alpha", "q_lo", "q_hi", "v_max", "a_max", "home"):
            if getattr(self, name).size != n:
                raise ValueError(f"'{name}' has {getattr(self, name).size} entries for {n} joints")
        if self.tool_offset.shape != (3,):
            raise ValueError("tool_offset must hold 3 values")
        if np.any(self.q_lo >= self.q_hi):
            raise ValueError("q_lo must be below q_hi")

    @property
    def dof_count(self) -> int:
        return self.a.size

    @property
    def centre(self) -> np.ndarray:
        return 0.5 * (self.q_lo + self.q_hi)

    @property
    def reach(self) -> float:
        """Upper bound on the base-to-tool distance"""
        return float(
            np.sum(np.abs(self.a)) + np.sum(np.abs(self.d)) + np.linalg.norm(self.tool_offset)
        )

    @classmethod
    def from_dict(cls, data: dict, path=None) -> "KinematicChain":
        known = {"name", "convention", "joints", "tool_offset", "q_lo", "q_hi", "v_max", "a_max", "home"}
        unknown = set(data) - known
        if unknown:
            raise FormatError(f"Unknown chain keys: {', '.join(sorted(unknown))}", path)
        if data.get("convention", "modified_dh") != "modified_dh":
            raise FormatError(f"Unsupported convention '{data['convention']}'", path)
        try:
            joints = data["joints"]
            return cls(
                name=data.get("name", "chain"),
                a=[joint["a"] for joint in joints],
                d=[joint["d"] for joint in joints],
                alpha=[joint["alpha"] for joint in joints],
                tool_offset=data.get("tool_offset", [0.0, 0.0, 0.0]),
                q_lo=data["q_lo"],
                q_hi=data["q_hi"],
                v_max=data["v_max"],
                a_max=data["a_max"],
                home=data.get("home", 0.5 * (np.asarray(data["q_lo"]) + np.asarray(data["q_hi"]))),
            )
        except KeyError as e:
            raise FormatError(f"Missing chain key {e}", path) from e
        except ValueError as e:
            raise FormatError(str(e), path) from e

    @classmethod
    def load(cls, path=None) -> "KinematicChain":
        """Chain from a JSON file, or the packaged 7-DOF arm"""
        if path is None:
            text = resources.files("cdmp_bag").joinpath("data", DEFAULT_CHAIN).read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(e.msg, path, e.lineno, e.colno) from e
        return cls.from_dict(data, path)

    def frames(self, q) -> list:
        """Homogeneous transforms of every joint frame, then the tool"""
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dof_count,):
            raise ValueError(f"Expected {self.dof_count} joint values, got shape {q.shape}")
        transform = np.eye(4)
        frames = []
        for i in range(self.dof_count):
            transform = transform @ _dh(self.a[i], self.d[i], self.alpha[i], q[i])
            frames.append(transform)
        tool = np.eye(4)
        tool[:3, 3] = self.tool_offset
        frames.append(transform @ tool)
        return frames

    def forward(self, q):
        """Tool position (3,) and quaternion (4,)"""
        tool = self.frames(q)[-1]
        return tool[:3, 3].copy(), Rotation.from_matrix(tool[:3, :3]).as_quat()

    def jacobian(self, q) -> np.ndarray:
        """Geometric Jacobian (6, n): linear rows, then angular rows, base frame"""
        frames = self.frames(q)
        tip = frames[-1][:3, 3]
        J = np.zeros((6, self.dof_count))
        for i, frame in enumerate(frames[:-1]):
            axis = frame[:3, 2]
            J[:3, i] = np.cross(axis, tip - frame[:3, 3])
            J[3:, i] = axis
        return J


@dataclass(frozen=True)
class IkConfig:
    """Damped least squares settings.

    Args:
        damping (float): Constant damping floor.
        damping_gain (float): Damping added per unit of task error.
        nullspace_gain (float): Pull toward the joint range centre.
        max_iters (int): Iterations per pose.
        tolerance (float): Accepted residual, m. Defaults to 1 mm.
        orientation_weight (float): Length that converts rad to m in the residual.
        max_step (float): Joint step clamp per iteration, rad.
    """

    damping: float = 1e-6
    damping_gain: float = 1e-3
    nullspace_gain: float = 0.05
    max_iters: int = 300
    tolerance: float = 1e-3
    orientation_weight: float = 0.1
    max_step: float = 0.2

    def __post_init__(self):
        assert self.damping > 0, "damping must be positive"
        assert self.max_iters > 0, "max_iters must be positive"
        assert self.tolerance > 0, "tolerance must be positive"


def pose_error(chain: KinematicChain, q, position, quaternion, weight: float) -> np.ndarray:
    """Task error (target - current) with the orientation part scaled to meters"""
    current_position, current_quaternion = chain.forward(q)
    rotation = Rotation.from_quat(quaternion) * Rotation.from_quat(current_quaternion).inv()
    return np.concatenate([np.asarray(position, dtype=float) - current_position, weight * rotation.as_rotvec()])


def solve_ik(
    chain: KinematicChain,
    position,
    quaternion,
    seed=None,
    q_lo=None,
    q_hi=None,
    config: IkConfig = IkConfig(),
    sample: int = 0,
) -> np.ndarray:
    """Joint values reaching a tool pose.

    Args:
        chain (KinematicChain): Arm.
        position (np.ndarray): Target tool position, m.
        quaternion (np.ndarray): Target tool orientation (x, y, z, w).
        seed (np.ndarray): Start values. Defaults to ``chain.home``.
        q_lo, q_hi (np.ndarray): Joint clamps. Default to the chain limits.
        config (IkConfig): Solver settings.
        sample (int): Index reported on failure.

    Returns:
        np.ndarray: Joint values.

    Raises:
        UnreachablePoseError: Residual stays above ``config.tolerance``.
    """
    q = np.array(chain.home if seed is None else seed, dtype=float)
    q_lo = chain.q_lo if q_lo is None else np.asarray(q_lo, dtype=float)
    q_hi = chain.q_hi if q_hi is None else np.asarray(q_hi, dtype=float)
    centre = 0.5 * (q_lo + q_hi)
    q = np.clip(q, q_lo, q_hi)
    weights = np.concatenate([np.ones(3), np.full(3, config.orientation_weight)])
    identity = np.eye(chain.dof_count)

    error = pose_error(chain, q, position, quaternion, config.orientation_weight)
    for _ in range(config.max_iters):
        norm = np.linalg.norm(error)
        if norm <= CONVERGED:
            break
        J = chain.jacobian(q) * weights[:, None]
        lu = lu_factor(J @ J.T + (config.damping + config.damping_gain * norm) * np.eye(6))
        step = J.T @ lu_solve(lu, error)
        if config.nullspace_gain > 0:
            projector = identity - J.T @ lu_solve(lu, J)
            step += projector @ (config.nullspace_gain * (centre - q))
        largest = np.max(np.abs(step))
        if largest > config.max_step:
            step *= config.max_step / largest
        q = np.clip(q + step, q_lo, q_hi)
        error = pose_error(chain, q, position, quaternion, config.orientation_weight)

    residual = float(np.linalg.norm(error))
    if residual > config.tolerance:
        raise UnreachablePoseError(sample, residual)
    logging.debug(f"IK sample {sample}: residual {residual:.3g}")
    return q
