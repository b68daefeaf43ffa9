import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cdmp_bag.exceptions import FormatError, UnreachablePoseError
from cdmp_bag.kinematics import IkConfig, KinematicChain, solve_ik

HALF_PI = np.pi / 2


def six_joint_arm() -> KinematicChain:
    """Elbow arm with a spherical wrist, modified DH"""
    return KinematicChain(
        name="elbow",
        a=[0.0, 0.0, 0.4, 0.05, 0.0, 0.0],
        d=[0.3, 0.0, 0.0, 0.4, 0.0, 0.0],
        alpha=[0.0, -HALF_PI, 0.0, -HALF_PI, HALF_PI, -HALF_PI],
        tool_offset=[0.0, 0.0, 0.1],
        q_lo=[-3.0] * 6,
        q_hi=[3.0] * 6,
        v_max=[2.0] * 6,
        a_max=[10.0] * 6,
        home=[0.1, -0.6, 0.4, 0.2, 0.8, 0.3],
    )


def test_packaged_chain():
    chain = KinematicChain.load()
    assert chain.name == "panda"
    assert chain.dof_count == 7
    assert np.all(chain.q_lo <= chain.home) and np.all(chain.home <= chain.q_hi)


def test_zero_pose_of_planar_chain():
    chain = KinematicChain(
        name="planar",
        a=[0.0, 0.5, 0.3],
        d=[0.0, 0.0, 0.0],
        alpha=[0.0, 0.0, 0.0],
        tool_offset=[0.2, 0.0, 0.0],
        q_lo=[-3.0] * 3,
        q_hi=[3.0] * 3,
        v_max=[1.0] * 3,
        a_max=[1.0] * 3,
        home=[0.0] * 3,
    )
    position, quaternion = chain.forward([0.0, 0.0, 0.0])
    np.testing.assert_allclose(position, [1.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(quaternion, [0.0, 0.0, 0.0, 1.0], atol=1e-12)
    position, _ = chain.forward([0.0, 0.0, HALF_PI])
    np.testing.assert_allclose(position, [0.8, 0.2, 0.0], atol=1e-12)


def test_jacobian_matches_finite_differences():
    chain = KinematicChain.load()
    q = chain.home + 0.1
    J = chain.jacobian(q)
    h = 1e-6
    for i in range(chain.dof_count):
        step = np.zeros(chain.dof_count)
        step[i] = h
        ahead, back = chain.frames(q + step)[-1], chain.frames(q - step)[-1]
        np.testing.assert_allclose(J[:3, i], (ahead[:3, 3] - back[:3, 3]) / (2 * h), atol=1e-6)
        turn = Rotation.from_matrix(ahead[:3, :3] @ back[:3, :3].T).as_rotvec() / (2 * h)
        np.testing.assert_allclose(J[3:, i], turn, atol=1e-6)


def test_ik_recovers_joint_values():
    chain = six_joint_arm()
    q_true = chain.home + np.array([0.2, -0.15, 0.1, 0.2, -0.2, 0.15])
    position, quaternion = chain.forward(q_true)
    q = solve_ik(chain, position, quaternion, config=IkConfig(nullspace_gain=0.0))
    reached, turned = chain.forward(q)
    np.testing.assert_allclose(reached, position, atol=1e-6)
    assert (Rotation.from_quat(turned) * Rotation.from_quat(quaternion).inv()).magnitude() < 1e-5
    np.testing.assert_allclose(q, q_true, atol=1e-4)


def test_ik_on_redundant_arm():
    chain = KinematicChain.load()
    position, quaternion = chain.forward(chain.home + 0.1)
    q = solve_ik(chain, position, quaternion)
    np.testing.assert_allclose(chain.forward(q)[0], position, atol=1e-3)
    assert np.all(q >= chain.q_lo) and np.all(q <= chain.q_hi)


def test_unreachable_pose():
    chain = KinematicChain.load()
    with pytest.raises(UnreachablePoseError) as error:
        solve_ik(chain, [3.0, 0.0, 0.5], [0.0, 0.0, 0.0, 1.0], config=IkConfig(max_iters=50), sample=5)
    assert error.value.sample == 5
    assert error.value.residual > 1.0


def test_wrong_joint_count():
    with pytest.raises(ValueError):
        KinematicChain.load().forward(np.zeros(6))


def test_chain_file_errors(tmp_path):
    path = tmp_path / "chain.json"
    path.write_text('{"name": "arm",\n "joints": [}')
    with pytest.raises(FormatError) as error:
        KinematicChain.load(path)
    assert error.value.line == 2

    data = {"joints": [{"a": 0.0, "d": 0.0, "alpha": 0.0}], "q_lo": [-1.0], "q_hi": [1.0], "v_max": [1.0], "a_max": [1.0]}
    assert KinematicChain.from_dict(data).dof_count == 1
    with pytest.raises(FormatError):
        KinematicChain.from_dict(dict(data, gripper=True))
    with pytest.raises(FormatError):
        KinematicChain.from_dict(dict(data, convention="standard_dh"))
    with pytest.raises(FormatError):
        KinematicChain.from_dict({key: value for key, value in data.items() if key != "q_hi"})
    with pytest.raises(FormatError):
        KinematicChain.from_dict(dict(data, q_lo=[-1.0, -1.0]))
