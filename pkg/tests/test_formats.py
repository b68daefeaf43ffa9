import json

import numpy as np
import pytest

from cdmp_bag import formats
from cdmp_bag.dmp import rollout
from cdmp_bag.exceptions import FormatError
from cdmp_bag.filters import Label, MarkerCloud
from cdmp_bag.kinematics import KinematicChain
from cdmp_bag.main import EpisodeTrace
from cdmp_bag.metrics import BagMetricsReport
from cdmp_bag.sim import BagSimState

from .conftest import minimum_jerk_trajectory

EXAMPLE_CONFIG = """{
  "seed": 3,
  "dt": "0.001 s",
  "margin": 0.98,
  "limits": {"chain": "default"},
  "tc": {"gamma_a": 100.0, "gamma_r": "2 1/s"},
  "opt": {"lambda_mode": "position", "grid_count": 100},
  "alpha": {"k_alpha": "1.0 1/m", "b_alpha": "0.12 m"},
  "sim": {"preset": "A"},
  "episode": {"area_target": 0.6, "volume_target": 0.7, "max_dynamic": 10}
}
"""


def write(path, text: str):
    path.write_text(text, encoding="utf-8")
    return path


def test_trajectory_file_is_exact(tmp_path, model):
    trajectory = rollout(model, 0.001)
    path = tmp_path / "rollout.csv"
    formats.write_trajectory(path, trajectory)
    again = formats.read_trajectory(path)
    np.testing.assert_array_equal(again.timestamps, trajectory.timestamps)
    np.testing.assert_array_equal(again.accelerations, trajectory.accelerations)
    first = path.read_bytes()
    formats.write_trajectory(path, again)
    assert path.read_bytes() == first
    assert first.splitlines()[0] == b"t,q0,qd0,qdd0"
    assert b"\r" not in first


def test_positions_only_trajectory(tmp_path):
    demo = minimum_jerk_trajectory(start=[0.0, 1.0], goal=[1.0, 0.5])
    path = tmp_path / "joints.csv"
    formats.write_trajectory(path, demo, derivatives=False)
    assert path.read_text().splitlines()[0] == "t,q0,q1"
    loaded = formats.read_trajectory(path)
    assert loaded.dof_count == 2
    np.testing.assert_array_equal(loaded.positions, demo.positions)


def test_non_finite_cell_is_located(tmp_path):
    path = write(tmp_path / "bad.csv", "t,q0\n0,1\n0.1,nan\n")
    with pytest.raises(FormatError) as error:
        formats.read_trajectory(path)
    assert error.value.line == 3
    assert error.value.column == "q0"


def test_malformed_trajectory_files(tmp_path):
    with pytest.raises(FormatError) as error:
        formats.read_trajectory(write(tmp_path / "a.csv", "time,q0\n0,1\n"))
    assert error.value.line == 1
    with pytest.raises(FormatError) as error:
        formats.read_trajectory(write(tmp_path / "b.csv", "t,q0\n0,1\n0.1\n"))
    assert error.value.line == 3
    with pytest.raises(FormatError):
        formats.read_trajectory(write(tmp_path / "c.csv", "t,q0\n0,1\n0,2\n"))
    with pytest.raises(FormatError):
        formats.read_trajectory(tmp_path / "missing.csv")


def test_non_finite_values_are_not_written(tmp_path):
    with pytest.raises(FormatError):
        formats.number(float("inf"))
    with pytest.raises(FormatError):
        formats.write_json(tmp_path / "report.json", {"value": float("nan")})
    assert not (tmp_path / "report.json").exists()


def test_marker_file(tmp_path):
    cloud = MarkerCloud(points=np.arange(12.0).reshape(4, 3) / 10, labels=["rim", "rim_inner", "body", "unknown"])
    path = tmp_path / "markers.csv"
    formats.write_markers(path, cloud)
    loaded = formats.read_markers(path)
    np.testing.assert_array_equal(loaded.points, cloud.points)
    assert loaded.labels == (Label.RIM, Label.RIM_INNER, Label.BODY, Label.UNKNOWN)


def test_unknown_marker_label(tmp_path):
    path = write(tmp_path / "markers.csv", "x,y,z,label\n0,0,0,rim\n1,0,0,handle\n")
    with pytest.raises(FormatError) as error:
        formats.read_markers(path)
    assert error.value.line == 3
    assert error.value.column == "label"


def test_model_file(tmp_path, model):
    path = tmp_path / "model.json"
    formats.write_model(path, model)
    loaded = formats.read_model(path)
    np.testing.assert_array_equal(loaded.weights, model.weights)
    np.testing.assert_array_equal(rollout(loaded, 0.001).positions, rollout(model, 0.001).positions)


def test_model_keys_are_checked(tmp_path, model):
    data = formats.model_to_dict(model)
    with pytest.raises(FormatError, match="Unknown model keys: kernels"):
        formats.model_from_dict(dict(data, kernels=30))
    del data["tau"]
    with pytest.raises(FormatError, match="Missing model keys: tau"):
        formats.model_from_dict(data)
    with pytest.raises(FormatError) as error:
        formats.read_model(write(tmp_path / "model.json", '{"tau": NaN}'))
    assert "NaN" in str(error.value)


def test_example_configuration(tmp_path):
    config = formats.read_config(write(tmp_path / "config.json", EXAMPLE_CONFIG))
    chain = KinematicChain.load()
    assert config.seed == 3
    assert config.dt == 0.001
    assert config.tc.gamma_r == 2.0
    assert config.alpha.k_alpha == 1.0 and config.alpha.b_alpha == 0.12
    assert config.sim.stiffness == 0.1
    np.testing.assert_array_equal(config.limits.v_hi, chain.v_max)
    assert config.limits.margin == 0.98


def test_unknown_config_key_is_located(tmp_path):
    path = write(tmp_path / "config.json", '{\n  "tc": {\n    "gama_a": 10\n  }\n}\n')
    with pytest.raises(FormatError) as error:
        formats.read_config(path)
    assert "gama_a" in str(error.value)
    assert (error.value.line, error.value.column) == (3, 5)


def test_wrong_unit_is_rejected(tmp_path):
    path = write(tmp_path / "config.json", '{"dt": "1 ms"}')
    with pytest.raises(FormatError, match="expected 's'"):
        formats.read_config(path)
    path = write(tmp_path / "config.json", '{"margin": "0.9 m"}')
    with pytest.raises(FormatError, match="no unit"):
        formats.read_config(path)


def test_invalid_config_values(tmp_path):
    with pytest.raises(FormatError):
        formats.read_config(write(tmp_path / "a.json", '{"tc": {"gamma_a": -1}}'))
    with pytest.raises(FormatError):
        formats.read_config(write(tmp_path / "b.json", '{"tc": 5}'))
    with pytest.raises(FormatError):
        formats.read_config(write(tmp_path / "c.json", '{"sim": {"preset": "Q"}}'))
    with pytest.raises(FormatError):
        formats.read_config(write(tmp_path / "d.json", '{"limits": {"q_lo": [-1], "q_hi": [1]}}'))


def test_explicit_limits(tmp_path):
    text = json.dumps({"limits": {"q_lo": [-1, -2], "q_hi": [1, 2], "v_max": "[1, 2]", "a_max": [10, 20]}})
    with pytest.raises(FormatError):
        formats.read_config(write(tmp_path / "a.json", text))
    text = json.dumps({"limits": {"q_lo": [-1, -2], "q_hi": [1, 2], "v_max": [1, 2], "a_max": ["10 rad/s^2", 20]}})
    limits = formats.read_config(write(tmp_path / "b.json", text)).limits
    np.testing.assert_array_equal(limits.v_lo, [-1.0, -2.0])
    np.testing.assert_array_equal(limits.a_hi, [10.0, 20.0])


def test_configuration_document_reads_back(tmp_path):
    config = formats.read_config(write(tmp_path / "config.json", EXAMPLE_CONFIG))
    path = tmp_path / "again.json"
    formats.write_json(path, formats.config_to_dict(config))
    again = formats.read_config(path)
    assert again.tc == config.tc
    assert again.opt == config.opt
    assert again.sim == config.sim
    assert again.episode == config.episode
    np.testing.assert_array_equal(again.limits.q_hi, config.limits.q_hi)


def test_trace_table(tmp_path):
    trace = EpisodeTrace(seed=1)
    report = BagMetricsReport(
        volume=1.0, area=1.0, elongation=0.9, delta_elongation=0.1, volume_ratio=0.8, area_ratio=0.7
    )
    trace.record("initial", "none", BagSimState(crumple=1.0, gripper_um=300_000), report)
    trace.record("dynamic", "dynamic", BagSimState(crumple=0.5, gripper_um=300_000, dynamic_count=1), report)
    path = tmp_path / "episode_000.csv"
    formats.write_trace(path, trace)
    table = formats.read_trace_table(path)
    assert table["stage"] == ["initial", "dynamic"]
    np.testing.assert_array_equal(table["index"], [0, 1])
    np.testing.assert_array_equal(table["crumple"], [1.0, 0.5])
    np.testing.assert_array_equal(table["gripper_distance"], [0.3, 0.3])


def test_plain_values():
    assert formats.plain({"a": np.float64(1.5), 2: (np.int64(3), np.bool_(True)), "c": Label.RIM}) == {
        "a": 1.5,
        "2": [3, True],
        "c": "rim",
    }
    assert formats.dumps({"b": 1, "a": 2}) == '{\n  "b": 1,\n  "a": 2\n}\n'
