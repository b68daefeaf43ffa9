import json

import pytest
from click.testing import CliRunner

from cdmp_bag import formats
from cdmp_bag.cli import cdmp_bag

from .conftest import bag_cloud

SLACK_LIMITS = {"margin": 1.0, "limits": {"q_lo": [-10], "q_hi": [10], "v_max": [100], "a_max": [10000]}}
TIGHT_POSITIONS = {"limits": {"q_lo": [-0.5], "q_hi": [0.5], "v_max": [100], "a_max": [10000]}}


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def model_file(tmp_path, model):
    path = tmp_path / "model.json"
    formats.write_model(path, model)
    return path


def config_file(tmp_path, document: dict, name: str = "config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(document))
    return path


def test_help(runner):
    result = runner.invoke(cdmp_bag, ["--help"])
    assert result.exit_code == 0
    for command in ("constrain", "simulate", "metrics", "compare", "demo-gen", "prep", "fit", "rollout"):
        assert command in result.output


def test_usage_errors_exit_one(runner, tmp_path):
    assert runner.invoke(cdmp_bag, ["constrain", "--method", "fast"]).exit_code == 1
    assert runner.invoke(cdmp_bag, ["rollout", "--out", str(tmp_path / "a.csv")]).exit_code == 1
    assert runner.invoke(cdmp_bag, ["fit", "--demo", str(tmp_path / "missing.csv"), "-o", "m.json"]).exit_code == 1
    assert runner.invoke(cdmp_bag, ["no-such-command"]).exit_code == 1


def test_rollout(runner, tmp_path, model_file):
    out = tmp_path / "rollout.csv"
    result = runner.invoke(cdmp_bag, ["rollout", "-m", str(model_file), "-o", str(out), "--tau", "2"])
    assert result.exit_code == 0, result.output
    trajectory = formats.read_trajectory(out)
    assert trajectory.duration == pytest.approx(2.5, abs=2e-3)


def test_constrain_within_limits(runner, tmp_path, model_file):
    out, report = tmp_path / "tau.csv", tmp_path / "tau.json"
    config = config_file(tmp_path, SLACK_LIMITS)
    result = runner.invoke(
        cdmp_bag,
        ["constrain", "-M", "tau", "-m", str(model_file), "-L", str(config), "-o", str(out), "-r", str(report)],
    )
    assert result.exit_code == 0, result.output
    document = json.loads(report.read_text())
    assert list(document)[:3] == ["method", "satisfied", "tau_final"]
    assert document["method"] == "tau"
    assert document["satisfied"] is True
    assert document["quality"] == 1.0


def test_constrain_unsatisfiable_exits_two(runner, tmp_path, model_file):
    config = config_file(tmp_path, TIGHT_POSITIONS)
    result = runner.invoke(
        cdmp_bag, ["constrain", "-M", "tau", "-m", str(model_file), "-L", str(config), "-o", str(tmp_path / "o.csv")]
    )
    assert result.exit_code == 2
    assert "position limits" in result.output


def test_bad_config_exits_three(runner, tmp_path, model_file):
    config = config_file(tmp_path, {"tc": {"gama_a": 10}})
    result = runner.invoke(
        cdmp_bag, ["constrain", "-M", "tc", "-m", str(model_file), "-L", str(config), "-o", str(tmp_path / "o.csv")]
    )
    assert result.exit_code == 3
    assert "gama_a" in result.output


def test_demonstration_pipeline(runner, tmp_path):
    demo, joints, model = tmp_path / "demo.csv", tmp_path / "joints.csv", tmp_path / "model.json"
    bundle = tmp_path / "bundle.json"
    result = runner.invoke(
        cdmp_bag, ["demo-gen", "--seed", "2", "--rate", "60", "--duration", "0.5", "--noise", "0", "-o", str(demo)]
    )
    assert result.exit_code == 0, result.output
    assert len(formats.read_demonstration(demo)) == 31
    result = runner.invoke(
        cdmp_bag, ["prep", "-d", str(demo), "-o", str(joints), "-w", "9", "-b", str(bundle)]
    )
    assert result.exit_code == 0, result.output
    assert json.loads(bundle.read_text())["distance_fraction"][0] <= 1.0
    result = runner.invoke(cdmp_bag, ["fit", "-d", str(joints), "-o", str(model), "-k", "20"])
    assert result.exit_code == 0, result.output
    assert formats.read_model(model).dof_count == 7


def test_demo_gen_is_reproducible(runner, tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    runner.invoke(cdmp_bag, ["demo-gen", "-s", "5", "-r", "50", "-o", str(first), "-j", str(tmp_path / "j.csv")])
    runner.invoke(cdmp_bag, ["demo-gen", "-s", "5", "-r", "50", "-o", str(second)])
    assert first.read_bytes() == second.read_bytes()
    assert formats.read_trajectory(tmp_path / "j.csv").dof_count == 7


def test_metrics_to_stdout(runner, tmp_path):
    path = tmp_path / "markers.csv"
    formats.write_markers(path, bag_cloud())
    result = runner.invoke(cdmp_bag, ["metrics", "-c", str(path), "-R", str(path)])
    assert result.exit_code == 0, result.output
    report = json.loads(result.output)
    assert report["area_ratio"] == 1.0
    assert report["volume_ratio"] == 1.0


def test_metrics_with_bad_markers(runner, tmp_path):
    good, bad = tmp_path / "good.csv", tmp_path / "bad.csv"
    formats.write_markers(good, bag_cloud())
    bad.write_text("x,y,z,label\n0,0,inf,rim\n")
    result = runner.invoke(cdmp_bag, ["metrics", "-c", str(bad), "-R", str(good)])
    assert result.exit_code == 3
    assert "line 2" in result.output


def test_metrics_stage_failure_exits_two(runner, tmp_path):
    good, few = tmp_path / "good.csv", tmp_path / "few.csv"
    formats.write_markers(good, bag_cloud())
    few.write_text("x,y,z,label\n0,0,0,rim\n1,0,0,rim\n0,1,0,rim\n")
    result = runner.invoke(cdmp_bag, ["metrics", "-c", str(few), "-R", str(good)])
    assert result.exit_code == 2
    assert "filter" in result.output


def test_compare(runner, tmp_path, model_file):
    config = config_file(tmp_path, SLACK_LIMITS)
    result = runner.invoke(cdmp_bag, ["compare", "-m", str(model_file), "-L", str(config), "-o", str(tmp_path / "cmp")])
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "cmp" / "compare.csv").read_text().splitlines()
    assert lines[0].startswith("method,duration,tau_final,min_margin")
    assert [line.split(",")[0] for line in lines[1:]] == ["tau", "tc", "opt"]


def test_simulate_writes_every_output(runner, tmp_path):
    out = tmp_path / "runs"
    database = f"sqlite:///{(tmp_path / 'runs.db').as_posix()}"
    args = ["simulate", "-M", "tau", "-n", "2", "-s", "3", "-o", str(out), "--svg", "-d", database]
    result = runner.invoke(cdmp_bag, args)
    assert result.exit_code == 0, result.output
    assert "episodes reached the targets" in result.output
    for name in ("episode_000.csv", "episode_001.csv", "summary.csv", "summary.json", "area_ratio.svg"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["method"] == "tau"
    assert summary["runs"] == 2
    assert summary["seed"] == 3
    assert 0 < summary["quality"] <= 1

    result = runner.invoke(cdmp_bag, ["clear", "-d", database, "-y"])
    assert result.exit_code == 0, result.output


def test_simulate_is_deterministic(runner, tmp_path):
    for name in ("first", "second"):
        result = runner.invoke(cdmp_bag, ["simulate", "-M", "tau", "-n", "2", "-s", "1", "-o", str(tmp_path / name)])
        assert result.exit_code == 0, result.output
    for name in ("summary.csv", "summary.json", "episode_001.csv"):
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()
