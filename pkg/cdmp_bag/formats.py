"""File formats: CSV for samples, JSON for models, reports and run configuration.

Numbers are written with 17 significant digits and LF line endings so equal
inputs give equal bytes and every value round-trips exactly.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from cdmp_bag.constraints import KinematicLimits, OptDmpConfig, TcConfig
from cdmp_bag.demo import HandPosePair
from cdmp_bag.dmp import CanonicalSystem, DmpModel, KernelGrid, Trajectory
from cdmp_bag.exceptions import FormatError
from cdmp_bag.filters import Label, MarkerCloud
from cdmp_bag.kinematics import KinematicChain
from cdmp_bag.main import EpisodeConfig
from cdmp_bag.metrics import AlphaRule
from cdmp_bag.sim import BagSimConfig
from cdmp_bag.utils import write_atomic

NUMBER_FORMAT = ".17g"
TRACE_HEADER = (
    "index",
    "stage",
    "action",
    "area_ratio",
    "volume_ratio",
    "elongation",
    "delta_elongation",
    "crumple",
    "gripper_distance",
)
MODEL_KEYS = (
    "weights", "goal", "start", "tau", "alpha_z", "beta_z", "alpha_x", "centers", "widths", "degenerate",
)
DEMO_HEADER = (
    "t",
    "lx", "ly", "lz", "lqx", "lqy", "lqz", "lqw",
    "rx", "ry", "rz", "rqx", "rqy", "rqz", "rqw",
)


def number(value) -> str:
    value = float(value)
    if not math.isfinite(value):
        raise FormatError(f"Refusing to write non-finite value {value}")
    return format(value, NUMBER_FORMAT)


def _write_rows(path, header, rows) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    try:
        write_atomic(path, buffer.getvalue())
    except OSError as e:
        raise FormatError(f"Cannot write file: {e.strerror}", path) from e


def _read_rows(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise FormatError(f"Cannot read file: {e.strerror}", path) from e
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError("Empty file", path, 1)
    return rows[0], rows[1:]


def _parse_number(cell: str, path, line: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise FormatError(f"'{cell}' is not a number", path, line, column)
    if not math.isfinite(value):
        raise FormatError(f"Non-finite value '{cell}'", path, line, column)
    return value


def _numeric_table(path, header, rows, expected_width: int = None) -> np.ndarray:
    width = len(header) if expected_width is None else expected_width
    table = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != len(header):
            raise FormatError(f"Expected {len(header)} cells, found {len(row)}", path, line)
        for j in range(width):
            table[i, j] = _parse_number(row[j], path, line, header[j])
    return table


def write_trajectory(path, trajectory: Trajectory, derivatives: bool = True) -> None:
    """Header ``t,q0..,qd0..,qdd0..``; positions only when ``derivatives`` is False"""
    d = trajectory.dof_count
    header = ["t"] + [f"q{i}" for i in range(d)]
    blocks = [trajectory.timestamps[None, :], trajectory.positions]
    if derivatives:
        header += [f"qd{i}" for i in range(d)] + [f"qdd{i}" for i in range(d)]
        blocks += [trajectory.velocities, trajectory.accelerations]
    data = np.vstack(blocks).T
    _write_rows(path, header, ([number(v) for v in row] for row in data))


def read_trajectory(path) -> Trajectory:
    """Trajectory from CSV; derivatives are recomputed when the file has none"""
    header, rows = _read_rows(path)
    columns = len(header)
    if header[0] != "t" or columns < 2:
        raise FormatError("Header must start with 't' followed by joint columns", path, 1)
    if (columns - 1) % 3 == 0 and "qd0" in header:
        d = (columns - 1) // 3
        expected = ["t"] + [f"{p}{i}" for p in ("q", "qd", "qdd") for i in range(d)]
    else:
        d = columns - 1
        expected = ["t"] + [f"q{i}" for i in range(d)]
    if header != expected:
        raise FormatError(f"Unexpected header, expected {','.join(expected)}", path, 1)
    table = _numeric_table(path, header, rows)
    try:
        if columns == 1 + d:
            return Trajectory.from_positions(table[:, 0], table[:, 1:].T)
        return Trajectory(
            table[:, 0],
            table[:, 1 : 1 + d].T,
            table[:, 1 + d : 1 + 2 * d].T,
            table[:, 1 + 2 * d :].T,
        )
    except ValueError as e:
        raise FormatError(str(e), path) from e


def write_markers(path, cloud: MarkerCloud) -> None:
    rows = (
        [number(x), number(y), number(z), label.value]
        for (x, y, z), label in zip(cloud.points, cloud.labels)
    )
    _write_rows(path, ("x", "y", "z", "label"), rows)


def read_markers(path) -> MarkerCloud:
    header, rows = _read_rows(path)
    if header != ["x", "y", "z", "label"]:
        raise FormatError("Header must be x,y,z,label", path, 1)
    points = _numeric_table(path, header, rows, expected_width=3)
    labels = []
    for i, row in enumerate(rows):
        try:
            labels.append(Label(row[3]))
        except ValueError:
            raise FormatError(f"Unknown label '{row[3]}'", path, i + 2, "label")
    return MarkerCloud(points=points, labels=labels)


def write_demonstration(path, pair: HandPosePair) -> None:
    data = np.column_stack(
        [
            pair.timestamps,
            pair.left_position,
            pair.left_quaternion,
            pair.right_position,
            pair.right_quaternion,
        ]
    )
    _write_rows(path, DEMO_HEADER, ([number(v) for v in row] for row in data))


def read_demonstration(path) -> HandPosePair:
    header, rows = _read_rows(path)
    if tuple(header) != DEMO_HEADER:
        raise FormatError(f"Header must be {','.join(DEMO_HEADER)}", path, 1)
    table = _numeric_table(path, header, rows)
    try:
        return HandPosePair(table[:, 0], table[:, 1:4], table[:, 4:8], table[:, 8:11], table[:, 11:15])
    except ValueError as e:
        raise FormatError(str(e), path) from e


def model_to_dict(model: DmpModel) -> dict:
    return dict(
        weights=model.weights.tolist(),
        goal=model.goal.tolist(),
        start=model.start.tolist(),
        tau=model.tau,
        alpha_z=model.alpha_z,
        beta_z=model.beta_z,
        alpha_x=model.canonical.alpha_x,
        centers=model.kernels.centers.tolist(),
        widths=model.kernels.widths.tolist(),
        degenerate=list(model.degenerate),
    )


def model_from_dict(data: dict, path=None) -> DmpModel:
    expected = set(MODEL_KEYS)
    unknown = set(data) - expected
    if unknown:
        raise FormatError(f"Unknown model keys: {', '.join(sorted(unknown))}", path)
    missing = expected - set(data) - {"degenerate"}
    if missing:
        raise FormatError(f"Missing model keys: {', '.join(sorted(missing))}", path)
    try:
        return DmpModel(
            weights=data["weights"],
            goal=data["goal"],
            start=data["start"],
            canonical=CanonicalSystem(alpha_x=data["alpha_x"], tau=data["tau"]),
            kernels=KernelGrid(data["centers"], data["widths"]),
            alpha_z=data["alpha_z"],
            beta_z=data["beta_z"],
            degenerate=data.get("degenerate"),
        )
    except (TypeError, ValueError) as e:
        raise FormatError(f"Invalid model: {e}", path) from e


def _load_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise FormatError(f"Cannot read file: {e.strerror}", path) from e
    try:
        return json.loads(text, parse_constant=_reject_constant), text
    except json.JSONDecodeError as e:
        raise FormatError(e.msg, path, e.lineno, e.colno) from e


def _reject_constant(name: str):
    raise ValueError(f"Non-finite constant {name}")


def dumps(data) -> str:
    """Deterministic JSON: keys in insertion order, finite numbers only"""
    return json.dumps(data, indent=2, allow_nan=False) + "\n"


def write_json(path, data) -> None:
    try:
        text = dumps(data)
    except ValueError as e:
        raise FormatError(str(e), path) from e
    try:
        write_atomic(path, text)
    except OSError as e:
        raise FormatError(f"Cannot write file: {e.strerror}", path) from e


def write_model(path, model: DmpModel) -> None:
    write_json(path, model_to_dict(model))


def read_model(path) -> DmpModel:
    try:
        data, _ = _load_json(path)
    except ValueError as e:
        raise FormatError(str(e), path) from e
    return model_from_dict(data, path)


def write_trace(path, trace) -> None:
    rows = (
        [
            str(record.index),
            record.stage,
            record.action,
            number(record.report.area_ratio),
            number(record.report.volume_ratio),
            number(record.report.elongation),
            number(record.report.delta_elongation),
            number(record.crumple),
            number(record.gripper_distance),
        ]
        for record in trace.records
    )
    _write_rows(path, TRACE_HEADER, rows)


def read_trace_table(path) -> dict:
    """Trace CSV as columns; numeric columns become arrays"""
    header, rows = _read_rows(path)
    if tuple(header) != TRACE_HEADER:
        raise FormatError(f"Header must be {','.join(TRACE_HEADER)}", path, 1)
    columns = {name: [row[i] for row in rows] for i, name in enumerate(header)}
    table = {"stage": columns["stage"], "action": columns["action"]}
    for name in TRACE_HEADER[3:]:
        table[name] = np.array(
            [_parse_number(cell, path, i + 2, name) for i, cell in enumerate(columns[name])]
        )
    table["index"] = np.array([int(cell) for cell in columns["index"]])
    return table


# section -> key -> unit ("" for dimensionless, None for non-numeric)
CONFIG_SCHEMA = {
    "seed": None,
    "dt": "s",
    "margin": "",
    "limits": {
        "chain": None,
        "q_lo": "rad",
        "q_hi": "rad",
        "v_lo": "rad/s",
        "v_hi": "rad/s",
        "v_max": "rad/s",
        "a_lo": "rad/s^2",
        "a_hi": "rad/s^2",
        "a_max": "rad/s^2",
    },
    "tau": {"tolerance": ""},
    "tc": {"gamma_a": "", "gamma_r": "1/s", "horizon": None, "max_slowdown": ""},
    "opt": {
        "lambda_mode": None,
        "grid_count": None,
        "qp_tolerance": "",
        "boundary_equalities": None,
        "max_refinements": None,
        "max_iters": None,
    },
    "alpha": {"k_alpha": "1/m", "b_alpha": "m"},
    "sim": {
        "preset": None,
        "rim_radius_nominal": "m",
        "depth": "m",
        "stiffness": "",
        "rim_markers": None,
        "rim_inner_markers": None,
        "body_markers": None,
        "d_min": "m",
        "d_max": "m",
        "d_initial": "m",
        "step": "m",
        "uncrumple_gain": "",
        "noise": "m",
        "initial_crumple": "",
        "reverse_at_limits": None,
    },
    "episode": {
        "area_target": "",
        "volume_target": "",
        "delta_e_target": "",
        "max_dynamic": None,
        "max_total": None,
        "refinement": None,
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration file"""

    seed: int = 0
    dt: float = 0.001
    margin: float = 0.98
    limits: KinematicLimits = None
    tau_tolerance: float = 1e-3
    tc: TcConfig = field(default_factory=TcConfig)
    opt: OptDmpConfig = field(default_factory=OptDmpConfig)
    alpha: AlphaRule = field(default_factory=AlphaRule)
    sim: BagSimConfig = field(default_factory=BagSimConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)


def _locate(text: str, key: str):
    """Line and column of the first occurrence of a JSON key"""
    position = text.find(f'"{key}"')
    if position < 0:
        return None, None
    line = text.count("\n", 0, position) + 1
    column = position - (text.rfind("\n", 0, position) + 1) + 1
    return line, column


def _quantity(value, unit: str, key: str, path, text):
    """Bare number in the documented unit, or the string "<value> <unit>"."""
    if isinstance(value, list):
        return [_quantity(item, unit, key, path, text) for item in value]
    if isinstance(value, bool):
        raise FormatError(f"'{key}' must be a number", path, *_locate(text, key))
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        parts = value.split(None, 1)
        try:
            magnitude = float(parts[0])
        except (ValueError, IndexError):
            raise FormatError(f"'{key}' value '{value}' is not a quantity", path, *_locate(text, key))
        found = parts[1].strip() if len(parts) > 1 else ""
        if found != unit:
            expected = f"'{unit}'" if unit else "no unit"
            raise FormatError(
                f"'{key}' given in '{found}', expected {expected}", path, *_locate(text, key)
            )
        if not math.isfinite(magnitude):
            raise FormatError(f"'{key}' must be finite", path, *_locate(text, key))
        return magnitude
    raise FormatError(f"'{key}' has unsupported type {type(value).__name__}", path, *_locate(text, key))


def _section(data, schema: dict, name: str, path, text) -> dict:
    if not isinstance(data, dict):
        raise FormatError(f"'{name}' must be an object", path, *_locate(text, name))
    values = {}
    for key, value in data.items():
        if key not in schema:
            raise FormatError(
                f"Unknown key '{key}' in '{name}', expected one of {', '.join(schema)}",
                path,
                *_locate(text, key),
            )
        unit = schema[key]
        if unit is None or isinstance(unit, dict):
            values[key] = value
        else:
            values[key] = _quantity(value, unit, key, path, text)
    return values


def _limits(values: dict, margin: float, path, text) -> KinematicLimits:
    chain = values.pop("chain", None)
    if chain is not None:
        if values:
            raise FormatError("'limits' takes either 'chain' or explicit arrays", path, *_locate(text, "chain"))
        source = None if chain == "default" else chain
        return KinematicLimits.from_chain(KinematicChain.load(source), margin=margin)
    for name in ("v", "a"):
        peak = values.pop(f"{name}_max", None)
        if peak is not None:
            if f"{name}_lo" in values or f"{name}_hi" in values:
                raise FormatError(f"Give {name}_max or {name}_lo/{name}_hi, not both", path, *_locate(text, f"{name}_max"))
            peak = np.abs(np.asarray(peak, dtype=float))
            values[f"{name}_lo"], values[f"{name}_hi"] = -peak, peak
    missing = [key for key in ("q_lo", "q_hi", "v_lo", "v_hi", "a_lo", "a_hi") if key not in values]
    if missing:
        raise FormatError(f"'limits' is missing {', '.join(missing)}", path, *_locate(text, "limits"))
    return KinematicLimits(margin=margin, **values)


def read_config(path) -> RunConfig:
    """Strictly validated run configuration.

    Raises:
        FormatError: Unknown key, wrong unit or invalid value, located by line
            and column where possible.
    """
    try:
        data, text = _load_json(path)
    except ValueError as e:
        raise FormatError(str(e), path) from e
    top = _section(data, CONFIG_SCHEMA, "config", path, text)
    parsed = {}
    try:
        for name in ("seed", "dt", "margin"):
            if name in top:
                parsed[name] = top[name]
        margin = top.get("margin", RunConfig.margin)
        for name, build in (
            ("tc", TcConfig),
            ("opt", OptDmpConfig),
            ("alpha", AlphaRule),
            ("episode", EpisodeConfig),
        ):
            if name in top:
                parsed[name] = build(**_section(top[name], CONFIG_SCHEMA[name], name, path, text))
        if "tau" in top:
            tau = _section(top["tau"], CONFIG_SCHEMA["tau"], "tau", path, text)
            if "tolerance" in tau:
                parsed["tau_tolerance"] = tau["tolerance"]
        if "sim" in top:
            sim = _section(top["sim"], CONFIG_SCHEMA["sim"], "sim", path, text)
            preset = sim.pop("preset", None)
            parsed["sim"] = BagSimConfig.preset(preset, **sim) if preset else BagSimConfig(**sim)
        if "limits" in top:
            parsed["limits"] = _limits(
                _section(top["limits"], CONFIG_SCHEMA["limits"], "limits", path, text), margin, path, text
            )
    except FormatError:
        raise
    except (AssertionError, TypeError, ValueError) as e:
        raise FormatError(f"Invalid configuration: {e}", path) from e
    return RunConfig(**parsed)


def config_to_dict(config: RunConfig) -> dict:
    """Plain-number document that ``read_config`` accepts"""

    def plain(obj, schema):
        result = {}
        for item in fields(obj):
            if item.name not in schema:
                continue
            value = getattr(obj, item.name)
            if isinstance(value, np.ndarray):
                value = value.tolist()
            elif hasattr(value, "value"):
                value = value.value
            elif isinstance(value, tuple):
                value = list(value)
            result[item.name] = value
        return result

    document = dict(seed=config.seed, dt=config.dt, margin=config.margin)
    if config.limits is not None:
        document["limits"] = {
            key: getattr(config.limits, key).tolist() for key in ("q_lo", "q_hi", "v_lo", "v_hi", "a_lo", "a_hi")
        }
    document["tau"] = dict(tolerance=config.tau_tolerance)
    document["tc"] = plain(config.tc, CONFIG_SCHEMA["tc"])
    document["opt"] = plain(config.opt, CONFIG_SCHEMA["opt"])
    document["alpha"] = plain(config.alpha, CONFIG_SCHEMA["alpha"])
    document["sim"] = plain(config.sim, CONFIG_SCHEMA["sim"])
    document["episode"] = plain(config.episode, CONFIG_SCHEMA["episode"])
    return document


def plain(value):
    """numpy containers and scalars as JSON-ready Python values"""
    if isinstance(value, dict):
        return {str(key): plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if hasattr(value, "value") and not isinstance(value, (int, float, str)):
        return value.value
    return value


def constrained_report(result, quality: float = None) -> dict:
    """Report document of a constraint method run, keys in fixed order"""
    report = dict(
        method=result.method.value,
        satisfied=result.satisfied,
        tau_final=result.tau_final,
        duration=result.duration,
        peak_speed=result.trajectory.peak_speed(),
        peak_acceleration=result.trajectory.peak_acceleration(),
        violations=result.violations.as_dict(),
        solver_stats=result.solver_stats,
    )
    if quality is not None:
        report["quality"] = quality
    return plain(report)


def write_comparison(path, rows: list) -> None:
    """One CSV row per method; failed methods keep only their error"""
    dofs = next((row.peak_speed.size for row in rows if row.ok), 0)
    header = (
        ["method", "duration", "tau_final", "min_margin"]
        + [f"peak_speed{i}" for i in range(dofs)]
        + [f"peak_acceleration{i}" for i in range(dofs)]
        + [f"path_rmse{i}" for i in range(dofs)]
        + ["error"]
    )
    lines = []
    for row in rows:
        if not row.ok:
            lines.append([row.method.value] + [""] * (len(header) - 2) + [row.error])
            continue
        lines.append(
            [row.method.value, number(row.duration), number(row.tau_final), number(row.min_margin)]
            + [number(v) for v in row.peak_speed]
            + [number(v) for v in row.peak_acceleration]
            + [number(v) for v in row.path_rmse]
            + [""]
        )
    _write_rows(path, header, lines)


def write_summary(path, traces: list) -> None:
    header = (
        "run",
        "seed",
        "reached_targets",
        "dynamic_actions",
        "refinement_actions",
        "termination",
        "area_ratio",
        "volume_ratio",
        "delta_elongation",
    )
    rows = (
        [
            str(run),
            str(trace.seed),
            str(int(trace.reached_targets)),
            str(trace.dynamic_actions),
            str(trace.refinement_actions),
            trace.termination,
            number(trace.final.area_ratio),
            number(trace.final.volume_ratio),
            number(trace.final.delta_elongation),
        ]
        for run, trace in enumerate(traces)
    )
    _write_rows(path, header, rows)
