import logging
from dataclasses import replace
from functools import wraps

import click
import numpy as np

from cdmp_bag import __version__, formats
from cdmp_bag.config import dt as default_dt
from cdmp_bag.config import logfile as default_logfile
from cdmp_bag.config import loglevel as default_loglevel
from cdmp_bag.config import seed as default_seed
from cdmp_bag.constraints import (
    KinematicLimits,
    Method,
    compare_methods,
    constrain,
    trajectory_quality,
)
from cdmp_bag.db import EpisodeStore
from cdmp_bag.demo import PrepConfig, prepare, synthetic_demonstration, synthetic_joint_demo
from cdmp_bag.dmp import fit as fit_model
from cdmp_bag.dmp import rollout as rollout_model
from cdmp_bag.exceptions import (
    CdmpError,
    FormatError,
    OptInfeasibleError,
    OptNotConvergedError,
    TuningExhaustedError,
    UnsatisfiableBySlowdownError,
)
from cdmp_bag.formats import RunConfig
from cdmp_bag.kinematics import KinematicChain
from cdmp_bag.main import reference_for, run_batch
from cdmp_bag.metrics import BagReference, evaluate
from cdmp_bag.plotting import episode_charts, write_svg
from cdmp_bag.utils import configure_logging, ensure_dir

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_IO = 3

context_settings: dict = dict(auto_envvar_prefix="CDMP_BAG", help_option_names=["-h", "--help"])

methods = [method.value for method in Method]


class CdmpGroup(click.Group):
    """Group mapping usage errors to exit code 1"""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            code = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
            code = code if isinstance(code, int) else EXIT_OK
        except click.UsageError as e:
            e.show()
            code = EXIT_USAGE
        except click.ClickException as e:
            e.show()
            code = e.exit_code
        except click.Abort:
            click.secho("[^] Aborted", fg="yellow", err=True)
            code = EXIT_USAGE
        if standalone_mode:
            raise SystemExit(code)
        return code


def command_handler(func):
    """Log failures and map them to exit codes"""

    @wraps(func)
    def decorator(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (
            OptInfeasibleError,
            OptNotConvergedError,
            UnsatisfiableBySlowdownError,
            TuningExhaustedError,
        ) as e:
            logging.error(f"Error on command - {func.__name__} - {e}")
            click.secho(f"[!] {e}", fg="red", err=True)
            raise click.exceptions.Exit(EXIT_INFEASIBLE)
        except (FormatError, OSError) as e:
            logging.error(f"Error on command - {func.__name__} - {e}")
            click.secho(f"[!] {e}", fg="red", err=True)
            raise click.exceptions.Exit(EXIT_IO)
        except CdmpError as e:
            logging.error(f"Error on command - {func.__name__} - {e}")
            click.secho(f"[!] {e}", fg="red", err=True)
            raise click.exceptions.Exit(EXIT_INFEASIBLE)
        except (AssertionError, ValueError) as e:
            logging.error(f"Error on command - {func.__name__} - {e}")
            click.secho(f"[!] {e}", fg="red", err=True)
            raise click.exceptions.Exit(EXIT_USAGE)

    return decorator


def load_run_config(path) -> RunConfig:
    return formats.read_config(path) if path else RunConfig()


def load_limits(config: RunConfig, chain_path=None) -> KinematicLimits:
    if config.limits is not None:
        return config.limits
    return KinematicLimits.from_chain(KinematicChain.load(chain_path), margin=config.margin)


@click.group(cls=CdmpGroup, context_settings=context_settings)
@click.version_option(__version__, "-v", "--version", package_name="cdmp-bag", prog_name="cdmp-bag")
@click.option(
    "-l",
    "--loglevel",
    type=click.Choice(["0", "10", "20", "30", "40", "50"]),
    default=str(default_loglevel),
    help="Logging level",
    metavar="10|20|30|40|50",
)
@click.option(
    "-f",
    "--logfile",
    type=click.Path(dir_okay=False),
    default=default_logfile or None,
    help="Path to file for logging",
)
def cdmp_bag(loglevel: str, logfile: str):
    """Constrained dynamic movement primitives for bag opening."""
    configure_logging(int(loglevel), logfile)


@cdmp_bag.command("demo-gen")
@click.option("-s", "--seed", type=click.INT, default=default_seed, help="Random seed", show_default=True)
@click.option("-r", "--rate", type=click.FloatRange(1, min_open=False), default=120.0, help="Sample rate, Hz")
@click.option("-d", "--duration", type=click.FloatRange(0.1), default=1.0, help="Demonstration length, s")
@click.option("-n", "--noise", type=click.FloatRange(0), default=0.002, help="Noise deviation, m and rad")
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True, help="Demonstration CSV")
@click.option("-j", "--joints", type=click.Path(dir_okay=False), help="Also write the joint fling, trajectory CSV")
@command_handler
def demo_gen(seed, rate, duration, noise, out, joints):
    """Generate a synthetic bimanual fling demonstration"""
    pair = synthetic_demonstration(seed, rate, duration, noise)
    formats.write_demonstration(out, pair)
    if joints:
        formats.write_trajectory(joints, synthetic_joint_demo(seed, duration=duration, dt=1.0 / rate), derivatives=False)
    click.secho(f"[*] Wrote {len(pair)} samples to '{out}'", fg="cyan")


@cdmp_bag.command()
@click.option("-d", "--demo", type=click.Path(exists=True, dir_okay=False), required=True, help="Demonstration CSV")
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True, help="Joint trajectory CSV")
@click.option("-c", "--chain", type=click.Path(exists=True, dir_okay=False), help="Chain JSON, packaged arm by default")
@click.option("-w", "--window", type=click.IntRange(1), default=21, help="Smoothing window, samples (odd)")
@click.option("--scale", type=click.FloatRange(0, min_open=True), default=1.0, help="Amplitude scale")
@click.option("--side", type=click.Choice(["left", "right"]), default="left", help="Arm to convert")
@click.option("-b", "--bundle", type=click.Path(dir_okay=False), help="Write distance profile and main axis, JSON")
@command_handler
def prep(demo, out, chain, window, scale, side, bundle):
    """Preprocess a demonstration into a joint trajectory"""
    pair = formats.read_demonstration(demo)
    kinematic_chain = KinematicChain.load(chain)
    base = (0.0, 0.3, 0.0) if side == "left" else (0.0, -0.3, 0.0)
    config = PrepConfig(window=window, scale=scale, side=side, base_position=base)
    prepared, trajectory = prepare(pair, kinematic_chain, config=config)
    formats.write_trajectory(out, trajectory)
    if bundle:
        formats.write_json(
            bundle,
            formats.plain(
                dict(
                    main_axis=prepared.main_axis,
                    distance_fraction=prepared.distance_fraction,
                    flags=list(prepared.path.flags),
                )
            ),
        )
    click.secho(f"[*] Wrote {trajectory.sample_count} joint samples to '{out}'", fg="cyan")


@cdmp_bag.command()
@click.option("-d", "--demo", type=click.Path(exists=True, dir_okay=False), required=True, help="Joint trajectory CSV")
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True, help="Model JSON")
@click.option("-k", "--kernels", type=click.IntRange(2), default=30, help="Kernel count")
@click.option("--alpha-z", type=click.FloatRange(0, min_open=True), default=25.0, help="Spring gain")
@click.option("--alpha-x", type=click.FloatRange(0, min_open=True), default=4.0, help="Phase decay gain")
@command_handler
def fit(demo, out, kernels, alpha_z, alpha_x):
    """Fit a DMP to a joint trajectory"""
    model = fit_model(formats.read_trajectory(demo), kernels, alpha_z, alpha_x)
    formats.write_model(out, model)
    click.secho(f"[*] Fitted {model.dof_count} DOFs, tau {model.tau:.4g} s", fg="cyan")


@cdmp_bag.command()
@click.option("-m", "--model", type=click.Path(exists=True, dir_okay=False), required=True, help="Model JSON")
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True, help="Trajectory CSV")
@click.option("--dt", type=click.FloatRange(0, min_open=True), default=default_dt, help="Integration step, s")
@click.option("--tau", type=click.FloatRange(0, min_open=True), help="Time constant override, s")
@command_handler
def rollout(model, out, dt, tau):
    """Integrate a DMP"""
    trajectory = rollout_model(formats.read_model(model), dt, tau_override=tau)
    formats.write_trajectory(out, trajectory)
    click.secho(f"[*] Wrote {trajectory.sample_count} samples to '{out}'", fg="cyan")


@cdmp_bag.command("constrain")
@click.option("-M", "--method", type=click.Choice(methods), required=True, help="Constraint method")
@click.option("-m", "--model", type=click.Path(exists=True, dir_okay=False), required=True, help="Model JSON")
@click.option(
    "-L",
    "--limits",
    type=click.Path(exists=True, dir_okay=False),
    help="Config JSON holding limits and method settings; packaged arm limits by default",
)
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True, help="Constrained trajectory CSV")
@click.option("-r", "--report", type=click.Path(dir_okay=False), help="Report JSON")
@click.option("--dt", type=click.FloatRange(0, min_open=True), help="Integration step, s")
@command_handler
def constrain_command(method, model, limits, out, report, dt):
    """Reproduce a DMP within kinematic limits.

    Exits 0 when the result meets every effective limit, 2 otherwise.
    """
    config = load_run_config(limits)
    dmp = formats.read_model(model)
    result = constrain(
        method,
        dmp,
        load_limits(config),
        dt or config.dt,
        tc=config.tc,
        opt=config.opt,
        tau_tolerance=config.tau_tolerance,
    )
    formats.write_trajectory(out, result.trajectory)
    if report:
        formats.write_json(report, formats.constrained_report(result, trajectory_quality(result)))
    if not result.satisfied:
        worst = result.violations.worst(result.method is not Method.TC)
        click.secho(f"[!] Limits exceeded by {worst:.6g}", fg="red", err=True)
        raise click.exceptions.Exit(EXIT_INFEASIBLE)
    click.secho(f"[*] {method}-DMP satisfied the limits, duration {result.duration:.4g} s", fg="cyan")


@cdmp_bag.command()
@click.option("-c", "--cloud", type=click.Path(exists=True, dir_okay=False), required=True, help="Marker CSV")
@click.option(
    "-R", "--reference", type=click.Path(exists=True, dir_okay=False), required=True, help="Reference marker CSV"
)
@click.option("--config", type=click.Path(exists=True, dir_okay=False), help="Config JSON for the alpha rule")
@click.option("-o", "--out", type=click.Path(dir_okay=False), help="Report JSON, stdout by default")
@command_handler
def metrics(cloud, reference, config, out):
    """Volume, opening area and elongation of a marker cloud"""
    run_config = load_run_config(config)
    bag = BagReference.from_cloud(formats.read_markers(reference), run_config.alpha)
    report = formats.plain(evaluate(formats.read_markers(cloud), run_config.alpha, bag).as_dict())
    if out:
        formats.write_json(out, report)
    else:
        click.echo(formats.dumps(report), nl=False)


@cdmp_bag.command()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), help="Config JSON")
@click.option("-M", "--method", type=click.Choice(methods), default="opt", help="Constraint method")
@click.option("-n", "--runs", type=click.IntRange(1), default=10, help="Episodes")
@click.option("-s", "--seed", type=click.INT, help="First episode seed, the config's by default")
@click.option("-m", "--model", type=click.Path(exists=True, dir_okay=False), help="Model JSON, synthetic fling by default")
@click.option("-o", "--out", type=click.Path(file_okay=False), required=True, help="Output directory")
@click.option("--svg", is_flag=True, help="Also draw per-metric line charts")
@click.option("-d", "--database", help="Database engine URL to record episodes e.g sqlite:///runs.db")
@command_handler
def simulate(config, method, runs, seed, model, out, svg, database):
    """Run seeded bag opening episodes with a constrained fling"""
    run_config = load_run_config(config)
    seed = run_config.seed if seed is None else seed
    demo = None
    if model:
        dmp = formats.read_model(model)
    else:
        demo = synthetic_joint_demo(seed)
        dmp = fit_model(demo)
    result = constrain(
        method,
        dmp,
        load_limits(run_config),
        run_config.dt,
        tc=run_config.tc,
        opt=run_config.opt,
        demo=demo,
        tau_tolerance=run_config.tau_tolerance,
    )
    quality = trajectory_quality(result)
    logging.info(f"{method}-DMP fling quality {quality:.4f}")
    sim = replace(run_config.sim, seed=seed)
    reference = reference_for(sim, run_config.alpha)

    directory = ensure_dir(out)
    traces = run_batch(sim, run_config.episode, quality, reference, runs, run_config.alpha)
    for index, trace in enumerate(traces):
        formats.write_trace(directory / f"episode_{index:03d}.csv", trace)
    formats.write_summary(directory / "summary.csv", traces)
    reached = sum(trace.reached_targets for trace in traces)
    summary = dict(
        method=method,
        runs=runs,
        seed=seed,
        quality=quality,
        reached_targets=reached,
        mean_dynamic_actions=float(np.mean([trace.dynamic_actions for trace in traces])),
        mean_delta_elongation=float(np.mean([trace.final.delta_elongation for trace in traces])),
    )
    formats.write_json(directory / "summary.json", formats.plain(summary))
    if svg:
        episode = run_config.episode
        charts = episode_charts(traces, episode.area_target, episode.volume_target, episode.delta_e_target)
        for name, chart in charts.items():
            write_svg(directory / f"{name}.svg", chart)
    if database:
        store = EpisodeStore(database)
        for index, trace in enumerate(traces):
            store.add(trace, method, index)
        store.close()
    click.secho(f"[*] {reached}/{runs} episodes reached the targets", fg="cyan")


@cdmp_bag.command()
@click.option("-m", "--model", type=click.Path(exists=True, dir_okay=False), help="Model JSON, synthetic fling by default")
@click.option("-L", "--limits", type=click.Path(exists=True, dir_okay=False), help="Config JSON holding limits")
@click.option("-d", "--demo", type=click.Path(exists=True, dir_okay=False), help="Demonstration trajectory CSV")
@click.option("-s", "--seed", type=click.INT, default=default_seed, help="Seed of the synthetic fling")
@click.option("-o", "--out", type=click.Path(file_okay=False), required=True, help="Output directory")
@command_handler
def compare(model, limits, demo, seed, out):
    """Run all three constraint methods side by side"""
    config = load_run_config(limits)
    reference = formats.read_trajectory(demo) if demo else None
    if model:
        dmp = formats.read_model(model)
    else:
        if reference is None:
            reference = synthetic_joint_demo(seed)
        dmp = fit_model(reference)
    rows = compare_methods(
        dmp, load_limits(config), config.dt, config.tc, config.opt, demo=reference, tau_tolerance=config.tau_tolerance
    )
    directory = ensure_dir(out)
    formats.write_comparison(directory / "compare.csv", rows)
    for row in rows:
        if row.ok:
            click.echo(f"{row.method.value:>4}  duration {row.duration:.4g} s  margin {row.min_margin:.4g}")
        else:
            click.echo(f"{row.method.value:>4}  failed: {row.error}")


@cdmp_bag.command()
@click.option("-d", "--database", help="Database engine URL")
@click.option("-y", "--yes", is_flag=True, help="Okay to confirmations")
@command_handler
def clear(database, yes):
    """Delete recorded episodes"""
    store = EpisodeStore(database)
    if not yes and not click.confirm(f"Are you sure to clear '{store.url}'?"):
        store.close()
        return
    store.clear()
    store.close()
    click.secho("[*] Episode records cleared!", fg="yellow")


def entry():
    """Cli entrypoint"""
    cdmp_bag()


if __name__ == "__main__":
    entry()
