"""Command line interface for evspline."""

import argparse
import logging
from pathlib import Path

from . import config, env, pipeline, report
from .errors import exit_code_for

logger = logging.getLogger(__name__)

DEFAULT_OUT_DIR = Path("outputs")


def _add_estimation_args(parser):
    parser.add_argument("--config", type=str, default=None, help="Flat 'key = value' config file")
    parser.add_argument("--knot-spacing", type=float, default=None, help="Control pose spacing in s (default: 0.1)")
    parser.add_argument("--seed", type=int, default=None, help="Random seed (default: 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evspline",
        description="Continuous-time visual-inertial trajectory estimation for event cameras",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Generate a synthetic dataset")
    _add_estimation_args(p)
    p.add_argument("--out", type=str, required=True, help="Dataset output directory")

    p = sub.add_parser("optimize", help="Estimate the trajectory and model parameters")
    _add_estimation_args(p)
    p.add_argument("--dataset", type=str, required=True, help="Dataset directory")
    p.add_argument(
        "--init", type=str, default="groundtruth",
        help="groundtruth | tracker | perturbed:<m>,<angle>[deg] (default: groundtruth)",
    )
    p.add_argument("--tracker", type=str, default=None, help="Tracker pose file (t px py pz qx qy qz qw)")
    p.add_argument(
        "--freeze", type=str, default="",
        help="Comma-separated: scale, orientation, biases, gyro-bias, accel-bias, first-pose",
    )
    p.add_argument("--no-imu", action="store_true", help="Drop IMU terms (visual-only spline)")
    p.add_argument("--sigma-e", type=float, default=None, help="Event noise in px (default: 0.1)")
    p.add_argument("--sigma-omega", type=float, default=None, help="Gyro noise in rad/s (default: 0.03)")
    p.add_argument("--sigma-a", type=float, default=None, help="Accelerometer noise in m/s^2 (default: 0.1)")
    p.add_argument("--initial-scale", type=float, default=None, help="Initial map scale (default: 1.0)")
    p.add_argument("--max-iterations", type=int, default=None, help="Solver iteration limit (default: 50)")
    p.add_argument("--strict", action="store_true", help="Fail on measurements outside the spline domain")
    p.add_argument("--out", type=str, default=str(DEFAULT_OUT_DIR), help="Output directory")

    p = sub.add_parser("evaluate", help="Align an estimate to ground truth and report errors")
    p.add_argument("--est", type=str, required=True, help="Estimated poses file")
    p.add_argument("--gt", type=str, required=True, help="Ground-truth poses file")
    p.add_argument("--align", type=str, choices=("se3", "sim3"), default="se3", help="Alignment mode (default: se3)")
    p.add_argument("--scene-depth", type=float, default=None, help="Mean scene depth in m")
    p.add_argument("--map", type=str, default=None, help="Map file used to compute the mean scene depth")
    p.add_argument("--handeye", type=str, default=None, help="Hand-eye pose applied to ground truth")
    p.add_argument("--label", type=str, default="estimate", help="Row label in summary.txt")
    p.add_argument("--out", type=str, default=str(DEFAULT_OUT_DIR), help="Output directory")

    p = sub.add_parser("fit", help="Fit a spline through timestamped poses")
    p.add_argument("--poses", type=str, required=True, help="Poses file (t px py pz qx qy qz qw)")
    p.add_argument("--knot-spacing", type=float, default=None, help="Control pose spacing in s (default: 0.1)")
    p.add_argument("--out", type=str, default=str(DEFAULT_OUT_DIR), help="Output directory")

    p = sub.add_parser("inspect", help="Print dataset statistics")
    p.add_argument("--dataset", type=str, required=True, help="Dataset directory")
    p.add_argument("--knot-spacing", type=float, default=None, help="Control pose spacing in s (default: 0.1)")
    return parser


def _optional_path(value):
    return Path(value) if value else None


def parse_args(argv=None) -> config.RunConfig:
    """Parse command line arguments and return RunConfig.

    Values from ``--config`` override defaults; explicit flags override both.
    """
    args = build_parser().parse_args(argv)
    config_file = _optional_path(getattr(args, "config", None))
    values = {}
    if config_file is not None:
        values = config.run_overrides(config.load_config_file(config_file))

    flags = {
        "knot_spacing": getattr(args, "knot_spacing", None),
        "seed": getattr(args, "seed", None),
        "sigma_e": getattr(args, "sigma_e", None),
        "sigma_omega": getattr(args, "sigma_omega", None),
        "sigma_a": getattr(args, "sigma_a", None),
        "initial_scale": getattr(args, "initial_scale", None),
        "max_iterations": getattr(args, "max_iterations", None),
    }
    values.update({k: v for k, v in flags.items() if v is not None})

    freeze = tuple(n.strip() for n in getattr(args, "freeze", "").split(",") if n.strip())
    return config.RunConfig(
        command=args.command,
        out_dir=Path(args.out) if getattr(args, "out", None) else DEFAULT_OUT_DIR,
        dataset=_optional_path(getattr(args, "dataset", None)),
        config_file=config_file,
        freeze=freeze,
        use_imu=not getattr(args, "no_imu", False),
        init=config.InitSpec.parse(getattr(args, "init", "groundtruth")),
        tracker=_optional_path(getattr(args, "tracker", None)),
        strict=getattr(args, "strict", False),
        est=_optional_path(getattr(args, "est", None)),
        gt=_optional_path(getattr(args, "gt", None)),
        align=getattr(args, "align", "se3"),
        scene_depth=getattr(args, "scene_depth", None),
        label=getattr(args, "label", "estimate"),
        handeye=_optional_path(getattr(args, "handeye", None)),
        map_file=_optional_path(getattr(args, "map", None)),
        poses=_optional_path(getattr(args, "poses", None)),
        **values,
    )


COMMANDS = {
    "simulate": lambda run, runtime: pipeline.run_simulate(run),
    "optimize": pipeline.run_optimize,
    "evaluate": lambda run, runtime: pipeline.run_evaluate(run),
    "fit": lambda run, runtime: pipeline.run_fit(run),
    "inspect": lambda run, runtime: pipeline.run_inspect(run),
}


def main(argv=None) -> int:
    """Run one subcommand; returns the process exit code."""
    try:
        run = parse_args(argv)
        runtime = config.RuntimeConfig.from_env()
        env.apply_runtime_settings(runtime)
        report.report_runtime(runtime)
        COMMANDS[run.command](run, runtime)
    except Exception as exc:
        logger.debug("Run failed", exc_info=True)
        print(f"Error: {exc}")
        diagnostics = getattr(exc, "diagnostics", None)
        if diagnostics:
            for key, value in diagnostics.items():
                print(f"  {key}: {value}")
        return exit_code_for(exc)
    return 0
