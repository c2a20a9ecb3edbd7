"""Orchestrators behind the command-line subcommands."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config, io, metrics, report
from .errors import ConfigError
from .estimator import Associations, SolveResult, build_problem, solve
from .geometry import se3_exp
from .sensors import (
    DEPTH_EPSILON,
    CameraIntrinsics,
    EventStream,
    ModelParams,
    SceneMap,
    camera_points,
    map_to_world,
    pinhole,
    segment_distance,
)
from .simulator import simulate
from .trajectory import PoseSamples, SplineFit, SplineTrajectory, fit_spline

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetStats:
    root: Path
    n_events: int
    n_associated: int | None
    n_imu: int
    n_primitives: int
    map_kind: str
    duration: float
    knot_spacing: float
    n_control_poses: int

    @property
    def events_per_pose(self) -> float:
        return self.n_events / max(self.n_control_poses, 1)

    @property
    def imu_per_pose(self) -> float:
        return self.n_imu / max(self.n_control_poses, 1)


def knots_covering(times, dt: float) -> tuple[float, int]:
    """(t0, n) such that the spline domain [t0 + dt, t0 + (n - 1) dt) contains ``times``."""
    times = np.asarray(times, dtype=float)
    if len(times) == 0:
        raise ConfigError("Cannot place control poses without timestamps")
    span = float(times[-1] - times[0])
    return float(times[0] - dt), int(np.floor(span / dt)) + 3


def dataset_statistics(dataset: io.Dataset, dt: float) -> DatasetStats:
    stamps = [dataset.events.t]
    if dataset.imu is not None:
        stamps.append(dataset.imu.t)
    stamps = np.concatenate(stamps)
    duration = float(stamps.max() - stamps.min()) if len(stamps) else 0.0
    return DatasetStats(
        root=dataset.root,
        n_events=len(dataset.events),
        n_associated=len(dataset.associations) if dataset.associations is not None else None,
        n_imu=len(dataset.imu) if dataset.imu is not None else 0,
        n_primitives=len(dataset.scene_map),
        map_kind=dataset.scene_map.kind,
        duration=duration,
        knot_spacing=dt,
        n_control_poses=int(np.floor(duration / dt)) + 3 if len(stamps) else 0,
    )


def derive_associations(
    events: EventStream,
    scene_map: SceneMap,
    K: CameraIntrinsics,
    tracker: PoseSamples,
    line_tolerance: float = 1.0,
    params: ModelParams | None = None,
) -> Associations:
    """Associate events with map primitives using the nearest tracker pose.

    A point is associated when its projection falls in the same (rounded) pixel
    as the event; a segment when the event lies within ``line_tolerance``
    pixels of its projection. Events matching zero or several primitives are
    left unassociated.
    """
    params = params or ModelParams()
    kind = "point" if scene_map.kind == "point" else "line"
    if len(events) == 0 or len(tracker) == 0:
        return Associations(np.zeros(0), np.zeros(0), kind)
    ie, ip = metrics.match_timestamps(events.t, tracker.times, max_dt=np.inf)
    owner = np.full(len(events), -1, dtype=int)
    xy = events.xy
    rotation = params.rotation

    for k in np.unique(ip):
        sel = ie[ip == k]
        R, t = tracker.matrices[k, :3, :3], tracker.matrices[k, :3, 3]
        if scene_map.kind == "point":
            Xc = camera_points(R, t, map_to_world(scene_map.points, params.scale, rotation))
            front = np.flatnonzero(Xc[:, 2] > DEPTH_EPSILON)
            if len(front) == 0:
                continue
            pix = np.round(pinhole(K, Xc[front]))
            hit = np.all(np.round(xy[sel])[:, None, :] == pix[None, :, :], axis=-1)
        else:
            A = camera_points(R, t, map_to_world(scene_map.segment_starts, params.scale, rotation))
            B = camera_points(R, t, map_to_world(scene_map.segment_ends, params.scale, rotation))
            front = np.flatnonzero((A[:, 2] > DEPTH_EPSILON) & (B[:, 2] > DEPTH_EPSILON))
            if len(front) == 0:
                continue
            a, b = pinhole(K, A[front]), pinhole(K, B[front])
            dist = segment_distance(xy[sel][:, None, :], a[None], b[None])
            hit = dist < line_tolerance
        unique = hit.sum(axis=1) == 1
        owner[sel[unique]] = front[hit[unique].argmax(axis=1)]

    keep = np.flatnonzero(owner >= 0)
    logger.info("Associated %d of %d events from tracker poses", len(keep), len(events))
    return Associations(keep, scene_map.ids[owner[keep]], kind)


def perturb_trajectory(
    traj: SplineTrajectory, sigma_t: float, sigma_r: float, rng: np.random.Generator,
    skip_first: bool = False,
) -> SplineTrajectory:
    """Right-multiply each control pose by exp of a random twist with |alpha| <= sigma_t, |beta| <= sigma_r."""
    count = traj.n + 1
    directions = rng.normal(size=(count, 2, 3))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    sizes = rng.uniform(0.0, 1.0, size=(count, 2)) * np.array([sigma_t, sigma_r])
    xi = (directions * sizes[..., None]).reshape(count, 6)
    if skip_first:
        xi[0] = 0.0
    return traj.with_matrices(traj.matrices @ se3_exp(xi))


def fit_to_samples(samples: PoseSamples, dt: float) -> SplineFit:
    t0, n = knots_covering(samples.times, dt)
    return fit_spline(samples, dt, t0, n)


def write_resolved_config(out_dir: Path, run: config.RunConfig, extra=()) -> Path:
    path = Path(out_dir) / "resolved_config.txt"
    path.write_text("\n".join([*run.resolved_lines(), *extra]) + "\n", encoding="utf-8")
    return path


def _sim_config(run: config.RunConfig):
    values = config.load_config_file(run.config_file) if run.config_file else {}
    control_poses = ()
    if "traj.control_poses" in values:
        traj = io.read_control_poses(Path(values["traj.control_poses"]))
        control_poses = traj.control_poses
        values = {
            **values, "traj.kind": "control_poses",
            "traj.t0": repr(traj.t0 + traj.dt), "traj.dt": repr(traj.dt),
        }
    sim = config.sim_config_from(values, run.knot_spacing, run.seed, control_poses)
    return sim, [f"{k} = {v}" for k, v in sorted(values.items())]


def run_simulate(run: config.RunConfig) -> list[Path]:
    """Simulate a dataset and write it to ``run.out_dir``."""
    sim_config, lines = _sim_config(run)
    data = simulate(sim_config)
    paths = io.write_dataset(run.out_dir, data)
    paths.append(write_resolved_config(run.out_dir, run, lines))
    print(
        f"Simulated {len(data.events)} events, {len(data.imu)} IMU samples, "
        f"{data.trajectory.n + 1} control poses"
    )
    report.report_saved(paths)
    return paths


def _initial_trajectory(run: config.RunConfig, dataset: io.Dataset, skip_first: bool) -> SplineTrajectory:
    if run.init.kind == "tracker":
        if run.tracker is None:
            raise ConfigError("--init tracker requires --tracker <poses file>")
        samples = io.read_poses(run.tracker)
    else:
        if dataset.groundtruth is None:
            raise ConfigError(f"--init {run.init.kind} requires {io.GROUNDTRUTH_FILE} in the dataset")
        samples = dataset.groundtruth
    fit = fit_to_samples(samples, run.knot_spacing)
    report.report_fit(fit)
    traj = fit.trajectory
    if run.init.kind == "perturbed":
        rng = np.random.default_rng(run.seed)
        traj = perturb_trajectory(traj, run.init.sigma_t, run.init.sigma_r, rng, skip_first)
    return traj


def run_optimize(run: config.RunConfig, runtime: config.RuntimeConfig | None = None) -> SolveResult:
    """Estimate control poses and model parameters for a dataset."""
    runtime = runtime or config.RuntimeConfig(workers=1, log_level="INFO")
    if run.dataset is None:
        raise ConfigError("optimize requires --dataset")
    dataset = io.load_dataset(run.dataset)
    associations = dataset.associations
    if associations is None:
        if run.tracker is None:
            raise ConfigError(f"Dataset has no {io.ASSOC_FILE}; pass --tracker to derive associations")
        associations = derive_associations(
            dataset.events, dataset.scene_map, dataset.intrinsics,
            io.read_poses(run.tracker), run.assoc_line_tolerance,
        )

    imu = dataset.imu if run.use_imu else None
    if run.use_imu and imu is None:
        print(f"Warning: dataset has no {io.IMU_FILE}; running visual-only")
    flags = run.freeze_flags
    has_imu = imu is not None and len(imu) > 0
    first_frozen = flags.first_pose if flags.first_pose is not None else not has_imu
    traj_init = _initial_trajectory(run, dataset, skip_first=first_frozen)

    problem = build_problem(
        dataset.events, associations, imu, dataset.scene_map, dataset.intrinsics,
        traj_init, run.initial_params, run.noise, flags,
        strict=run.strict, workers=runtime.workers,
    )
    result = solve(problem, run.lm_config)
    report.report_solve(result.report)

    out = Path(run.out_dir)
    io.ensure_output_directory(out)
    paths = [
        io.write_trajectory(out / "trajectory.txt", result.trajectory, run.trajectory_rate),
        io.write_control_poses(out / "control_poses.txt", result.trajectory),
        io.write_params(out / "params.txt", result.params),
    ]
    report_path = out / "report.txt"
    report_path.write_text("\n".join(result.report.lines()) + "\n", encoding="utf-8")
    paths += [report_path, write_resolved_config(out, run)]

    if dataset.true_params is not None:
        truth = dataset.true_params
        report.report_params(
            result.params, truth,
            metrics.scale_error(result.params.scale, truth.scale),
            metrics.gravity_direction_error(result.params.orientation, truth.orientation),
        )
    else:
        report.report_params(result.params)
    report.report_saved(paths)
    return result


def _apply_handeye(samples: PoseSamples, handeye_path: Path | None) -> PoseSamples:
    if handeye_path is None:
        return samples
    X = io.read_handeye(handeye_path).matrix
    return PoseSamples(samples.times, samples.matrices @ X)


def run_evaluate(run: config.RunConfig) -> metrics.ErrorSummary:
    """Align an estimate to ground truth and write errors.csv and summary.txt."""
    if run.est is None or run.gt is None:
        raise ConfigError("evaluate requires --est and --gt")
    est = io.read_poses(run.est)
    gt = _apply_handeye(io.read_poses(run.gt), run.handeye)
    if run.scene_depth is not None:
        depth = run.scene_depth
    elif run.map_file is not None:
        depth = metrics.mean_scene_depth(gt, io.read_map(run.map_file))
    else:
        raise ConfigError("evaluate requires --scene-depth or --map")

    similarity = metrics.align(est, gt, run.align)
    summary = metrics.errors(similarity.apply(est), gt, depth)

    out = Path(run.out_dir)
    io.ensure_output_directory(out)
    paths = [
        metrics.write_errors_csv(out / "errors.csv", summary),
        metrics.write_summary(out / "summary.txt", summary, run.label, {
            "align": run.align, "alignment_scale": f"{similarity.scale:.12g}",
        }),
        write_resolved_config(out, run),
    ]
    report.report_errors(summary, run.label)
    report.report_saved(paths)
    return summary


def run_fit(run: config.RunConfig) -> SplineFit:
    """Fit a spline through a timestamped-pose file."""
    if run.poses is None:
        raise ConfigError("fit requires --poses")
    fit = fit_to_samples(io.read_poses(run.poses), run.knot_spacing)
    out = Path(run.out_dir)
    io.ensure_output_directory(out)
    fit_path = out / "fit.txt"
    fit_path.write_text(
        f"rms {fit.rms:.12g}\niterations {fit.iterations}\ndropped_samples {fit.dropped_samples}\n",
        encoding="utf-8",
    )
    paths = [
        io.write_control_poses(out / "control_poses.txt", fit.trajectory),
        io.write_trajectory(out / "trajectory.txt", fit.trajectory, run.trajectory_rate),
        fit_path,
        write_resolved_config(out, run),
    ]
    report.report_fit(fit)
    report.report_saved(paths)
    return fit


def run_inspect(run: config.RunConfig) -> DatasetStats:
    """Print dataset statistics."""
    if run.dataset is None:
        raise ConfigError("inspect requires --dataset")
    stats = dataset_statistics(io.load_dataset(run.dataset), run.knot_spacing)
    report.report_dataset(stats)
    return stats
