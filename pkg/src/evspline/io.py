"""Reading and writing dataset, map and result files.

All formats are whitespace-separated text, one record per line, with ``#``
starting a comment. Poses are ``t px py pz qx qy qz qw`` with a scalar-last
unit quaternion. Numbers are written with 12 significant digits.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import pandas as pd

from .errors import NonMonotoneTimestamp, NonUnitQuaternion, ParseError
from .estimator import Associations
from .geometry import Pose, quaternion_to_rotation, rotation_to_quaternion
from .sensors import PARAM_NAMES, CameraIntrinsics, EventStream, ImuStream, ModelParams, SceneMap
from .trajectory import PoseSamples, SplineTrajectory

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"
QUATERNION_RENORMALIZE = 1e-6
QUATERNION_REJECT = 1e-3
KNOT_SPACING_TOLERANCE = 1e-6

EVENTS_FILE = "events.txt"
IMU_FILE = "imu.txt"
GROUNDTRUTH_FILE = "groundtruth.txt"
CALIB_FILE = "calib.txt"
MAP_POINTS_FILE = "map_points.txt"
MAP_LINES_FILE = "map_lines.txt"
ASSOC_FILE = "assoc.txt"
HANDEYE_FILE = "handeye.txt"
TRUE_PARAMS_FILE = "params_true.txt"


def ensure_output_directory(out_dir: Path):
    """Create output directory if it doesn't exist."""
    os.makedirs(out_dir, exist_ok=True)


# tables

def _locate_error(path: Path, ncols: tuple[int, ...]):
    """Scan ``path`` line by line and raise ParseError at the first bad record."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            fields = raw.split("#", 1)[0].split()
            if not fields:
                continue
            if len(fields) not in ncols:
                expected = " or ".join(str(n) for n in ncols)
                raise ParseError(path, lineno, None, f"expected {expected} fields, found {len(fields)}")
            for column, token in enumerate(fields, start=1):
                try:
                    value = float(token)
                except ValueError:
                    raise ParseError(path, lineno, column, f"cannot parse {token!r} as a number") from None
                if not np.isfinite(value):
                    raise ParseError(path, lineno, column, f"non-finite value {token!r}")
    raise ParseError(path, 0, None, "file could not be parsed as a numeric table")


def _line_of_row(path: Path, row: int) -> int:
    """1-based line number of data row ``row`` (0-based, comments skipped)."""
    seen = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if raw.split("#", 1)[0].split():
                seen += 1
                if seen == row:
                    return lineno
    return 0


def read_table(path, ncols: int | tuple[int, ...]) -> np.ndarray:
    """Numeric table with a fixed number of columns as a float array."""
    path = Path(path)
    ncols = (ncols,) if isinstance(ncols, int) else tuple(ncols)
    try:
        frame = pd.read_csv(
            path, sep=r"\s+", header=None, comment="#", dtype=float, engine="c",
        )
    except pd.errors.EmptyDataError:
        return np.zeros((0, ncols[0]))
    except (ValueError, pd.errors.ParserError):
        _locate_error(path, ncols)
    table = frame.to_numpy(dtype=float)
    if table.shape[1] not in ncols or not np.all(np.isfinite(table)):
        _locate_error(path, ncols)
    return table


def _check_monotone(path: Path, t: np.ndarray):
    bad = np.flatnonzero(np.diff(t) < 0.0)
    if len(bad):
        raise NonMonotoneTimestamp(path, _line_of_row(path, int(bad[0]) + 1))


def _check_integral(path: Path, values: np.ndarray, column: int):
    bad = np.flatnonzero(values != np.round(values))
    if len(bad):
        raise ParseError(path, _line_of_row(path, int(bad[0])), column, "expected an integer")


def write_table(path, columns: dict, header: str | None = None) -> Path:
    path = Path(path)
    frame = pd.DataFrame(columns)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(f"# {header}\n")
        frame.to_csv(fh, sep=" ", header=False, index=False, float_format=FLOAT_FORMAT)
    return path


# events

def read_events(path) -> EventStream:
    """``t x y p`` lines, polarity 0/1 mapped to -1/+1."""
    path = Path(path)
    table = read_table(path, 4)
    _check_monotone(path, table[:, 0])
    p = table[:, 3]
    bad = np.flatnonzero((p != 0.0) & (p != 1.0))
    if len(bad):
        raise ParseError(path, _line_of_row(path, int(bad[0])), 4, "polarity must be 0 or 1")
    return EventStream(table[:, 0], table[:, 1], table[:, 2], np.where(p > 0.5, 1, -1))


def write_events(path, events: EventStream) -> Path:
    return write_table(path, {
        "t": events.t, "x": events.x, "y": events.y,
        "p": (events.polarity > 0).astype(int),
    })


# imu

def read_imu(path) -> ImuStream:
    """``t ax ay az wx wy wz`` lines."""
    path = Path(path)
    table = read_table(path, 7)
    _check_monotone(path, table[:, 0])
    imu = ImuStream(table[:, 0], table[:, 4:7], table[:, 1:4])
    imu.check_plausibility()
    return imu


def write_imu(path, imu: ImuStream) -> Path:
    return write_table(path, {
        "t": imu.t,
        "ax": imu.accel[:, 0], "ay": imu.accel[:, 1], "az": imu.accel[:, 2],
        "wx": imu.omega[:, 0], "wy": imu.omega[:, 1], "wz": imu.omega[:, 2],
    })


# poses

def _poses_from_table(path: Path, table: np.ndarray) -> np.ndarray:
    """(N, 4, 4) matrices from ``px py pz qx qy qz qw`` columns."""
    q = table[:, 3:7]
    norm = np.linalg.norm(q, axis=1)
    bad = np.flatnonzero(np.abs(norm - 1.0) > QUATERNION_REJECT)
    if len(bad):
        raise NonUnitQuaternion(path, _line_of_row(path, int(bad[0])), float(norm[bad[0]]))
    drift = int(np.sum(np.abs(norm - 1.0) > QUATERNION_RENORMALIZE))
    if drift:
        logger.debug("%s: renormalised %d quaternions", path, drift)
    mats = np.tile(np.eye(4), (len(table), 1, 1))
    if len(table):
        mats[:, :3, :3] = quaternion_to_rotation(q / norm[:, None])
        mats[:, :3, 3] = table[:, 0:3]
    return mats


def _pose_columns(matrices: np.ndarray) -> dict:
    q = rotation_to_quaternion(matrices[:, :3, :3]) if len(matrices) else np.zeros((0, 4))
    t = matrices[:, :3, 3]
    return {
        "px": t[:, 0], "py": t[:, 1], "pz": t[:, 2],
        "qx": q[:, 0], "qy": q[:, 1], "qz": q[:, 2], "qw": q[:, 3],
    }


def read_poses(path) -> PoseSamples:
    """``t px py pz qx qy qz qw`` lines (ground truth, tracker output, trajectories)."""
    path = Path(path)
    table = read_table(path, 8)
    _check_monotone(path, table[:, 0])
    return PoseSamples(table[:, 0], _poses_from_table(path, table[:, 1:]))


def write_poses(path, samples: PoseSamples) -> Path:
    return write_table(path, {"t": samples.times, **_pose_columns(samples.matrices)})


read_groundtruth = read_poses
write_groundtruth = write_poses


def write_trajectory(path, traj: SplineTrajectory, rate: float) -> Path:
    """Spline sampled at ``rate`` Hz over its domain, in the ground-truth grammar."""
    return write_poses(path, PoseSamples.from_trajectory(traj, rate))


def write_control_poses(path, traj: SplineTrajectory) -> Path:
    return write_table(
        path,
        {"t": traj.knot_times, **_pose_columns(traj.matrices)},
        header=f"control poses t0={traj.t0:.12g} dt={traj.dt:.12g}",
    )


def read_control_poses(path) -> SplineTrajectory:
    """Inverse of write_control_poses; knot times must be uniformly spaced."""
    path = Path(path)
    samples = read_poses(path)
    if len(samples) < 4:
        raise ParseError(path, 0, None, f"need at least 4 control poses, found {len(samples)}")
    steps = np.diff(samples.times)
    dt = float(np.mean(steps))
    if not dt > 0.0 or np.max(np.abs(steps - dt)) > KNOT_SPACING_TOLERANCE * max(1.0, dt):
        raise ParseError(path, 0, None, "control pose times are not uniformly spaced")
    return SplineTrajectory.from_matrices(samples.times[0], dt, samples.matrices)


def read_handeye(path) -> Pose:
    """Single ``px py pz qx qy qz qw`` line."""
    path = Path(path)
    table = read_table(path, 7)
    if len(table) != 1:
        raise ParseError(path, 0, None, f"expected exactly one pose, found {len(table)}")
    return Pose.from_matrix(_poses_from_table(path, table)[0])


# calibration

@dataclass(frozen=True, eq=False)
class Calibration:
    intrinsics: CameraIntrinsics
    distortion: np.ndarray  # k1 k2 p1 p2 k3, OpenCV order

    @property
    def is_distorted(self) -> bool:
        return bool(np.any(self.distortion != 0.0))


def read_calib(path) -> Calibration:
    """``fx fy cx cy k1 k2 p1 p2 k3`` with an optional trailing ``width height``."""
    path = Path(path)
    table = read_table(path, (9, 11))
    if len(table) != 1:
        raise ParseError(path, 0, None, f"expected one calibration line, found {len(table)}")
    row = table[0]
    size = {} if len(row) == 9 else {"width": int(row[9]), "height": int(row[10])}
    try:
        intrinsics = CameraIntrinsics(*row[:4], **size)
    except ValueError as exc:
        raise ParseError(path, _line_of_row(path, 0), None, str(exc)) from exc
    return Calibration(intrinsics, row[4:9].copy())


def write_calib(path, calib: Calibration) -> Path:
    K = calib.intrinsics
    values = [K.fx, K.fy, K.cx, K.cy, *calib.distortion, K.width, K.height]
    path = Path(path)
    path.write_text(" ".join(FLOAT_FORMAT % v for v in values) + "\n", encoding="utf-8")
    return path


def undistort_events(events: EventStream, calib: Calibration) -> EventStream:
    """Event coordinates with lens distortion removed (pixels of the same K)."""
    if not calib.is_distorted or len(events) == 0:
        return events
    K = calib.intrinsics.K
    pts = events.xy.reshape(-1, 1, 2)
    undistorted = cv2.undistortPoints(pts, K, calib.distortion, P=K).reshape(-1, 2)
    return EventStream(events.t, undistorted[:, 0], undistorted[:, 1], events.polarity)


# map, associations, parameters

def read_map(path) -> SceneMap:
    """``id X Y Z`` (points) or ``id Xs Ys Zs Xe Ye Ze`` (segments), by field count."""
    path = Path(path)
    table = read_table(path, (4, 7))
    if len(table) == 0:
        raise ParseError(path, 0, None, "map file is empty")
    _check_integral(path, table[:, 0], 1)
    ids = table[:, 0].astype(np.int64)
    try:
        if table.shape[1] == 4:
            return SceneMap.from_points(ids, table[:, 1:4])
        return SceneMap.from_segments(ids, table[:, 1:4], table[:, 4:7])
    except ValueError as exc:
        raise ParseError(path, 0, None, str(exc)) from exc


def write_map(path, scene_map: SceneMap) -> Path:
    if scene_map.kind == "point":
        P = scene_map.points
        return write_table(path, {"id": scene_map.point_ids, "X": P[:, 0], "Y": P[:, 1], "Z": P[:, 2]})
    S, E = scene_map.segment_starts, scene_map.segment_ends
    return write_table(path, {
        "id": scene_map.segment_ids,
        "Xs": S[:, 0], "Ys": S[:, 1], "Zs": S[:, 2],
        "Xe": E[:, 0], "Ye": E[:, 1], "Ze": E[:, 2],
    })


def map_file_name(scene_map: SceneMap) -> str:
    return MAP_POINTS_FILE if scene_map.kind == "point" else MAP_LINES_FILE


def read_associations(path, kind: str) -> Associations:
    """``event_index primitive_id`` lines."""
    path = Path(path)
    table = read_table(path, 2)
    _check_integral(path, table[:, 0], 1)
    _check_integral(path, table[:, 1], 2)
    return Associations(table[:, 0].astype(np.int64), table[:, 1].astype(np.int64), kind)


def write_associations(path, associations: Associations) -> Path:
    return write_table(path, {
        "event_index": associations.event_index, "primitive_id": associations.primitive_id,
    })


def read_params(path) -> ModelParams:
    """``name value`` lines for the nine model parameters; missing names keep defaults."""
    path = Path(path)
    values = dict(zip(PARAM_NAMES, ModelParams().vector))
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            fields = raw.split("#", 1)[0].split()
            if not fields:
                continue
            if len(fields) != 2 or fields[0] not in values:
                raise ParseError(path, lineno, None, f"expected '<parameter> <value>', got {raw.strip()!r}")
            try:
                values[fields[0]] = float(fields[1])
            except ValueError:
                raise ParseError(path, lineno, 2, f"cannot parse {fields[1]!r} as a number") from None
    try:
        return ModelParams.from_vector([values[name] for name in PARAM_NAMES])
    except ValueError as exc:
        raise ParseError(path, 0, None, str(exc)) from exc


def write_params(path, params: ModelParams) -> Path:
    path = Path(path)
    lines = [f"{name} {FLOAT_FORMAT % v}" for name, v in zip(PARAM_NAMES, params.vector)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# datasets

@dataclass(frozen=True, eq=False)
class Dataset:
    root: Path
    events: EventStream
    calibration: Calibration
    scene_map: SceneMap
    imu: ImuStream | None = None
    associations: Associations | None = None
    groundtruth: PoseSamples | None = None
    handeye: Pose | None = None
    true_params: ModelParams | None = None

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.calibration.intrinsics


def find_map_file(root: Path) -> Path:
    for name in (MAP_POINTS_FILE, MAP_LINES_FILE):
        if (root / name).exists():
            return root / name
    raise FileNotFoundError(f"No {MAP_POINTS_FILE} or {MAP_LINES_FILE} in {root}")


def load_dataset(root) -> Dataset:
    """Read a dataset directory; events are undistorted at ingestion."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"Dataset directory {root} does not exist")
    calibration = read_calib(root / CALIB_FILE)
    events = undistort_events(read_events(root / EVENTS_FILE), calibration)
    scene_map = read_map(find_map_file(root))

    def optional(name, reader, *args):
        path = root / name
        return reader(path, *args) if path.exists() else None

    dataset = Dataset(
        root=root,
        events=events,
        calibration=calibration,
        scene_map=scene_map,
        imu=optional(IMU_FILE, read_imu),
        associations=optional(ASSOC_FILE, read_associations, scene_map.kind),
        groundtruth=optional(GROUNDTRUTH_FILE, read_groundtruth),
        handeye=optional(HANDEYE_FILE, read_handeye),
        true_params=optional(TRUE_PARAMS_FILE, read_params),
    )
    logger.info(
        "Loaded %s: %d events, %d IMU samples, %d map %ss",
        root, len(events), len(dataset.imu) if dataset.imu is not None else 0,
        len(scene_map), scene_map.kind,
    )
    return dataset


def write_dataset(root, sim) -> list[Path]:
    """Write a SimulatedDataset in the dataset layout; returns the written files."""
    root = Path(root)
    ensure_output_directory(root)
    calib = Calibration(sim.intrinsics, np.zeros(5))
    return [
        write_events(root / EVENTS_FILE, sim.events),
        write_imu(root / IMU_FILE, sim.imu),
        write_groundtruth(root / GROUNDTRUTH_FILE, sim.groundtruth),
        write_calib(root / CALIB_FILE, calib),
        write_map(root / map_file_name(sim.scene_map), sim.scene_map),
        write_associations(root / ASSOC_FILE, sim.associations),
        write_params(root / TRUE_PARAMS_FILE, sim.params),
        write_control_poses(root / "control_poses_true.txt", sim.trajectory),
    ]
