"""Synthetic trajectories, maps and event/IMU streams with known ground truth.

The camera looks along its +z axis; with the identity pose the scene sits in
front of it around world z = depth. Everything is drawn from one
``numpy.random.Generator`` seeded by the configuration, so a fixed seed gives
identical output.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadSpec, NoVisiblePrimitives
from .estimator import Associations
from .geometry import Pose, se3_exp
from .sensors import (
    DEPTH_EPSILON,
    CameraIntrinsics,
    EventStream,
    GravityModel,
    ImuStream,
    ModelParams,
    SceneMap,
    camera_points,
    imu_predictions,
    map_to_world,
    pinhole,
)
from .trajectory import PoseSamples, SplineTrajectory

logger = logging.getLogger(__name__)

TRAJECTORY_KINDS = ("constant", "constant_twist", "sinusoidal", "control_poses")
MAP_KINDS = ("points", "lines")


@dataclass(frozen=True)
class TrajectorySpec:
    """Analytic twist program (or explicit control poses) sampled at the knots.

    ``constant_twist`` uses ``twist`` as the increment between consecutive
    control poses; ``sinusoidal`` evaluates xi(t) = amplitude * sin(2 pi f t + phase)
    at each knot time and sets T_i = base * exp(xi(t_i)).
    """
    kind: str = "sinusoidal"
    duration: float = 10.0  # s of valid trajectory domain
    dt: float = 0.1  # knot spacing
    t0: float = 0.0  # start of the valid domain
    base: Pose = field(default_factory=Pose.identity)
    twist: tuple[float, ...] = (0.0,) * 6
    amplitude: tuple[float, ...] = (0.15, 0.1, 0.05, 0.2, 0.2, 0.3)
    frequency: tuple[float, ...] = (0.25, 0.35, 0.3, 0.4, 0.3, 0.2)  # Hz
    phase: tuple[float, ...] = (0.0, 1.0, 2.0, 0.5, 1.5, 2.5)  # rad
    control_poses: tuple[Pose, ...] = ()


@dataclass(frozen=True)
class MapSpec:
    """Random points in a box in front of the camera, or a square of segments."""
    kind: str = "points"
    count: int = 100
    depth: float = 1.0  # m, box centre / square plane along +z
    half_extent: tuple[float, float, float] = (0.4, 0.3, 0.2)
    side: float = 0.5  # m, square side for line maps


@dataclass(frozen=True)
class SimConfig:
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    map: MapSpec = field(default_factory=MapSpec)
    intrinsics: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(200.0, 200.0, 120.0, 90.0))
    event_rate: float = 100.0  # Hz per primitive
    imu_rate: float = 1000.0  # Hz
    groundtruth_rate: float = 200.0  # Hz
    sigma_e: float = 0.1  # px
    sigma_omega: float = 0.03  # rad/s
    sigma_a: float = 0.1  # m/s^2
    params: ModelParams = field(default_factory=ModelParams)
    seed: int = 0

    def __post_init__(self):
        for name in ("event_rate", "imu_rate", "groundtruth_rate"):
            if not getattr(self, name) > 0.0:
                raise BadSpec(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("sigma_e", "sigma_omega", "sigma_a"):
            if getattr(self, name) < 0.0:
                raise BadSpec(f"{name} must not be negative, got {getattr(self, name)!r}")


@dataclass(frozen=True, eq=False)
class SimulatedDataset:
    trajectory: SplineTrajectory
    scene_map: SceneMap
    intrinsics: CameraIntrinsics
    params: ModelParams
    events: EventStream
    associations: Associations
    imu: ImuStream
    groundtruth: PoseSamples


def gen_trajectory(spec: TrajectorySpec) -> SplineTrajectory:
    """Control poses for ``spec``; the valid domain covers [t0, t0 + duration)."""
    if spec.kind not in TRAJECTORY_KINDS:
        raise BadSpec(f"Unknown trajectory kind {spec.kind!r}; expected one of {TRAJECTORY_KINDS}")
    if not spec.dt > 0.0:
        raise BadSpec(f"Knot spacing must be positive, got {spec.dt!r}")

    if spec.kind == "control_poses":
        if len(spec.control_poses) < 4:
            raise BadSpec("An explicit trajectory needs at least 4 control poses")
        return SplineTrajectory(spec.t0 - spec.dt, spec.dt, spec.control_poses)

    if not spec.duration > 0.0:
        raise BadSpec(f"Trajectory duration must be positive, got {spec.duration!r}")
    intervals = max(1, math.ceil(spec.duration / spec.dt - 1e-9))
    n = intervals + 2
    knot_t0 = spec.t0 - spec.dt
    times = knot_t0 + spec.dt * np.arange(n + 1)
    base = spec.base.matrix

    if spec.kind == "constant":
        mats = np.repeat(base[None], n + 1, axis=0)
    elif spec.kind == "constant_twist":
        twist = _six(spec.twist, "twist")
        if np.linalg.norm(twist[3:]) >= np.pi:
            raise BadSpec("Rotational part of a constant twist must be below pi")
        mats = base @ se3_exp(np.arange(n + 1)[:, None] * twist)
    else:
        amp, freq, phase = (_six(v, name) for v, name in (
            (spec.amplitude, "amplitude"), (spec.frequency, "frequency"), (spec.phase, "phase"),
        ))
        xi = amp * np.sin(2.0 * np.pi * freq * (times - spec.t0)[:, None] + phase)
        mats = base @ se3_exp(xi)
    return SplineTrajectory.from_matrices(knot_t0, spec.dt, mats)


def _six(values, name: str) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.shape != (6,):
        raise BadSpec(f"{name} must have 6 components (alpha, beta), got {len(v)}")
    return v


def gen_map(spec: MapSpec, rng: np.random.Generator) -> SceneMap:
    if spec.kind not in MAP_KINDS:
        raise BadSpec(f"Unknown map kind {spec.kind!r}; expected one of {MAP_KINDS}")
    if not spec.depth > 0.0:
        raise BadSpec(f"Scene depth must be positive, got {spec.depth!r}")
    centre = np.array([0.0, 0.0, spec.depth])
    if spec.kind == "points":
        if spec.count < 1:
            raise BadSpec("A point map needs at least one point")
        half = np.asarray(spec.half_extent, dtype=float)
        points = centre + rng.uniform(-1.0, 1.0, size=(spec.count, 3)) * half
        return SceneMap.from_points(np.arange(spec.count), points)
    if not spec.side > 0.0:
        raise BadSpec(f"Square side must be positive, got {spec.side!r}")
    h = 0.5 * spec.side
    corners = centre + np.array([[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]])
    return SceneMap.from_segments(np.arange(4), corners, np.roll(corners, -1, axis=0))


def _sample_times(traj: SplineTrajectory, count: int, rng) -> np.ndarray:
    start, end = traj.domain
    t = rng.uniform(start, end, size=count)
    return np.minimum(t, np.nextafter(end, start))


def gen_events(
    traj: SplineTrajectory,
    scene_map: SceneMap,
    K: CameraIntrinsics,
    params: ModelParams,
    config: SimConfig,
    rng: np.random.Generator | None = None,
) -> tuple[EventStream, Associations]:
    """Events at corrected projections plus Gaussian pixel noise, sorted by time."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    start, end = traj.domain
    per_primitive = int(round(config.event_rate * (end - start)))
    n_prim = len(scene_map)
    times = _sample_times(traj, per_primitive * n_prim, rng)
    prim = np.repeat(np.arange(n_prim), per_primitive)
    T = traj.sample(times)
    R, t = T[:, :3, :3], T[:, :3, 3]
    rotation = params.rotation

    if scene_map.kind == "point":
        Xc = camera_points(R, t, map_to_world(scene_map.points[prim], params.scale, rotation))
        front = Xc[:, 2] > DEPTH_EPSILON
        pix = pinhole(K, np.where(front[:, None], Xc, 1.0))
        pix = pix + rng.normal(0.0, 1.0, size=pix.shape) * config.sigma_e
    else:
        Xa = camera_points(R, t, map_to_world(scene_map.segment_starts[prim], params.scale, rotation))
        Xb = camera_points(R, t, map_to_world(scene_map.segment_ends[prim], params.scale, rotation))
        front = (Xa[:, 2] > DEPTH_EPSILON) & (Xb[:, 2] > DEPTH_EPSILON)
        a = pinhole(K, np.where(front[:, None], Xa, 1.0))
        b = pinhole(K, np.where(front[:, None], Xb, 1.0))
        d = b - a
        along = rng.uniform(0.0, 1.0, size=len(prim))
        normal = np.stack([-d[:, 1], d[:, 0]], axis=-1)
        normal /= np.maximum(np.linalg.norm(normal, axis=-1, keepdims=True), 1e-12)
        offset = rng.normal(0.0, 1.0, size=len(prim)) * config.sigma_e
        pix = a + along[:, None] * d + offset[:, None] * normal

    polarity = rng.choice(np.array([-1, 1], dtype=np.int8), size=len(prim))
    keep = front & K.contains(pix)
    if not np.any(keep):
        raise NoVisiblePrimitives("No map primitive is visible along the trajectory")
    visible = np.unique(prim[keep])
    if len(visible) < n_prim:
        logger.info("%d of %d primitives never visible", n_prim - len(visible), n_prim)

    order = np.flatnonzero(keep)[np.argsort(times[keep], kind="stable")]
    events = EventStream(times[order], pix[order, 0], pix[order, 1], polarity[order])
    associations = Associations(
        np.arange(len(order)), scene_map.ids[prim[order]],
        "point" if scene_map.kind == "point" else "line",
    )
    logger.info(
        "Generated %d events (%d discarded out of frame)", len(order), len(prim) - len(order),
    )
    return events, associations


def gen_imu(
    traj: SplineTrajectory,
    params: ModelParams,
    config: SimConfig,
    rng: np.random.Generator | None = None,
    gravity: GravityModel | None = None,
) -> ImuStream:
    """IMU samples at a uniform rate over the spline domain, biases and noise included."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    start, end = traj.domain
    times = start + np.arange(int(math.ceil((end - start) * config.imu_rate))) / config.imu_rate
    times = times[times < end]
    T, Td, Tdd = traj.sample_derivatives(times)
    omega, accel = imu_predictions(T, Td, Tdd, params, gravity)
    omega = omega + rng.normal(0.0, 1.0, size=omega.shape) * config.sigma_omega
    accel = accel + rng.normal(0.0, 1.0, size=accel.shape) * config.sigma_a
    return ImuStream(times, omega, accel)


def simulate(config: SimConfig) -> SimulatedDataset:
    """Trajectory, map, events, IMU and ground truth from one seeded generator."""
    rng = np.random.default_rng(config.seed)
    traj = gen_trajectory(config.trajectory)
    scene_map = gen_map(config.map, rng)
    events, associations = gen_events(traj, scene_map, config.intrinsics, config.params, config, rng)
    imu = gen_imu(traj, config.params, config, rng)
    groundtruth = PoseSamples.from_trajectory(traj, config.groundtruth_rate)
    return SimulatedDataset(
        trajectory=traj,
        scene_map=scene_map,
        intrinsics=config.intrinsics,
        params=config.params,
        events=events,
        associations=associations,
        imu=imu,
        groundtruth=groundtruth,
    )
