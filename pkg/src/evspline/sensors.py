"""Measurement types and models: IMU prediction, projection, visual residuals."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DegenerateSegment
from .geometry import Pose, rot_x, rot_y, vee
from .trajectory import PoseWithDerivatives

logger = logging.getLogger(__name__)

GRAVITY_MAGNITUDE = 9.81
DEPTH_EPSILON = 1e-6  # m
DEGENERATE_SEGMENT_PX = 1e-9
IMU_SKEW_TOLERANCE = 1e-6
MAX_PLAUSIBLE_ACCEL = 160.0  # m/s^2
MAX_PLAUSIBLE_OMEGA = 35.0  # rad/s

PARAM_NAMES = (
    "gyro_bias_x", "gyro_bias_y", "gyro_bias_z",
    "accel_bias_x", "accel_bias_y", "accel_bias_z",
    "scale", "roll", "pitch",
)


@dataclass(frozen=True)
class Event:
    t: float  # s
    x: float  # px, undistorted
    y: float  # px, undistorted
    polarity: int  # -1 or +1


@dataclass(frozen=True, eq=False)
class ImuSample:
    t: float
    omega: np.ndarray  # rad/s
    accel: np.ndarray  # m/s^2, specific force


@dataclass(frozen=True, eq=False)
class EventStream:
    """Column storage for a sequence of events."""
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    polarity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(-1))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).reshape(-1))
        object.__setattr__(self, "polarity", np.asarray(self.polarity, dtype=np.int8).reshape(-1))
        if not len(self.t) == len(self.x) == len(self.y) == len(self.polarity):
            raise ValueError("Event columns must have equal length")

    @classmethod
    def empty(cls) -> "EventStream":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int8))

    @classmethod
    def from_events(cls, events) -> "EventStream":
        events = list(events)
        if not events:
            return cls.empty()
        return cls(
            [e.t for e in events], [e.x for e in events], [e.y for e in events],
            [e.polarity for e in events],
        )

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, k: int) -> Event:
        return Event(float(self.t[k]), float(self.x[k]), float(self.y[k]), int(self.polarity[k]))

    @property
    def xy(self) -> np.ndarray:
        return np.stack([self.x, self.y], axis=-1)

    def subset(self, index) -> "EventStream":
        return EventStream(self.t[index], self.x[index], self.y[index], self.polarity[index])


@dataclass(frozen=True, eq=False)
class ImuStream:
    t: np.ndarray
    omega: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(-1))
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).reshape(-1, 3))
        if not len(self.t) == len(self.omega) == len(self.accel):
            raise ValueError("IMU columns must have equal length")

    @classmethod
    def empty(cls) -> "ImuStream":
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))

    @classmethod
    def from_samples(cls, samples) -> "ImuStream":
        samples = list(samples)
        if not samples:
            return cls.empty()
        return cls([s.t for s in samples], [s.omega for s in samples], [s.accel for s in samples])

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, k: int) -> ImuSample:
        return ImuSample(float(self.t[k]), self.omega[k].copy(), self.accel[k].copy())

    def subset(self, index) -> "ImuStream":
        return ImuStream(self.t[index], self.omega[index], self.accel[index])

    def check_plausibility(self) -> int:
        """Log (but accept) samples beyond physically plausible magnitudes."""
        bad = (np.linalg.norm(self.accel, axis=1) >= MAX_PLAUSIBLE_ACCEL) | (
            np.linalg.norm(self.omega, axis=1) >= MAX_PLAUSIBLE_OMEGA
        )
        count = int(bad.sum())
        if count:
            first = int(np.flatnonzero(bad)[0])
            logger.warning(
                "%d IMU samples exceed plausible magnitudes (first at t=%.6f s)",
                count, self.t[first],
            )
        return count


@dataclass(frozen=True, eq=False)
class SceneMap:
    """Known 3D map: either points or line segments, in the map frame."""
    point_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    segment_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    segment_starts: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    segment_ends: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        object.__setattr__(self, "point_ids", np.asarray(self.point_ids, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "segment_ids", np.asarray(self.segment_ids, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "segment_starts", np.asarray(self.segment_starts, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "segment_ends", np.asarray(self.segment_ends, dtype=float).reshape(-1, 3))
        has_points, has_segments = len(self.points) > 0, len(self.segment_starts) > 0
        if has_points == has_segments:
            raise ValueError("A scene map holds either points or segments, not both or neither")
        if len(self.point_ids) != len(self.points) or not (
            len(self.segment_ids) == len(self.segment_starts) == len(self.segment_ends)
        ):
            raise ValueError("Map ids and coordinates differ in length")
        ids = self.ids
        if len(np.unique(ids)) != len(ids):
            raise ValueError("Map primitive ids must be unique")
        if has_segments and np.any(
            np.all(self.segment_starts == self.segment_ends, axis=1)
        ):
            raise ValueError("Segment start and end points must differ")

    @classmethod
    def from_points(cls, ids, points) -> "SceneMap":
        return cls(point_ids=ids, points=points)

    @classmethod
    def from_segments(cls, ids, starts, ends) -> "SceneMap":
        return cls(segment_ids=ids, segment_starts=starts, segment_ends=ends)

    @property
    def kind(self) -> str:
        return "point" if len(self.points) else "line"

    @property
    def ids(self) -> np.ndarray:
        return self.point_ids if self.kind == "point" else self.segment_ids

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def vertices(self) -> np.ndarray:
        """All 3D coordinates (points, or segment endpoints)."""
        if self.kind == "point":
            return self.points
        return np.concatenate([self.segment_starts, self.segment_ends])

    def index_of(self, ids) -> np.ndarray:
        """Row index of each primitive id; raises KeyError for unknown ids."""
        ids = np.asarray(ids, dtype=np.int64)
        order = np.argsort(self.ids)
        sorted_ids = self.ids[order]
        pos = np.searchsorted(sorted_ids, ids).clip(0, max(len(sorted_ids) - 1, 0))
        found = sorted_ids[pos] == ids if len(sorted_ids) else np.zeros(len(ids), dtype=bool)
        if not np.all(found):
            raise KeyError(f"Unknown map primitive id {int(ids[~found][0])}")
        return order[pos]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 240
    height: int = 180

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("Focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def contains(self, pixels, margin: float = 0.0) -> np.ndarray:
        pixels = np.asarray(pixels, dtype=float)
        return (
            (pixels[..., 0] >= margin) & (pixels[..., 0] < self.width - margin)
            & (pixels[..., 1] >= margin) & (pixels[..., 1] < self.height - margin)
        )


@dataclass(frozen=True, eq=False)
class ModelParams:
    """theta = (gyro bias, accel bias, map scale, map roll/pitch)."""
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0
    orientation: tuple[float, float] = (0.0, 0.0)  # (alpha roll, beta pitch) [rad]

    def __post_init__(self):
        object.__setattr__(self, "gyro_bias", np.asarray(self.gyro_bias, dtype=float).reshape(3))
        object.__setattr__(self, "accel_bias", np.asarray(self.accel_bias, dtype=float).reshape(3))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "orientation", tuple(float(a) for a in self.orientation))
        if not self.scale > 0.0:
            raise ValueError(f"Map scale must be positive, got {self.scale}")
        if any(abs(a) >= np.pi / 2 for a in self.orientation):
            raise ValueError(f"Map roll/pitch must lie in (-pi/2, pi/2), got {self.orientation}")

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.gyro_bias, self.accel_bias, [self.scale], self.orientation])

    @classmethod
    def from_vector(cls, v) -> "ModelParams":
        v = np.asarray(v, dtype=float)
        return cls(v[0:3], v[3:6], v[6], (v[7], v[8]))

    @property
    def rotation(self) -> np.ndarray:
        """R(o) = R_x(alpha) R_y(beta)."""
        return map_rotation(*self.orientation)

    @property
    def similarity(self) -> np.ndarray:
        S = np.eye(4)
        S[:3, :3] = self.scale * self.rotation
        return S


def map_rotation(alpha: float, beta: float) -> np.ndarray:
    return rot_x(alpha) @ rot_y(beta)


@dataclass(frozen=True, eq=False)
class GravityModel:
    """World frame is z-up; the accelerometer at rest reads +g along world z."""
    g_w: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, GRAVITY_MAGNITUDE]))


def imu_model(T, Tdot, Tddot, gyro_bias, accel_bias, g_w):
    """omega = vee(R^T Rdot) + b_w,  a = R^T (sddot + g_w) + b_a."""
    Rt = np.swapaxes(T[..., :3, :3], -1, -2)
    omega = vee(Rt @ Tdot[..., :3, :3], tol=IMU_SKEW_TOLERANCE) + gyro_bias
    accel = np.einsum("...ij,...j->...i", Rt, Tddot[..., :3, 3] + g_w) + accel_bias
    return omega, accel


def imu_predictions(T, Tdot, Tddot, params: ModelParams, gravity: GravityModel | None = None):
    """Batched gyro and accelerometer predictions from (N, 4, 4) spline derivatives."""
    gravity = gravity or GravityModel()
    return imu_model(T, Tdot, Tddot, params.gyro_bias, params.accel_bias, gravity.g_w)


def predict_imu(d: PoseWithDerivatives, params: ModelParams, g: GravityModel | None = None):
    """Gyro and accelerometer prediction at one trajectory point."""
    return imu_predictions(d.T.matrix, d.Tdot, d.Tddot, params, g)


def camera_points(R_ws, t_ws, X_world) -> np.ndarray:
    """World points expressed in the camera frame of pose(s) (R_ws, t_ws)."""
    return np.einsum("...ji,...j->...i", R_ws, X_world - t_ws)


def map_to_world(X_map, scale: float, rotation: np.ndarray | None) -> np.ndarray:
    """Apply the map similarity (scale, rotation, no translation)."""
    if rotation is None:
        return X_map
    return scale * (np.asarray(X_map, dtype=float) @ rotation.T)


def pinhole(K: CameraIntrinsics, X_cam) -> np.ndarray:
    X_cam = np.asarray(X_cam, dtype=float)
    z = X_cam[..., 2]
    return np.stack([K.fx * X_cam[..., 0] / z + K.cx, K.fy * X_cam[..., 1] / z + K.cy], axis=-1)


@dataclass(frozen=True, eq=False)
class Projection:
    """Pixel coordinates of map-frame points seen from one camera pose."""
    T_ws: Pose
    K: CameraIntrinsics
    scale: float = 1.0
    rotation: np.ndarray | None = None

    def camera_frame(self, X) -> np.ndarray:
        Xw = map_to_world(X, self.scale, self.rotation)
        return camera_points(self.T_ws.rotation, self.T_ws.translation, Xw)

    def __call__(self, X) -> np.ndarray:
        Xc = self.camera_frame(X)
        depth = np.atleast_1d(Xc[..., 2])
        if np.any(depth <= DEPTH_EPSILON):
            raise BehindCamera(float(depth.min()))
        return pinhole(self.K, Xc)


def corrected_projection(T_ws: Pose, K: CameraIntrinsics, params: ModelParams) -> Projection:
    """Projection K [I|0] T_ws^-1 S(s, R(o)) of map-frame points."""
    return Projection(T_ws, K, params.scale, params.rotation)


def plain_projection(T_ws: Pose, K: CameraIntrinsics) -> Projection:
    return Projection(T_ws, K)


def point_residual(event: Event, X, projection: Projection) -> np.ndarray:
    """Observed minus predicted event location, in pixels."""
    return np.array([event.x, event.y]) - projection(np.asarray(X, dtype=float))


def segment_distance(p, a, b, signed: bool = False) -> np.ndarray:
    """Distance from p to the 2D segment [a, b], clamped to the endpoints.

    With ``signed`` the distance carries the side of the line through a and b
    while the foot of the perpendicular lies inside the segment; past the
    endpoints it stays positive, so the value is continuous across the extended
    line. It changes sign only through zero or where the foot leaves the segment
    on the negative side. Its square always equals the distance squared.
    """
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    d = b - a
    length2 = np.einsum("...i,...i->...", d, d)
    safe = np.where(length2 > 0.0, length2, 1.0)
    along = np.einsum("...i,...i->...", p - a, d) / safe
    t = np.clip(along, 0.0, 1.0)
    foot = a + t[..., None] * d
    dist = np.linalg.norm(p - foot, axis=-1)
    if not signed:
        return dist
    side = d[..., 0] * (p[..., 1] - a[..., 1]) - d[..., 1] * (p[..., 0] - a[..., 0])
    inside = (along > 0.0) & (along < 1.0)
    return np.where(inside & (side < 0.0), -dist, dist)


def line_residual(event: Event, segment, projection: Projection) -> float:
    """Distance in pixels from the event to the projected segment (start, end)."""
    start, end = (np.asarray(v, dtype=float) for v in segment)
    a, b = projection(np.stack([start, end]))
    if np.linalg.norm(b - a) <= DEGENERATE_SEGMENT_PX:
        raise DegenerateSegment(f"Projected segment endpoints coincide at {a}")
    return float(segment_distance(np.array([event.x, event.y]), a, b))
