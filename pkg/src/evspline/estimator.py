"""Batch visual-inertial estimation over spline control poses and model parameters.

The objective is

    F = 1/N sum_k ||r_e,k||^2 / sigma_e^2
      + 1/M sum_m ||w_m - w_hat(t_m)||^2 / sigma_w^2
      + 1/M sum_m ||a_m - a_hat(t_m)||^2 / sigma_a^2,

with the 1/N and 1/M prefactors folded into per-block weights so that F is
exactly the squared norm of the stacked weighted residual vector. Residual
blocks are ordered events first, then gyro, then accelerometer.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import DomainMismatch, EmptyProblem
from .geometry import se3_exp
from .sensors import (
    DEPTH_EPSILON,
    PARAM_NAMES,
    CameraIntrinsics,
    EventStream,
    GravityModel,
    ImuStream,
    ModelParams,
    SceneMap,
    camera_points,
    imu_model,
    map_rotation,
    map_to_world,
    pinhole,
    segment_distance,
)
from .solver import (
    FD_STEP,
    LMConfig,
    LMResult,
    colour_groups,
    grouped_central_difference,
    levenberg_marquardt,
    observability,
)
from .trajectory import (
    SplineTrajectory,
    basis_arrays,
    incremental_twists,
    spline_derivatives,
    spline_poses,
    support_owner,
)

logger = logging.getLogger(__name__)

BEHIND_CAMERA_CAP = 1e4  # px
BEHIND_CAMERA_SLOPE = 1e4  # px per metre behind the depth threshold
CAPPED_SHARE_WARNING = 0.5
GYRO_BIAS = slice(0, 3)
ACCEL_BIAS = slice(3, 6)
SCALE = 6
MAP_PARAMS = (SCALE, 7, 8)
GRAVITY_MARGINAL_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Association:
    event_index: int
    primitive_id: int
    kind: str  # "point" or "line"


@dataclass(frozen=True, eq=False)
class Associations:
    """Column storage for event-to-primitive associations."""
    event_index: np.ndarray
    primitive_id: np.ndarray
    kind: str

    def __post_init__(self):
        object.__setattr__(self, "event_index", np.asarray(self.event_index, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "primitive_id", np.asarray(self.primitive_id, dtype=np.int64).reshape(-1))
        if len(self.event_index) != len(self.primitive_id):
            raise ValueError("Association columns must have equal length")
        if self.kind not in ("point", "line"):
            raise ValueError(f"Association kind must be 'point' or 'line', got {self.kind!r}")

    @classmethod
    def from_records(cls, records, kind: str | None = None) -> "Associations":
        records = list(records)
        kinds = {r.kind for r in records}
        if len(kinds) > 1:
            raise ValueError("Associations mix point and line primitives")
        kind = kinds.pop() if kinds else (kind or "point")
        return cls(
            [r.event_index for r in records], [r.primitive_id for r in records], kind,
        )

    def __len__(self) -> int:
        return len(self.event_index)

    def __getitem__(self, k: int) -> Association:
        return Association(int(self.event_index[k]), int(self.primitive_id[k]), self.kind)


@dataclass(frozen=True)
class NoiseConfig:
    sigma_e: float = 0.1  # px
    sigma_omega: float = 0.03  # rad/s
    sigma_a: float = 0.1  # m/s^2

    def __post_init__(self):
        for name in ("sigma_e", "sigma_omega", "sigma_a"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class FreezeFlags:
    """Which parameters stay at their initial value.

    ``first_pose=None`` means automatic: frozen for visual-only problems, free
    when IMU terms are present.
    """
    gyro_bias: bool = False
    accel_bias: bool = False
    scale: bool = False
    orientation: bool = False
    first_pose: bool | None = None

    @classmethod
    def from_names(cls, names) -> "FreezeFlags":
        flags = {}
        for name in names:
            name = name.strip().lower().replace("_", "-")
            if not name:
                continue
            if name == "biases":
                flags.update(gyro_bias=True, accel_bias=True)
            elif name in ("gyro-bias", "accel-bias", "scale", "orientation", "first-pose"):
                flags[name.replace("-", "_")] = True
            elif name == "theta":
                flags.update(gyro_bias=True, accel_bias=True, scale=True, orientation=True)
            else:
                raise ValueError(f"Unknown freeze flag {name!r}")
        return cls(**flags)

    def theta_mask(self) -> np.ndarray:
        """Boolean mask over the 9 theta components, True where free."""
        mask = np.ones(9, dtype=bool)
        mask[GYRO_BIAS] = not self.gyro_bias
        mask[ACCEL_BIAS] = not self.accel_bias
        mask[6] = not self.scale
        mask[7:9] = not self.orientation
        return mask


@dataclass(eq=False)
class Problem:
    """Assembled least-squares problem; build with ``build_problem``."""
    trajectory: SplineTrajectory
    params: ModelParams
    events: EventStream
    primitive_index: np.ndarray  # row into the map arrays, per kept event
    event_ids: np.ndarray  # index of each kept event in the input stream
    imu: ImuStream
    scene_map: SceneMap
    intrinsics: CameraIntrinsics
    noise: NoiseConfig
    free_poses: np.ndarray
    free_theta: np.ndarray
    gravity: GravityModel = field(default_factory=GravityModel)
    dropped_events: int = 0
    dropped_imu: int = 0
    workers: int = 1

    def __post_init__(self):
        traj = self.trajectory
        self.event_seg, u = traj.locate(self.events.t)
        self.event_b = basis_arrays(u, traj.dt)[0]
        self.imu_seg, u = traj.locate(self.imu.t)
        self.imu_b, self.imu_db, self.imu_ddb = basis_arrays(u, traj.dt)
        self.observed = self.events.xy
        self.pose_column = np.full(traj.n + 1, -1, dtype=int)
        self.pose_column[self.free_poses] = 6 * np.arange(len(self.free_poses))

    @property
    def kind(self) -> str:
        return self.scene_map.kind

    @property
    def N(self) -> int:
        return len(self.events)

    @property
    def M(self) -> int:
        return len(self.imu)

    @property
    def event_dim(self) -> int:
        return 2 if self.kind == "point" else 1

    @property
    def n_event_rows(self) -> int:
        return self.event_dim * self.N

    @property
    def n_rows(self) -> int:
        return self.n_event_rows + 6 * self.M

    @property
    def dimension(self) -> int:
        return 6 * len(self.free_poses) + int(self.free_theta.sum())

    @property
    def weights(self) -> tuple[float, float, float]:
        w_e = 1.0 / np.sqrt(self.N * self.noise.sigma_e ** 2) if self.N else 0.0
        w_g = 1.0 / np.sqrt(self.M * self.noise.sigma_omega ** 2) if self.M else 0.0
        w_a = 1.0 / np.sqrt(self.M * self.noise.sigma_a ** 2) if self.M else 0.0
        return w_e, w_g, w_a

    @property
    def parameter_names(self) -> list[str]:
        """Column names; pose columns are unnamed."""
        return [""] * (6 * len(self.free_poses)) + [
            name for name, free in zip(PARAM_NAMES, self.free_theta) if free
        ]

    @property
    def initial_state(self) -> tuple[np.ndarray, np.ndarray]:
        return self.trajectory.matrices, self.params.vector

    def retract(self, state, delta) -> tuple[np.ndarray, np.ndarray]:
        """Apply a decision-vector increment.

        Free poses move as T <- T exp(d). The map scale moves in log space,
        s <- s exp(d), so it stays positive; the other free theta components add.
        """
        mats, theta = state
        delta = np.asarray(delta, dtype=float)
        n_pose = 6 * len(self.free_poses)
        if delta.shape != (self.dimension,):
            raise ValueError(f"Decision vector has shape {delta.shape}, expected ({self.dimension},)")
        mats = mats.copy()
        if n_pose:
            mats[self.free_poses] = mats[self.free_poses] @ se3_exp(delta[:n_pose].reshape(-1, 6))
        theta = theta.copy()
        free = np.flatnonzero(self.free_theta)
        for q, d in zip(free, delta[n_pose:]):
            theta[q] = _theta_step(theta[q], q, d)
        return mats, theta

    def state_at(self, x=None) -> tuple[np.ndarray, np.ndarray]:
        if x is None:
            return self.initial_state
        return self.retract(self.initial_state, x)


def _theta_step(value: float, q: int, d: float) -> float:
    return value * np.exp(d) if q == SCALE else value + d


@dataclass(frozen=True, eq=False)
class Evaluation:
    objective: float
    residuals: np.ndarray
    events: float
    gyro: float
    accel: float
    behind_camera: int = 0


@dataclass
class SolveReport:
    initial_objective: float
    final_objective: float
    iterations: int
    objective_trace: list[float]
    termination: str
    rms_event_px: float
    rms_gyro: float
    rms_accel: float
    objective_events: float
    objective_gyro: float
    objective_accel: float
    n_events: int
    n_imu: int
    n_control_poses: int
    dropped_events: int = 0
    dropped_imu: int = 0
    rejected_steps: int = 0
    elapsed_seconds: float = 0.0
    jacobian_seconds: float = 0.0
    rank_deficient: bool = False
    unobservable: list[str] = field(default_factory=list)
    marginal_ratios: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def lines(self) -> list[str]:
        """Key/value lines for report.txt."""
        out = [
            f"initial_objective {self.initial_objective:.12g}",
            f"final_objective {self.final_objective:.12g}",
            f"objective_events {self.objective_events:.12g}",
            f"objective_gyro {self.objective_gyro:.12g}",
            f"objective_accel {self.objective_accel:.12g}",
            f"iterations {self.iterations}",
            f"rejected_steps {self.rejected_steps}",
            f"termination {self.termination}",
            f"rms_event_px {self.rms_event_px:.12g}",
            f"rms_gyro {self.rms_gyro:.12g}",
            f"rms_accel {self.rms_accel:.12g}",
            f"n_events {self.n_events}",
            f"n_imu {self.n_imu}",
            f"n_control_poses {self.n_control_poses}",
            f"dropped_events {self.dropped_events}",
            f"dropped_imu {self.dropped_imu}",
            f"elapsed_seconds {self.elapsed_seconds:.6g}",
            f"jacobian_seconds {self.jacobian_seconds:.6g}",
            f"rank_deficient {str(self.rank_deficient).lower()}",
            f"unobservable {','.join(self.unobservable) or '-'}",
        ]
        out += [f"marginal_ratio_{k} {v:.6g}" for k, v in self.marginal_ratios.items()]
        out.append("objective_trace " + " ".join(f"{f:.12g}" for f in self.objective_trace))
        out += [f"warning {w}" for w in self.warnings]
        return out


@dataclass(frozen=True, eq=False)
class SolveResult:
    trajectory: SplineTrajectory
    params: ModelParams
    report: SolveReport


def build_problem(
    events: EventStream,
    associations: Associations,
    imu: ImuStream | None,
    scene_map: SceneMap,
    intrinsics: CameraIntrinsics,
    traj_init: SplineTrajectory,
    params_init: ModelParams | None = None,
    noise: NoiseConfig | None = None,
    freeze: FreezeFlags | None = None,
    strict: bool = False,
    workers: int = 1,
) -> Problem:
    """Keep associated in-domain measurements and fix the free parameter set.

    Measurements outside the spline domain are dropped and counted; with
    ``strict`` they raise DomainMismatch instead. Unassociated events are
    treated as noise. Passing ``imu=None`` (or an empty stream) builds a
    visual-only problem in which both biases are frozen.
    """
    params_init = params_init or ModelParams()
    noise = noise or NoiseConfig()
    freeze = freeze or FreezeFlags()
    imu = imu if imu is not None else ImuStream.empty()

    if len(associations) and associations.kind != scene_map.kind:
        raise ValueError(
            f"Associations refer to {associations.kind} primitives but the map holds {scene_map.kind}s"
        )
    idx = associations.event_index
    if len(idx) and (idx.min() < 0 or idx.max() >= len(events)):
        raise ValueError("Association references an event index outside the event stream")
    if len(np.unique(idx)) != len(idx):
        raise ValueError("Each event may be associated with at most one primitive")
    try:
        rows = scene_map.index_of(associations.primitive_id)
    except KeyError as exc:
        raise ValueError(f"Association references a missing primitive: {exc.args[0]}") from exc

    order = np.argsort(idx, kind="stable")
    idx, rows = idx[order], rows[order]
    ev_inside = traj_init.in_domain(events.t[idx])
    imu_inside = traj_init.in_domain(imu.t)
    dropped_events = idx[~ev_inside]
    dropped_imu = np.flatnonzero(~imu_inside)
    if strict and (len(dropped_events) or len(dropped_imu)):
        raise DomainMismatch(dropped_events.tolist(), dropped_imu.tolist())
    if len(dropped_events) or len(dropped_imu):
        logger.info(
            "Dropped %d events and %d IMU samples outside the spline domain [%.6f, %.6f)",
            len(dropped_events), len(dropped_imu), *traj_init.domain,
        )
    idx, rows = idx[ev_inside], rows[ev_inside]
    imu = imu.subset(imu_inside)
    unassociated = len(events) - len(associations)
    if unassociated:
        logger.info("%d unassociated events treated as noise", unassociated)

    if len(idx) == 0 and len(imu) == 0:
        raise EmptyProblem("No associated event or IMU sample lies inside the spline domain")

    free_theta = freeze.theta_mask()
    if len(imu) == 0:
        free_theta[GYRO_BIAS] = False
        free_theta[ACCEL_BIAS] = False
    if len(idx) == 0:
        free_theta[list(MAP_PARAMS)] = False
    freeze_first = freeze.first_pose if freeze.first_pose is not None else len(imu) == 0
    free_poses = np.arange(1 if freeze_first else 0, traj_init.n + 1)

    problem = Problem(
        trajectory=traj_init,
        params=params_init,
        events=events.subset(idx),
        primitive_index=rows,
        event_ids=idx,
        imu=imu,
        scene_map=scene_map,
        intrinsics=intrinsics,
        noise=noise,
        free_poses=free_poses,
        free_theta=free_theta,
        dropped_events=len(dropped_events),
        dropped_imu=len(dropped_imu),
        workers=max(1, int(workers)),
    )
    logger.info(
        "Problem: %d events, %d IMU samples, %d control poses (%d free), %d free model parameters",
        problem.N, problem.M, traj_init.n + 1, len(free_poses), int(free_theta.sum()),
    )
    return problem


def _behind_camera_penalty(depth: np.ndarray) -> np.ndarray:
    """Residual for primitives behind the camera; grows with the distance behind."""
    return BEHIND_CAMERA_CAP + BEHIND_CAMERA_SLOPE * (DEPTH_EPSILON - depth)


def _event_residuals(problem: Problem, mats, twists, theta) -> tuple[np.ndarray, int]:
    """Weighted event residuals, (N, 2) for points or (N,) for lines."""
    if problem.N == 0:
        return np.zeros((0, 2) if problem.kind == "point" else 0), 0
    w_e = problem.weights[0]
    T = spline_poses(mats, twists, problem.event_seg, problem.event_b)
    R, t = T[:, :3, :3], T[:, :3, 3]
    rotation = map_rotation(theta[7], theta[8])
    K = problem.intrinsics
    if problem.kind == "point":
        Xc = camera_points(R, t, map_to_world(problem.scene_map.points[problem.primitive_index], theta[SCALE], rotation))
        depth = Xc[:, 2]
        behind = depth <= DEPTH_EPSILON
        r = problem.observed - pinhole(K, Xc)
        r[behind] = _behind_camera_penalty(depth[behind])[:, None]
    else:
        ends = []
        for X in (problem.scene_map.segment_starts, problem.scene_map.segment_ends):
            ends.append(camera_points(R, t, map_to_world(X[problem.primitive_index], theta[SCALE], rotation)))
        depth = np.minimum(ends[0][:, 2], ends[1][:, 2])
        behind = depth <= DEPTH_EPSILON
        r = segment_distance(problem.observed, pinhole(K, ends[0]), pinhole(K, ends[1]), signed=True)
        r[behind] = _behind_camera_penalty(depth[behind])
    return w_e * r, int(behind.sum())


def _imu_residuals(problem: Problem, mats, twists, theta) -> tuple[np.ndarray, np.ndarray]:
    """Weighted gyro and accelerometer residuals, each (M, 3)."""
    if problem.M == 0:
        return np.zeros((0, 3)), np.zeros((0, 3))
    _, w_g, w_a = problem.weights
    T, Td, Tdd = spline_derivatives(
        mats, twists, problem.imu_seg, problem.imu_b, problem.imu_db, problem.imu_ddb,
    )
    omega, accel = imu_model(T, Td, Tdd, theta[GYRO_BIAS], theta[ACCEL_BIAS], problem.gravity.g_w)
    return w_g * (problem.imu.omega - omega), w_a * (problem.imu.accel - accel)


def _evaluate_state(problem: Problem, mats, theta) -> Evaluation:
    twists = incremental_twists(mats)
    r_e, behind = _event_residuals(problem, mats, twists, theta)
    r_g, r_a = _imu_residuals(problem, mats, twists, theta)
    F_e, F_g, F_a = (float(np.sum(r * r)) for r in (r_e, r_g, r_a))
    if behind:
        logger.debug("%d events behind the camera, residuals capped", behind)
    residuals = np.concatenate([r_e.ravel(), r_g.ravel(), r_a.ravel()])
    return Evaluation(F_e + F_g + F_a, residuals, F_e, F_g, F_a, behind)


def evaluate(problem: Problem, x=None) -> Evaluation:
    """Objective and weighted residual vector at decision vector ``x`` (None means zero)."""
    return _evaluate_state(problem, *problem.state_at(x))


def _perturb_poses(mats, delta):
    return mats @ se3_exp(delta.reshape(-1, 6))


def _pose_columns(problem: Problem, mats, theta, group, j):
    """Central difference for coordinate j of every pose in ``group`` at once."""
    def blocks(m):
        tw = incremental_twists(m)
        r_e, _ = _event_residuals(problem, m, tw, theta)
        r_g, r_a = _imu_residuals(problem, m, tw, theta)
        return r_e.reshape(problem.N, problem.event_dim), np.concatenate([r_g, r_a], axis=1)

    d_ev, d_imu = grouped_central_difference(blocks, _perturb_poses, mats, group, j, len(mats))

    rows, cols, vals = [], [], []
    dim = problem.event_dim
    if problem.N:
        owner = support_owner(group, problem.event_seg)
        hit = np.flatnonzero(owner >= 0)
        col = problem.pose_column[owner[hit]] + j
        for c in range(dim):
            rows.append(dim * hit + c)
            cols.append(col)
            vals.append(d_ev[hit, c])
    if problem.M:
        owner = support_owner(group, problem.imu_seg)
        hit = np.flatnonzero(owner >= 0)
        col = problem.pose_column[owner[hit]] + j
        base = problem.n_event_rows
        for c in range(3):
            rows.append(base + 3 * hit + c)
            cols.append(col)
            vals.append(d_imu[hit, c])
            rows.append(base + 3 * problem.M + 3 * hit + c)
            cols.append(col)
            vals.append(d_imu[hit, 3 + c])
    return rows, cols, vals


def _theta_columns(problem: Problem, mats, theta, twists):
    rows, cols, vals = [], [], []
    column = 6 * len(problem.free_poses)
    for q in np.flatnonzero(problem.free_theta):
        plus, minus = theta.copy(), theta.copy()
        plus[q] = _theta_step(theta[q], q, FD_STEP)
        minus[q] = _theta_step(theta[q], q, -FD_STEP)
        if q in MAP_PARAMS:
            d = (_event_residuals(problem, mats, twists, plus)[0]
                 - _event_residuals(problem, mats, twists, minus)[0]) / (2.0 * FD_STEP)
            rows.append(np.arange(problem.n_event_rows))
            vals.append(d.ravel())
        else:
            pick = 0 if q < 3 else 1
            d = (_imu_residuals(problem, mats, twists, plus)[pick]
                 - _imu_residuals(problem, mats, twists, minus)[pick]) / (2.0 * FD_STEP)
            rows.append(problem.n_event_rows + 3 * problem.M * pick + np.arange(3 * problem.M))
            vals.append(d.ravel())
        cols.append(np.full(len(rows[-1]), column))
        column += 1
    return rows, cols, vals


def _jacobian_state(problem: Problem, mats, theta) -> sparse.csr_matrix:
    twists = incremental_twists(mats)
    groups = [g[problem.pose_column[g] >= 0] for g in colour_groups(len(mats))]
    tasks = [(g, j) for g in groups if len(g) for j in range(6)]
    if problem.workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=problem.workers) as pool:
            parts = list(pool.map(lambda task: _pose_columns(problem, mats, theta, *task), tasks))
    else:
        parts = [_pose_columns(problem, mats, theta, *task) for task in tasks]
    parts.append(_theta_columns(problem, mats, theta, twists))

    rows = [r for p in parts for r in p[0]]
    cols = [c for p in parts for c in p[1]]
    vals = [v for p in parts for v in p[2]]
    if not rows:
        return sparse.csr_matrix((problem.n_rows, problem.dimension))
    # explicit zeros are kept so the structure always matches the support sets
    J = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(problem.n_rows, problem.dimension),
    )
    return J.tocsr()


def jacobian(problem: Problem, x=None) -> sparse.csr_matrix:
    """Sparse Jacobian of the weighted residual vector with respect to ``x``."""
    return _jacobian_state(problem, *problem.state_at(x))


def _unweighted_rms(problem: Problem, ev: Evaluation) -> tuple[float, float, float]:
    w_e, w_g, w_a = problem.weights
    rms_e = np.sqrt(ev.events / (w_e * w_e * problem.N)) if problem.N else 0.0
    rms_g = np.sqrt(ev.gyro / (w_g * w_g * problem.M)) if problem.M else 0.0
    rms_a = np.sqrt(ev.accel / (w_a * w_a * problem.M)) if problem.M else 0.0
    return float(rms_e), float(rms_g), float(rms_a)


def _observability_check(problem: Problem, H) -> tuple[bool, list[str], dict[str, float], list[str]]:
    names = problem.parameter_names
    warnings = []
    unobservable = []
    rank_deficient = False
    marginals = {}
    if problem.M == 0:
        structural = [n for n in ("scale", "roll", "pitch") if n in names]
        if structural:
            rank_deficient = True
            unobservable += structural
            warnings.append(
                "map " + "/".join(structural) + " is not observable without IMU measurements; "
                "freeze it or add IMU data"
            )
    if H is not None and H.size:
        obs = observability(H, names)
        marginals = obs.marginal_ratios
        if obs.rank_deficient:
            rank_deficient = True
        for name in obs.weak_parameters:
            if name and name not in unobservable:
                unobservable.append(name)
        weak_gravity = [n for n in ("roll", "pitch") if marginals.get(n, 1.0) < GRAVITY_MARGINAL_TOLERANCE]
        if problem.M and weak_gravity:
            warnings.append(
                "gravity direction is poorly constrained (lack of rich rotational motion); "
                "recovered map roll/pitch are unreliable"
            )
        if obs.rank_deficient and not unobservable:
            warnings.append(
                f"normal equations are rank deficient (eigenvalue ratio {obs.eigenvalue_ratio:.3e})"
            )
    for w in warnings:
        logger.warning(w)
    return rank_deficient, unobservable, marginals, warnings


def solve(problem: Problem, config: LMConfig | None = None) -> SolveResult:
    """Minimise F over free control poses and free model parameters."""
    config = config or LMConfig()
    start = time.perf_counter()

    def residual_fn(state):
        return _evaluate_state(problem, *state).residuals

    def jacobian_fn(state):
        return _jacobian_state(problem, *state)

    result: LMResult = levenberg_marquardt(
        problem.initial_state, residual_fn, jacobian_fn, problem.retract, config,
    )
    mats, theta = result.state
    final = _evaluate_state(problem, mats, theta)

    J = _jacobian_state(problem, mats, theta)
    H = (J.T @ J).toarray()
    rank_deficient, unobservable, marginals, warnings = _observability_check(problem, H)
    if final.behind_camera:
        warnings.append(f"{final.behind_camera} events project behind the camera at the solution")
        w_e = problem.weights[0]
        capped = problem.event_dim * final.behind_camera * (w_e * BEHIND_CAMERA_CAP) ** 2
        if final.objective > 0.0 and capped / final.objective > CAPPED_SHARE_WARNING:
            warnings.append(
                f"behind-camera penalties make up {100.0 * min(capped / final.objective, 1.0):.0f}% of the "
                f"objective (F = {final.objective:.3e}); the solve stalled, check the initial trajectory and scale"
            )
            logger.warning(warnings[-1])

    rms_e, rms_g, rms_a = _unweighted_rms(problem, final)
    report = SolveReport(
        initial_objective=result.initial_objective,
        final_objective=final.objective,
        iterations=result.iterations,
        objective_trace=result.objective_trace,
        termination=result.termination,
        rms_event_px=rms_e,
        rms_gyro=rms_g,
        rms_accel=rms_a,
        objective_events=final.events,
        objective_gyro=final.gyro,
        objective_accel=final.accel,
        n_events=problem.N,
        n_imu=problem.M,
        n_control_poses=problem.trajectory.n + 1,
        dropped_events=problem.dropped_events,
        dropped_imu=problem.dropped_imu,
        rejected_steps=result.rejected_steps,
        elapsed_seconds=time.perf_counter() - start,
        jacobian_seconds=result.jacobian_seconds,
        rank_deficient=rank_deficient,
        unobservable=unobservable,
        marginal_ratios=marginals,
        warnings=warnings,
    )
    logger.info(
        "Solve finished: F %.6e -> %.6e in %d iterations (%s), %.2f s",
        report.initial_objective, report.final_objective, report.iterations,
        report.termination, report.elapsed_seconds,
    )
    return SolveResult(problem.trajectory.with_matrices(mats), ModelParams.from_vector(theta), report)
