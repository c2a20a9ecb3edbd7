"""Cumulative cubic B-spline trajectories on SE(3).

A trajectory is defined by control poses T_0 .. T_n at uniformly spaced times
t_i = t0 + i * dt. For t in [t_i, t_{i+1}) with u = (t - t_i) / dt,

    T(t) = T_{i-1} * exp(b_1(u) W_i) * exp(b_2(u) W_{i+1}) * exp(b_3(u) W_{i+2}),

where W_i = log(T_{i-1}^-1 T_i) is the incremental twist ending at control pose
i and b(u) is the cumulative basis vector. Entries 1..3 of b multiply
W_i, W_{i+1}, W_{i+2}; entry 0 is identically 1. The valid evaluation domain is
[t0 + dt, t0 + (n - 1) * dt).
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import DomainError, InsufficientData, OutOfDomain
from .geometry import Pose, Twist, se3_exp, se3_inverse, se3_log, twist_hat
from .solver import LMConfig, colour_groups, grouped_central_difference, levenberg_marquardt

logger = logging.getLogger(__name__)

BASIS_MATRIX = np.array(
    [
        [6.0, 0.0, 0.0, 0.0],
        [5.0, 3.0, -3.0, 1.0],
        [1.0, 3.0, 3.0, -2.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
) / 6.0


@dataclass(frozen=True, eq=False)
class BasisVector:
    """Cumulative basis b(u) and its first and second time derivatives."""
    b: np.ndarray
    db: np.ndarray
    ddb: np.ndarray


@dataclass(frozen=True, eq=False)
class PoseWithDerivatives:
    T: Pose
    Tdot: np.ndarray
    Tddot: np.ndarray


def basis_arrays(u, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised cumulative basis: three (N, 4) arrays for b, db/dt and d2b/dt2."""
    u = np.asarray(u, dtype=float)
    one, zero = np.ones_like(u), np.zeros_like(u)
    powers = np.stack([one, u, u * u, u * u * u], axis=-1)
    d_powers = np.stack([zero, one, 2.0 * u, 3.0 * u * u], axis=-1) / dt
    dd_powers = np.stack([zero, zero, 2.0 * one, 6.0 * u], axis=-1) / (dt * dt)
    return powers @ BASIS_MATRIX.T, d_powers @ BASIS_MATRIX.T, dd_powers @ BASIS_MATRIX.T


def cumulative_basis(u: float, dt: float) -> BasisVector:
    if not 0.0 <= u < 1.0:
        raise DomainError(f"Spline parameter u={u!r} is outside [0, 1)")
    if dt <= 0.0:
        raise DomainError(f"Knot spacing must be positive, got {dt!r}")
    b, db, ddb = basis_arrays(np.array([u]), dt)
    return BasisVector(b[0], db[0], ddb[0])


def incremental_twists(matrices: np.ndarray) -> np.ndarray:
    """(n + 1, 6) array whose row i is W_i; row 0 is unused and zero."""
    out = np.zeros((len(matrices), 6))
    out[1:] = se3_log(se3_inverse(matrices[:-1]) @ matrices[1:])
    return out


def _factors(twists, seg, b):
    """A_j = exp(b_{j+1} W_{i+j}) for j = 0, 1, 2 as three (N, 4, 4) arrays."""
    return [se3_exp(b[:, j + 1, None] * twists[seg + j]) for j in range(3)]


def spline_poses(matrices, twists, seg, b) -> np.ndarray:
    """Poses for measurements in segments ``seg`` with basis rows ``b``."""
    A0, A1, A2 = _factors(twists, seg, b)
    return matrices[seg - 1] @ A0 @ A1 @ A2


def spline_derivatives(matrices, twists, seg, b, db, ddb):
    """Pose, first and second time derivative, each (N, 4, 4)."""
    A = _factors(twists, seg, b)
    Ad, Add = [], []
    for j in range(3):
        Wh = twist_hat(twists[seg + j])
        AW = A[j] @ Wh
        Ad.append(AW * db[:, j + 1, None, None])
        # A_j commutes with W, so d2/dt2 A_j = A_j (W db)^2 + A_j W ddb
        Add.append(Ad[j] @ Wh * db[:, j + 1, None, None] + AW * ddb[:, j + 1, None, None])
    base = matrices[seg - 1]
    T = base @ A[0] @ A[1] @ A[2]
    Tdot = base @ (Ad[0] @ A[1] @ A[2] + A[0] @ Ad[1] @ A[2] + A[0] @ A[1] @ Ad[2])
    Tddot = base @ (
        Add[0] @ A[1] @ A[2]
        + A[0] @ Add[1] @ A[2]
        + A[0] @ A[1] @ Add[2]
        + 2.0 * Ad[0] @ Ad[1] @ A[2]
        + 2.0 * Ad[0] @ A[1] @ Ad[2]
        + 2.0 * A[0] @ Ad[1] @ Ad[2]
    )
    return T, Tdot, Tddot


@dataclass(frozen=True, eq=False)
class SplineTrajectory:
    """Uniform cumulative cubic B-spline; immutable once built."""
    t0: float
    dt: float
    control_poses: tuple[Pose, ...]

    def __post_init__(self):
        object.__setattr__(self, "control_poses", tuple(self.control_poses))
        if not self.dt > 0.0:
            raise ValueError(f"Knot spacing dt must be positive, got {self.dt!r}")
        if len(self.control_poses) < 4:
            raise ValueError(
                f"A cubic spline needs at least 4 control poses, got {len(self.control_poses)}"
            )

    @classmethod
    def from_matrices(cls, t0: float, dt: float, matrices) -> "SplineTrajectory":
        return cls(float(t0), float(dt), tuple(Pose.from_matrix(m) for m in np.asarray(matrices)))

    @property
    def n(self) -> int:
        """Index of the last control pose."""
        return len(self.control_poses) - 1

    @cached_property
    def matrices(self) -> np.ndarray:
        return np.stack([p.matrix for p in self.control_poses])

    @cached_property
    def twists(self) -> np.ndarray:
        return incremental_twists(self.matrices)

    @property
    def knot_times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n + 1)

    @property
    def domain(self) -> tuple[float, float]:
        return self.t0 + self.dt, self.t0 + (self.n - 1) * self.dt

    def with_matrices(self, matrices) -> "SplineTrajectory":
        return SplineTrajectory.from_matrices(self.t0, self.dt, matrices)

    def in_domain(self, times) -> np.ndarray:
        s = (np.asarray(times, dtype=float) - self.t0) / self.dt
        i = np.floor(s)
        return (i >= 1) & (i <= self.n - 2)

    def locate(self, times) -> tuple[np.ndarray, np.ndarray]:
        """Segment index i and parameter u for each time; raises OutOfDomain."""
        times = np.asarray(times, dtype=float)
        s = (times - self.t0) / self.dt
        i = np.floor(s)
        bad = ~((i >= 1) & (i <= self.n - 2))
        if np.any(bad):
            raise OutOfDomain(float(times[np.flatnonzero(bad)[0]]), self.domain)
        u = np.clip(s - i, 0.0, np.nextafter(1.0, 0.0))
        return i.astype(int), u

    def sample(self, times) -> np.ndarray:
        """Poses at the given times as an (N, 4, 4) array."""
        seg, u = self.locate(times)
        b, _, _ = basis_arrays(u, self.dt)
        return spline_poses(self.matrices, self.twists, seg, b)

    def sample_derivatives(self, times):
        seg, u = self.locate(times)
        b, db, ddb = basis_arrays(u, self.dt)
        return spline_derivatives(self.matrices, self.twists, seg, b, db, ddb)


def segment_of(traj: SplineTrajectory, t: float) -> tuple[int, float]:
    seg, u = traj.locate(np.array([t]))
    return int(seg[0]), float(u[0])


def incremental_twist(traj: SplineTrajectory, i: int) -> Twist:
    if not 1 <= i <= traj.n:
        raise IndexError(f"Incremental twist index {i} outside [1, {traj.n}]")
    return Twist.from_vector(traj.twists[i])


def pose_at(traj: SplineTrajectory, t: float) -> Pose:
    return Pose.from_matrix(traj.sample(np.array([t]))[0])


def derivatives_at(traj: SplineTrajectory, t: float) -> PoseWithDerivatives:
    T, Td, Tdd = traj.sample_derivatives(np.array([t]))
    assert np.allclose(Td[0, 3], 0.0) and np.allclose(Tdd[0, 3], 0.0)
    return PoseWithDerivatives(Pose.from_matrix(T[0]), Td[0], Tdd[0])


@dataclass(frozen=True, eq=False)
class PoseSamples:
    """Timestamped poses, e.g. ground truth or tracker output."""
    times: np.ndarray
    matrices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float).reshape(-1))
        object.__setattr__(self, "matrices", np.asarray(self.matrices, dtype=float).reshape(-1, 4, 4))
        if len(self.times) != len(self.matrices):
            raise ValueError("times and matrices must have the same length")

    @classmethod
    def from_poses(cls, samples) -> "PoseSamples":
        samples = list(samples)
        if not samples:
            return cls(np.zeros(0), np.zeros((0, 4, 4)))
        return cls(np.array([t for t, _ in samples]), np.stack([p.matrix for _, p in samples]))

    @classmethod
    def from_trajectory(cls, traj: SplineTrajectory, rate: float) -> "PoseSamples":
        start, end = traj.domain
        times = start + np.arange(int(np.ceil((end - start) * rate))) / rate
        times = times[times < end]
        return cls(times, traj.sample(times))

    def __len__(self) -> int:
        return len(self.times)

    def pose(self, k: int) -> Pose:
        return Pose.from_matrix(self.matrices[k])

    def subset(self, mask) -> "PoseSamples":
        return PoseSamples(self.times[mask], self.matrices[mask])


@dataclass(frozen=True, eq=False)
class SplineFit:
    trajectory: SplineTrajectory
    rms: float
    iterations: int
    dropped_samples: int


def _retract_poses(matrices, delta, free):
    out = matrices.copy()
    out[free] = matrices[free] @ se3_exp(delta.reshape(-1, 6))
    return out


def fit_spline(
    samples: PoseSamples,
    dt: float,
    t0: float,
    n: int,
    config: LMConfig | None = None,
) -> SplineFit:
    """Fit control poses so the spline passes through timestamped poses.

    Minimises the sum over samples of ||log(T(t_s)^-1 T_s)||^2 by
    Levenberg-Marquardt on local twist increments, starting from the sample
    nearest each knot.
    """
    if n < 3:
        raise InsufficientData(f"A cubic spline needs at least 4 control poses, got n={n}")
    if len(samples) == 0:
        raise InsufficientData("No samples to fit")

    knots = t0 + dt * np.arange(n + 1)
    nearest = np.abs(samples.times[None, :] - knots[:, None]).argmin(axis=1)
    init = SplineTrajectory.from_matrices(t0, dt, samples.matrices[nearest])

    inside = init.in_domain(samples.times)
    used = samples.subset(inside)
    dropped = int(len(samples) - len(used))
    if dropped:
        logger.info("fit_spline: %d samples outside [%.6f, %.6f) ignored", dropped, *init.domain)
    if len(used) == 0:
        raise InsufficientData("No sample lies inside the spline domain")

    seg, u = init.locate(used.times)
    b, _, _ = basis_arrays(u, dt)
    per_segment = np.bincount(seg, minlength=n + 1)
    for k in range(n + 1):
        lo, hi = max(1, k - 2), min(n - 2, k + 1)
        if per_segment[lo:hi + 1].sum() == 0:
            raise InsufficientData(
                f"Control pose {k} (t={knots[k]:.6f} s) has no sample in its support "
                f"[{init.t0 + lo * dt:.6f}, {init.t0 + (hi + 1) * dt:.6f})"
            )
    targets = used.matrices
    n_poses = n + 1
    all_poses = np.arange(n_poses)

    def residuals(mats):
        poses = spline_poses(mats, incremental_twists(mats), seg, b)
        return se3_log(se3_inverse(poses) @ targets).ravel()

    def jacobian(mats):
        rows, cols, vals = [], [], []
        for group in colour_groups(n_poses):
            for j in range(6):
                diff = grouped_central_difference(residuals, retract, mats, group, j, n_poses).reshape(-1, 6)
                # each sample row depends on exactly one pose of this group
                owner = support_owner(group, seg)
                sample_idx = np.flatnonzero(owner >= 0)
                for c in range(6):
                    rows.append(sample_idx * 6 + c)
                    cols.append(owner[sample_idx] * 6 + j)
                    vals.append(diff[sample_idx, c])
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(6 * len(used), 6 * n_poses),
        )

    def retract(mats, delta):
        return _retract_poses(mats, delta, all_poses)

    config = config or LMConfig(
        max_iterations=100, function_tolerance=1e-14, gradient_tolerance=1e-14,
        min_objective=1e-26,
    )
    result = levenberg_marquardt(init.matrices, residuals, jacobian, retract, config)
    rms = float(np.sqrt(result.final_objective / len(used)))
    logger.info(
        "fit_spline: %d control poses, %d samples, rms %.3e after %d iterations (%s)",
        n_poses, len(used), rms, result.iterations, result.termination,
    )
    return SplineFit(init.with_matrices(result.state), rms, result.iterations, dropped)


def support_owner(group: np.ndarray, seg: np.ndarray) -> np.ndarray:
    """For each segment, the pose of ``group`` among seg-1 .. seg+2, or -1."""
    owner = np.full(len(seg), -1, dtype=int)
    member = np.zeros(int(max(group.max(), seg.max() + 2)) + 1, dtype=bool)
    member[group] = True
    for offset in range(-1, 3):
        k = seg + offset
        hit = (owner < 0) & member[k]
        owner[hit] = k[hit]
    return owner
