"""Trajectory alignment and absolute error statistics."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DegenerateGeometry, EmptyOverlap
from .geometry import rotation_angle
from .sensors import ModelParams, SceneMap, camera_points, map_to_world
from .trajectory import PoseSamples

logger = logging.getLogger(__name__)

ALIGN_MODES = ("se3", "sim3")
COLLINEAR_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class Similarity:
    """x -> scale * R x + t."""
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "Similarity":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, samples: PoseSamples) -> PoseSamples:
        mats = samples.matrices.copy()
        mats[:, :3, :3] = self.rotation @ samples.matrices[:, :3, :3]
        mats[:, :3, 3] = self.scale * samples.matrices[:, :3, 3] @ self.rotation.T + self.translation
        return PoseSamples(samples.times, mats)


def match_timestamps(est_times, gt_times, max_dt: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (est, gt) matched by nearest timestamp within ``max_dt``.

    ``max_dt`` defaults to half the median ground-truth sample period.
    """
    est_times = np.asarray(est_times, dtype=float)
    gt_times = np.asarray(gt_times, dtype=float)
    if len(est_times) == 0 or len(gt_times) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    if max_dt is None:
        max_dt = 0.5 * float(np.median(np.diff(gt_times))) if len(gt_times) > 1 else np.inf
    if len(gt_times) == 1:
        pos = np.zeros(len(est_times), dtype=int)
    else:
        right = np.searchsorted(gt_times, est_times).clip(1, len(gt_times) - 1)
        left = right - 1
        closer_left = np.abs(gt_times[left] - est_times) <= np.abs(gt_times[right] - est_times)
        pos = np.where(closer_left, left, right)
    ok = np.abs(gt_times[pos] - est_times) <= max_dt
    return np.flatnonzero(ok), pos[ok]


def align_umeyama(model: np.ndarray, data: np.ndarray, with_scale: bool = True):
    """Least-squares (s, R, t) with model ~= s * R @ data + t for (N, 3) point sets."""
    mu_m, mu_d = model.mean(axis=0), data.mean(axis=0)
    m0, d0 = model - mu_m, data - mu_d
    C = m0.T @ d0 / len(model)
    sigma2 = float(np.sum(d0 * d0)) / len(model)
    U, D, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0.0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / sigma2) if with_scale else 1.0
    t = mu_m - s * R @ mu_d
    return s, R, t


def _check_geometry(points: np.ndarray):
    if len(points) < 3:
        raise DegenerateGeometry(f"Alignment needs at least 3 matched positions, got {len(points)}")
    sv = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if sv[0] <= 0.0 or sv[1] <= COLLINEAR_TOLERANCE * max(1.0, sv[0]):
        raise DegenerateGeometry("Matched positions are collinear or coincident")


def align(est: PoseSamples, gt: PoseSamples, mode: str = "sim3", max_dt: float | None = None) -> Similarity:
    """Similarity (Sim3) or rigid (SE3) transform taking est positions onto gt."""
    mode = mode.lower()
    if mode not in ALIGN_MODES:
        raise ValueError(f"Unknown alignment mode {mode!r}; expected one of {ALIGN_MODES}")
    ie, ig = match_timestamps(est.times, gt.times, max_dt)
    data = est.matrices[ie, :3, 3]
    model = gt.matrices[ig, :3, 3]
    _check_geometry(data)
    _check_geometry(model)
    s, R, t = align_umeyama(model, data, with_scale=mode == "sim3")
    logger.info("%s alignment over %d matched poses: scale %.6f", mode, len(ie), s)
    return Similarity(s, R, t)


@dataclass(frozen=True)
class Stats:
    mean: float
    std: float
    max: float

    @classmethod
    def of(cls, values) -> "Stats":
        values = np.asarray(values, dtype=float)
        return cls(float(values.mean()), float(values.std()), float(values.max()))


@dataclass(frozen=True, eq=False)
class ErrorSummary:
    position: Stats  # m
    position_relative: Stats  # % of mean scene depth
    orientation: Stats  # degrees
    times: np.ndarray
    position_errors: np.ndarray
    orientation_errors: np.ndarray  # degrees
    mean_scene_depth: float
    unmatched: int = 0


def errors(est_aligned: PoseSamples, gt: PoseSamples, mean_scene_depth: float = 1.0,
           max_dt: float | None = None) -> ErrorSummary:
    """Per-sample Euclidean position and geodesic orientation errors."""
    if not mean_scene_depth > 0.0:
        raise ValueError(f"Mean scene depth must be positive, got {mean_scene_depth!r}")
    ie, ig = match_timestamps(est_aligned.times, gt.times, max_dt)
    if len(ie) == 0:
        raise EmptyOverlap("No estimated pose could be matched to a ground-truth timestamp")
    E, G = est_aligned.matrices[ie], gt.matrices[ig]
    pos = np.linalg.norm(E[:, :3, 3] - G[:, :3, 3], axis=1)
    rel = np.swapaxes(G[:, :3, :3], 1, 2) @ E[:, :3, :3]
    ori = np.degrees(rotation_angle(rel))
    unmatched = len(est_aligned) - len(ie)
    if unmatched:
        logger.info("%d estimated poses had no ground-truth match", unmatched)
    return ErrorSummary(
        position=Stats.of(pos),
        position_relative=Stats.of(100.0 * pos / mean_scene_depth),
        orientation=Stats.of(ori),
        times=est_aligned.times[ie],
        position_errors=pos,
        orientation_errors=ori,
        mean_scene_depth=float(mean_scene_depth),
        unmatched=unmatched,
    )


def geodesic_error_deg(R_a, R_b) -> float:
    """Angle of R_a^T R_b in degrees."""
    return float(np.degrees(rotation_angle(np.asarray(R_a).T @ np.asarray(R_b))))


def mean_scene_depth(samples: PoseSamples, scene_map: SceneMap, params: ModelParams | None = None) -> float:
    """Mean camera-frame depth of the map vertices in front of the camera."""
    params = params or ModelParams()
    world = map_to_world(scene_map.vertices, params.scale, params.rotation)
    R, t = samples.matrices[:, :3, :3], samples.matrices[:, :3, 3]
    depth = np.stack([camera_points(R, t, X)[:, 2] for X in world], axis=1)
    front = depth > 0.0
    if not np.any(front):
        raise EmptyOverlap("No map vertex lies in front of the camera")
    return float(depth[front].mean())


def scale_error(s_est: float, s_true: float) -> float:
    """Relative scale error in percent."""
    return 100.0 * abs(s_est - s_true) / s_true


def gravity_direction_error(o_est, o_true) -> float:
    """Angle in degrees between the map-frame gravity directions of two map orientations."""
    def up(o):
        return ModelParams(orientation=tuple(o)).rotation.T @ np.array([0.0, 0.0, 1.0])
    a, b = up(o_est), up(o_true)
    return float(np.degrees(np.arccos(np.clip(a @ b, -1.0, 1.0))))


def write_errors_csv(path, summary: ErrorSummary) -> Path:
    path = Path(path)
    pd.DataFrame({
        "t": summary.times,
        "position_error_m": summary.position_errors,
        "position_error_pct": 100.0 * summary.position_errors / summary.mean_scene_depth,
        "orientation_error_deg": summary.orientation_errors,
    }).to_csv(path, index=False, float_format="%.12g")
    return path


SUMMARY_HEADER = (
    "label | pos_mean_m pos_std_m pos_max_m | pos_mean_pct pos_std_pct pos_max_pct "
    "| ori_mean_deg ori_std_deg ori_max_deg"
)


def summary_row(summary: ErrorSummary, label: str = "estimate") -> str:
    p, r, o = summary.position, summary.position_relative, summary.orientation
    return (
        f"{label} | {p.mean:.4f} {p.std:.4f} {p.max:.4f} "
        f"| {r.mean:.2f} {r.std:.2f} {r.max:.2f} "
        f"| {o.mean:.2f} {o.std:.2f} {o.max:.2f}"
    )


def write_summary(path, summary: ErrorSummary, label: str = "estimate", extra: dict | None = None) -> Path:
    path = Path(path)
    lines = [f"# {SUMMARY_HEADER}", summary_row(summary, label)]
    lines.append(f"# mean_scene_depth_m {summary.mean_scene_depth:.6g}")
    for key, value in (extra or {}).items():
        lines.append(f"# {key} {value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
