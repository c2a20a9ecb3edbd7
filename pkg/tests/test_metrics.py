"""Tests for trajectory alignment and error statistics."""

import numpy as np
import pandas as pd
import pytest

from evspline.errors import DegenerateGeometry, EmptyOverlap
from evspline.geometry import rot_x, rot_z, se3_exp, so3_exp
from evspline.metrics import (
    SUMMARY_HEADER,
    Similarity,
    align,
    errors,
    geodesic_error_deg,
    gravity_direction_error,
    match_timestamps,
    mean_scene_depth,
    scale_error,
    summary_row,
    write_errors_csv,
    write_summary,
)
from evspline.sensors import ModelParams, SceneMap
from evspline.trajectory import PoseSamples


def _random_samples(rng, n=50, rate=100.0):
    return PoseSamples(np.arange(n) / rate, se3_exp(rng.normal(0.0, 0.5, size=(n, 6))))


def _known_similarity():
    return Similarity(1.7, so3_exp([0.2, -0.4, 1.1]), np.array([0.5, -1.0, 2.0]))


def test_sim3_alignment_recovers_similarity(rng):
    est = _random_samples(rng)
    truth = _known_similarity()
    gt = truth.apply(est)
    found = align(est, gt, mode="sim3")
    assert found.scale == pytest.approx(truth.scale, rel=1e-10)
    np.testing.assert_allclose(found.rotation, truth.rotation, atol=1e-10)
    np.testing.assert_allclose(found.translation, truth.translation, atol=1e-10)
    summary = errors(found.apply(est), gt)
    assert summary.position.max < 1e-9
    assert summary.orientation.max < 1e-6


def test_se3_alignment_keeps_unit_scale(rng):
    est = _random_samples(rng)
    rigid = Similarity(1.0, so3_exp([0.0, 0.3, -0.2]), np.array([1.0, 2.0, 3.0]))
    found = align(est, rigid.apply(est), mode="SE3")
    assert found.scale == 1.0
    np.testing.assert_allclose(found.rotation, rigid.rotation, atol=1e-10)
    scaled = Similarity(2.0, np.eye(3), np.zeros(3)).apply(est)
    assert align(est, scaled, mode="se3").scale == 1.0


def test_unknown_alignment_mode(rng):
    est = _random_samples(rng)
    with pytest.raises(ValueError):
        align(est, est, mode="affine")


def test_collinear_positions_are_degenerate():
    times = np.arange(10) * 0.01
    mats = np.tile(np.eye(4), (10, 1, 1))
    mats[:, 0, 3] = np.arange(10)
    samples = PoseSamples(times, mats)
    with pytest.raises(DegenerateGeometry):
        align(samples, samples)
    with pytest.raises(DegenerateGeometry):
        align(samples.subset(slice(0, 2)), samples.subset(slice(0, 2)))


def test_match_timestamps():
    gt = np.arange(0.0, 1.0, 0.01)
    est = np.array([0.0004, 0.0051, 0.5, 2.0])
    ie, ig = match_timestamps(est, gt)
    assert ie.tolist() == [0, 1, 2]
    assert ig.tolist() == [0, 1, 50]
    ie, _ = match_timestamps(est, gt, max_dt=1e-5)
    assert ie.tolist() == [2]
    assert len(match_timestamps([], gt)[0]) == 0


def test_errors_with_known_offsets():
    times = np.arange(20) * 0.01
    gt_mats = np.tile(np.eye(4), (20, 1, 1))
    est_mats = gt_mats.copy()
    est_mats[:, 0, 3] += 0.1
    est_mats[:, :3, :3] = rot_z(np.radians(2.0))
    summary = errors(PoseSamples(times, est_mats), PoseSamples(times, gt_mats), mean_scene_depth=2.0)
    assert summary.position.mean == pytest.approx(0.1)
    assert summary.position.std == pytest.approx(0.0, abs=1e-12)
    assert summary.position_relative.mean == pytest.approx(5.0)
    assert summary.orientation.max == pytest.approx(2.0, rel=1e-9)
    assert summary.unmatched == 0


def test_errors_without_overlap(rng):
    est = _random_samples(rng)
    gt = PoseSamples(est.times + 10.0, est.matrices)
    with pytest.raises(EmptyOverlap):
        errors(est, gt)
    with pytest.raises(ValueError):
        errors(est, est, mean_scene_depth=0.0)


def test_mean_scene_depth():
    samples = PoseSamples([0.0, 0.1], np.tile(np.eye(4), (2, 1, 1)))
    points = SceneMap.from_points([0, 1, 2], [[0, 0, 1.0], [0, 0, 2.0], [0, 0, -4.0]])
    assert mean_scene_depth(samples, points) == pytest.approx(1.5)
    assert mean_scene_depth(samples, points, ModelParams(scale=2.0)) == pytest.approx(3.0)
    lines = SceneMap.from_segments([0], [[0, 0, 1.0]], [[0.1, 0, 3.0]])
    assert mean_scene_depth(samples, lines) == pytest.approx(2.0)
    behind = SceneMap.from_points([0], [[0, 0, -1.0]])
    with pytest.raises(EmptyOverlap):
        mean_scene_depth(samples, behind)


def test_scale_and_gravity_errors():
    assert scale_error(1.05, 1.0) == pytest.approx(5.0)
    assert scale_error(0.95, 1.0) == pytest.approx(5.0)
    assert gravity_direction_error((0.1, 0.0), (0.0, 0.0)) == pytest.approx(np.degrees(0.1))
    assert gravity_direction_error((0.2, -0.1), (0.2, -0.1)) == pytest.approx(0.0, abs=1e-5)
    assert geodesic_error_deg(rot_x(0.1), np.eye(3)) == pytest.approx(np.degrees(0.1))


def test_write_errors_csv(tmp_path):
    times = np.arange(3) * 0.1
    gt = PoseSamples(times, np.tile(np.eye(4), (3, 1, 1)))
    est_mats = gt.matrices.copy()
    est_mats[:, 1, 3] = 0.02
    summary = errors(PoseSamples(times, est_mats), gt, mean_scene_depth=0.5)
    frame = pd.read_csv(write_errors_csv(tmp_path / "errors.csv", summary))
    assert list(frame.columns) == ["t", "position_error_m", "position_error_pct", "orientation_error_deg"]
    np.testing.assert_allclose(frame["position_error_pct"], 4.0)


def test_write_summary(tmp_path):
    times = np.arange(3) * 0.1
    gt = PoseSamples(times, np.tile(np.eye(4), (3, 1, 1)))
    summary = errors(gt, gt)
    path = write_summary(tmp_path / "summary.txt", summary, label="spline", extra={"align": "se3"})
    lines = path.read_text().splitlines()
    assert lines[0] == f"# {SUMMARY_HEADER}"
    assert lines[1] == summary_row(summary, "spline")
    assert lines[1].startswith("spline | 0.0000 0.0000 0.0000 | 0.00")
    assert "# align se3" in lines
