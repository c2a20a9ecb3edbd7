"""Tests for the stdout run log."""

from pathlib import Path

import numpy as np

from evspline import report
from evspline.config import RuntimeConfig
from evspline.estimator import SolveReport
from evspline.metrics import SUMMARY_HEADER, errors
from evspline.pipeline import DatasetStats
from evspline.sensors import ModelParams
from evspline.trajectory import PoseSamples


def _solve_report(**overrides):
    values = dict(
        initial_objective=10.0, final_objective=0.5, iterations=4, objective_trace=[10.0, 2.0, 0.5],
        termination="function_tolerance", rms_event_px=0.1, rms_gyro=0.03, rms_accel=0.1,
        objective_events=0.3, objective_gyro=0.1, objective_accel=0.1,
        n_events=1000, n_imu=200, n_control_poses=13,
    )
    values.update(overrides)
    return SolveReport(**values)


def test_report_runtime(capsys):
    report.report_runtime(RuntimeConfig(workers=4, log_level="INFO"))
    assert capsys.readouterr().out == "Workers: 4\nLog level: INFO\n"


def test_report_solve(capsys):
    report.report_solve(_solve_report())
    out = capsys.readouterr().out
    assert "Objective: 1.000000e+01 -> 5.000000e-01" in out
    assert "Iterations: 4 (function_tolerance, 0 rejected steps)" in out
    assert "Warning" not in out


def test_report_solve_warnings(capsys):
    report.report_solve(_solve_report(
        rank_deficient=True, unobservable=["scale", "roll"], dropped_events=3,
        warnings=["gravity direction is weakly constrained"],
    ))
    out = capsys.readouterr().out
    assert "unobservable: scale, roll" in out
    assert "Note: 3 events and 0 IMU samples" in out
    assert "Warning: gravity direction is weakly constrained" in out


def test_report_params(capsys):
    report.report_params(ModelParams(scale=1.02), ModelParams(), 2.0, 0.5)
    out = capsys.readouterr().out
    assert "Map scale:  1.020000" in out
    assert "Scale error: 2.000 %" in out
    assert "Gravity direction error: 0.500 deg" in out


def test_report_errors(capsys):
    gt = PoseSamples(np.arange(3) * 0.1, np.tile(np.eye(4), (3, 1, 1)))
    report.report_errors(errors(gt, gt), "spline")
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == SUMMARY_HEADER
    assert lines[1].startswith("spline | ")


def test_report_dataset_without_imu(capsys):
    stats = DatasetStats(
        root=Path("data"), n_events=1300, n_associated=None, n_imu=0, n_primitives=20,
        map_kind="point", duration=1.0, knot_spacing=0.1, n_control_poses=13,
    )
    report.report_dataset(stats)
    out = capsys.readouterr().out
    assert "events / pose:    100.0" in out
    assert "associated:       -" in out
    assert "Warning: dataset has no IMU samples" in out


def test_report_saved(capsys):
    report.report_saved([Path("a.txt"), Path("b.txt")])
    assert capsys.readouterr().out == "Saved: a.txt\nSaved: b.txt\n"
