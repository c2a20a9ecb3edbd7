"""Tests for problem assembly, the objective, its Jacobian and the solve."""

import numpy as np
import pytest

from conftest import random_trajectory, small_sim_config
from evspline.errors import DomainMismatch, EmptyProblem
from evspline.estimator import (
    BEHIND_CAMERA_CAP,
    Association,
    Associations,
    FreezeFlags,
    NoiseConfig,
    SolveReport,
    build_problem,
    evaluate,
    jacobian,
    solve,
)
from evspline.geometry import Pose, pose_distance, se3_exp
from evspline.sensors import (
    EventStream,
    ImuStream,
    ModelParams,
    SceneMap,
    camera_points,
    corrected_projection,
    line_residual,
    pinhole,
    point_residual,
    predict_imu,
)
from evspline.simulator import SimConfig, TrajectorySpec, simulate
from evspline.solver import LMConfig, LMResult
from evspline.trajectory import SplineTrajectory, derivatives_at, pose_at


def _toy_problem(rng, K, kind="point", n_events=50, n_imu=20, **kwargs):
    traj = random_trajectory(rng, n_poses=6, spread=0.05)
    start, end = traj.domain
    n_prim = 10 if kind == "point" else 4
    centres = np.c_[rng.uniform(-0.2, 0.2, (n_prim, 2)), rng.uniform(0.9, 1.1, n_prim)]
    if kind == "point":
        scene = SceneMap.from_points(np.arange(n_prim), centres)
        anchors = centres
    else:
        direction = np.c_[rng.normal(size=(n_prim, 2)), np.zeros(n_prim)]
        direction *= 0.1 / np.linalg.norm(direction, axis=1, keepdims=True)
        scene = SceneMap.from_segments(np.arange(n_prim), centres - direction, centres + direction)
        anchors = centres
    times = np.sort(rng.uniform(start, end, n_events))
    prim = rng.integers(0, n_prim, n_events)
    T = traj.sample(times)
    pix = pinhole(K, camera_points(T[:, :3, :3], T[:, :3, 3], anchors[prim]))
    pix += rng.normal(0.0, 0.5, pix.shape)
    events = EventStream(times, pix[:, 0], pix[:, 1], np.ones(n_events))
    associations = Associations(np.arange(n_events), prim, kind)
    imu = ImuStream(
        np.sort(rng.uniform(start, end, n_imu)),
        rng.normal(0.0, 0.1, (n_imu, 3)),
        np.array([0.0, 0.0, 9.81]) + rng.normal(0.0, 0.1, (n_imu, 3)),
    )
    params = ModelParams([0.01, -0.02, 0.005], [0.05, 0.0, -0.03], 1.05, (0.02, -0.01))
    return build_problem(events, associations, imu, scene, K, traj, params, **kwargs)


def _identity_trajectory():
    return SplineTrajectory(0.0, 0.1, [Pose.identity()] * 5)


def _problem_from_sim(sim, **kwargs):
    return build_problem(
        sim.events, sim.associations, sim.imu, sim.scene_map, sim.intrinsics,
        sim.trajectory, sim.params, **kwargs,
    )


def test_objective_vanishes_at_ground_truth(small_sim):
    problem = _problem_from_sim(small_sim)
    assert problem.N == len(small_sim.events)
    assert problem.M == len(small_sim.imu)
    assert evaluate(problem).objective < 1e-12


def test_single_event_objective(intrinsics):
    scene = SceneMap.from_points([0], [[0.0, 0.0, 1.0]])
    events = EventStream([0.15], [120.1], [90.0], [1])
    problem = build_problem(
        events, Associations([0], [0], "point"), None, scene, intrinsics, _identity_trajectory(),
        noise=NoiseConfig(sigma_e=0.1),
    )
    result = evaluate(problem)
    assert result.objective == pytest.approx(1.0, rel=1e-9)
    np.testing.assert_allclose(result.residuals, [1.0, 0.0], atol=1e-9)


def test_single_gyro_objective(intrinsics):
    scene = SceneMap.from_points([0], [[0.0, 0.0, 1.0]])
    imu = ImuStream([0.15], [[0.03, 0.0, 0.0]], [[0.0, 0.0, 9.81]])
    problem = build_problem(
        EventStream.empty(), Associations([], [], "point"), imu, scene, intrinsics,
        _identity_trajectory(), noise=NoiseConfig(sigma_omega=0.03),
    )
    result = evaluate(problem)
    assert result.gyro == pytest.approx(1.0, rel=1e-12)
    assert result.accel == pytest.approx(0.0, abs=1e-20)
    assert result.objective == pytest.approx(1.0, rel=1e-12)
    # without events the map parameters have nothing to act on
    assert "scale" not in problem.parameter_names


def test_event_noise_scales_event_term(intrinsics):
    a = _toy_problem(np.random.default_rng(3), intrinsics, noise=NoiseConfig(sigma_e=0.1))
    b = _toy_problem(np.random.default_rng(3), intrinsics, noise=NoiseConfig(sigma_e=0.2))
    ea, eb = evaluate(a), evaluate(b)
    assert ea.events == pytest.approx(4.0 * eb.events, rel=1e-12)
    assert ea.gyro == pytest.approx(eb.gyro, rel=1e-12)


@pytest.mark.parametrize("kind", ["point", "line"])
def test_objective_decomposition(rng, intrinsics, kind):
    result = evaluate(_toy_problem(rng, intrinsics, kind=kind))
    assert result.objective == pytest.approx(result.events + result.gyro + result.accel, rel=1e-14)
    assert result.objective == pytest.approx(result.residuals @ result.residuals, rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("kind", ["point", "line"])
def test_objective_matches_per_measurement_loop(intrinsics, kind, seed):
    problem = _toy_problem(np.random.default_rng(100 + seed), intrinsics, kind=kind)
    traj, params, noise = problem.trajectory, problem.params, problem.noise
    scene = problem.scene_map
    F_events = 0.0
    for k in range(problem.N):
        event = problem.events[k]
        projection = corrected_projection(pose_at(traj, event.t), intrinsics, params)
        row = problem.primitive_index[k]
        if kind == "point":
            r = point_residual(event, scene.points[row], projection)
            F_events += float(r @ r)
        else:
            segment = (scene.segment_starts[row], scene.segment_ends[row])
            F_events += line_residual(event, segment, projection) ** 2
    F_gyro = F_accel = 0.0
    for m in range(problem.M):
        sample = problem.imu[m]
        omega, accel = predict_imu(derivatives_at(traj, sample.t), params)
        F_gyro += float(np.sum((sample.omega - omega) ** 2))
        F_accel += float(np.sum((sample.accel - accel) ** 2))
    expected = (
        F_events / (problem.N * noise.sigma_e ** 2)
        + F_gyro / (problem.M * noise.sigma_omega ** 2)
        + F_accel / (problem.M * noise.sigma_a ** 2)
    )
    assert evaluate(problem).objective == pytest.approx(expected, rel=1e-12)


def test_frozen_parameters_have_no_columns(rng, intrinsics):
    problem = _toy_problem(rng, intrinsics, freeze=FreezeFlags(scale=True, first_pose=True))
    names = problem.parameter_names
    assert "scale" not in names
    assert [n for n in names if n] == [
        "gyro_bias_x", "gyro_bias_y", "gyro_bias_z",
        "accel_bias_x", "accel_bias_y", "accel_bias_z", "roll", "pitch",
    ]
    assert problem.dimension == 6 * 5 + 8
    assert jacobian(problem).shape == (problem.n_rows, problem.dimension)


def test_first_pose_freezing_defaults(small_sim):
    with_imu = _problem_from_sim(small_sim)
    assert with_imu.free_poses[0] == 0
    frozen_map = _problem_from_sim(small_sim, freeze=FreezeFlags(scale=True, orientation=True))
    visual_only = build_problem(
        small_sim.events, small_sim.associations, None, small_sim.scene_map,
        small_sim.intrinsics, small_sim.trajectory,
    )
    assert frozen_map.free_poses[0] == 0
    assert visual_only.free_poses[0] == 1
    assert visual_only.free_theta[:6].sum() == 0


def test_retract_rejects_wrong_shape(rng, intrinsics):
    problem = _toy_problem(rng, intrinsics)
    with pytest.raises(ValueError):
        problem.retract(problem.initial_state, np.zeros(problem.dimension + 1))


@pytest.mark.parametrize("kind", ["point", "line"])
def test_jacobian_matches_dense_finite_differences(rng, intrinsics, kind):
    problem = _toy_problem(rng, intrinsics, kind=kind)
    J = jacobian(problem).toarray()
    h = 1e-6
    dense = np.zeros_like(J)
    for col in range(problem.dimension):
        step = np.zeros(problem.dimension)
        step[col] = h
        dense[:, col] = (evaluate(problem, step).residuals - evaluate(problem, -step).residuals) / (2 * h)
    np.testing.assert_allclose(J, dense, rtol=1e-7, atol=1e-6)


def test_jacobian_sparsity_follows_spline_support(rng, intrinsics):
    problem = _toy_problem(rng, intrinsics)
    J = jacobian(problem)
    theta_base = 6 * len(problem.free_poses)
    names = [n for n in problem.parameter_names if n]
    map_cols = {theta_base + names.index(n) for n in ("scale", "roll", "pitch")}
    gyro_cols = {theta_base + names.index(n) for n in ("gyro_bias_x", "gyro_bias_y", "gyro_bias_z")}
    accel_cols = {theta_base + names.index(n) for n in ("accel_bias_x", "accel_bias_y", "accel_bias_z")}

    def pose_cols(seg):
        cols = set()
        for p in range(seg - 1, seg + 3):
            if problem.pose_column[p] >= 0:
                cols.update(range(problem.pose_column[p], problem.pose_column[p] + 6))
        return cols

    for k in range(problem.N):
        for c in range(2):
            row = J[2 * k + c]
            assert set(row.indices) == pose_cols(problem.event_seg[k]) | map_cols
    base = problem.n_event_rows
    for m in range(problem.M):
        for c in range(3):
            gyro = J[base + 3 * m + c]
            accel = J[base + 3 * problem.M + 3 * m + c]
            assert set(gyro.indices) == pose_cols(problem.imu_seg[m]) | gyro_cols
            assert set(accel.indices) == pose_cols(problem.imu_seg[m]) | accel_cols


def test_parallel_jacobian_matches_serial(intrinsics):
    serial = _toy_problem(np.random.default_rng(11), intrinsics)
    parallel = _toy_problem(np.random.default_rng(11), intrinsics, workers=4)
    assert (jacobian(serial) != jacobian(parallel)).nnz == 0


def test_control_pose_only_affects_its_support(small_sim):
    problem = _problem_from_sim(small_sim, freeze=FreezeFlags(first_pose=False))
    x = np.zeros(problem.dimension)
    x[:6] = [0.01, -0.01, 0.02, 0.01, 0.0, -0.02]
    before, after = evaluate(problem).residuals, evaluate(problem, x).residuals
    far = np.flatnonzero(problem.event_seg >= 2)
    rows = np.concatenate([2 * far, 2 * far + 1])
    np.testing.assert_array_equal(after[rows], before[rows])
    near = np.flatnonzero(problem.event_seg == 1)
    assert np.any(after[2 * near] != before[2 * near])


def test_build_problem_validation(small_sim):
    sim = small_sim
    args = (sim.events, sim.associations, sim.imu, sim.scene_map, sim.intrinsics, sim.trajectory)
    with pytest.raises(ValueError, match="line"):
        build_problem(sim.events, Associations([0], [0], "line"), *args[2:])
    with pytest.raises(ValueError, match="outside the event stream"):
        build_problem(sim.events, Associations([len(sim.events)], [0], "point"), *args[2:])
    with pytest.raises(ValueError, match="at most one"):
        build_problem(sim.events, Associations([0, 0], [0, 1], "point"), *args[2:])
    with pytest.raises(ValueError, match="missing primitive"):
        build_problem(sim.events, Associations([0], [999], "point"), *args[2:])


def test_out_of_domain_measurements(small_sim):
    sim = small_sim
    short = SplineTrajectory.from_matrices(
        sim.trajectory.t0, sim.trajectory.dt, sim.trajectory.matrices[:8],
    )
    problem = build_problem(
        sim.events, sim.associations, sim.imu, sim.scene_map, sim.intrinsics, short,
    )
    assert problem.dropped_events == int(np.sum(~short.in_domain(sim.events.t)))
    assert problem.dropped_imu == int(np.sum(~short.in_domain(sim.imu.t)))
    assert problem.dropped_imu > 0
    assert problem.N + problem.dropped_events == len(sim.events)
    with pytest.raises(DomainMismatch) as info:
        build_problem(
            sim.events, sim.associations, sim.imu, sim.scene_map, sim.intrinsics, short,
            strict=True,
        )
    assert len(info.value.dropped_imu) == problem.dropped_imu


def test_empty_problem(intrinsics):
    scene = SceneMap.from_points([0], [[0.0, 0.0, 1.0]])
    events = EventStream([5.0], [120.0], [90.0], [1])
    with pytest.raises(EmptyProblem):
        build_problem(
            events, Associations([0], [0], "point"), None, scene, intrinsics, _identity_trajectory(),
        )


def test_unassociated_events_are_ignored(small_sim):
    sim = small_sim
    keep = np.arange(0, len(sim.events), 2)
    partial = Associations(keep, sim.associations.primitive_id[keep], "point")
    problem = build_problem(
        sim.events, partial, sim.imu, sim.scene_map, sim.intrinsics, sim.trajectory,
    )
    assert problem.N == len(keep)
    np.testing.assert_array_equal(problem.event_ids, keep)


def test_freeze_flags_from_names():
    flags = FreezeFlags.from_names(["biases", "Scale", "first_pose"])
    assert flags.gyro_bias and flags.accel_bias and flags.scale and flags.first_pose
    assert not flags.orientation
    assert FreezeFlags.from_names(["theta"]).theta_mask().sum() == 0
    assert FreezeFlags.from_names(["gyro-bias"]).theta_mask().tolist() == [False] * 3 + [True] * 6
    with pytest.raises(ValueError):
        FreezeFlags.from_names(["velocity"])


def test_noise_config_must_be_positive():
    with pytest.raises(ValueError):
        NoiseConfig(sigma_e=0.0)


def test_associations_from_records():
    records = [Association(0, 3, "line"), Association(2, 1, "line")]
    assoc = Associations.from_records(records)
    assert assoc.kind == "line"
    assert assoc[1] == records[1]
    with pytest.raises(ValueError):
        Associations.from_records([Association(0, 3, "line"), Association(1, 3, "point")])


def test_solve_at_ground_truth_stops_immediately(small_sim):
    result = solve(_problem_from_sim(small_sim))
    assert result.report.iterations <= 1
    assert result.report.final_objective < 1e-12
    assert not result.report.rank_deficient
    for got, want in zip(result.trajectory.control_poses, small_sim.trajectory.control_poses):
        assert pose_distance(got, want) < 1e-9


def test_solve_recovers_perturbed_trajectory(small_sim):
    sim = small_sim
    rng = np.random.default_rng(21)
    xi = np.c_[rng.normal(0.0, 1e-3, (len(sim.trajectory.matrices), 3)),
               rng.normal(0.0, np.radians(0.5), (len(sim.trajectory.matrices), 3))]
    start = sim.trajectory.with_matrices(sim.trajectory.matrices @ se3_exp(xi))
    problem = build_problem(
        sim.events, sim.associations, sim.imu, sim.scene_map, sim.intrinsics, start, sim.params,
    )
    result = solve(problem, LMConfig(max_iterations=30, function_tolerance=1e-10))
    report = result.report
    assert report.final_objective < 1e-6 * report.initial_objective
    assert report.objective_trace[-1] == pytest.approx(report.final_objective, rel=1e-9)
    # interior poses are fully constrained by the measurements
    for got, want in list(zip(result.trajectory.control_poses, sim.trajectory.control_poses))[2:-2]:
        assert pose_distance(got, want) < 1e-4
    assert result.params.scale == pytest.approx(1.0, abs=1e-4)


def test_visual_only_free_scale_is_reported(small_sim):
    sim = small_sim
    problem = build_problem(
        sim.events, sim.associations, None, sim.scene_map, sim.intrinsics, sim.trajectory,
    )
    report = solve(problem, LMConfig(max_iterations=2)).report
    assert report.rank_deficient
    assert "scale" in report.unobservable
    assert any("not observable without IMU" in w for w in report.warnings)


def test_translation_only_motion_warns_about_gravity():
    spec = TrajectorySpec(duration=1.0, dt=0.1, amplitude=(0.15, 0.1, 0.05, 0.0, 0.0, 0.0))
    sim = simulate(small_sim_config(trajectory=spec))
    report = solve(_problem_from_sim(sim), LMConfig(max_iterations=2)).report
    assert any("gravity direction" in w for w in report.warnings)
    assert report.marginal_ratios["roll"] < 1e-6


def test_report_lines():
    report = SolveReport(
        initial_objective=2.0, final_objective=1.0, iterations=3, objective_trace=[2.0, 1.5, 1.0],
        termination="function_tolerance", rms_event_px=0.1, rms_gyro=0.03, rms_accel=0.1,
        objective_events=0.5, objective_gyro=0.25, objective_accel=0.25, n_events=10, n_imu=5,
        n_control_poses=13, unobservable=["scale"], marginal_ratios={"scale": 1e-9},
        warnings=["something"],
    )
    lines = report.lines()
    assert "final_objective 1" in lines
    assert "unobservable scale" in lines
    assert "objective_trace 2 1.5 1" in lines
    assert "warning something" in lines
    assert "marginal_ratio_scale 1e-09" in lines


def _sim_with(noise=False, duration=2.0, **params):
    spec = TrajectorySpec(duration=duration, dt=0.1)
    return simulate(small_sim_config(noise=noise, trajectory=spec, params=ModelParams(**params)))


def _solve_from_truth(sim, initial: ModelParams, max_iterations=100):
    problem = build_problem(
        sim.events, sim.associations, sim.imu, sim.scene_map, sim.intrinsics, sim.trajectory, initial,
    )
    return solve(problem, LMConfig(max_iterations=max_iterations, function_tolerance=1e-10))


def test_retract_keeps_scale_positive(small_sim):
    problem = build_problem(
        small_sim.events, small_sim.associations, small_sim.imu, small_sim.scene_map,
        small_sim.intrinsics, small_sim.trajectory, ModelParams(scale=0.5),
    )
    column = problem.parameter_names.index("scale")
    delta = np.zeros(problem.dimension)
    delta[column] = -40.0
    _, theta = problem.retract(problem.initial_state, delta)
    assert theta[6] == pytest.approx(0.5 * np.exp(-40.0), rel=1e-12)
    delta[column] = np.log(4.0)
    _, theta = problem.retract(problem.initial_state, delta)
    assert theta[6] == pytest.approx(2.0, rel=1e-12)
    assert ModelParams.from_vector(theta).scale == pytest.approx(2.0)


def test_behind_camera_penalty_pulls_scale_up(small_sim):
    """A shrunk map puts events behind the camera; their residuals still carry a gradient."""
    problem = build_problem(
        small_sim.events, small_sim.associations, small_sim.imu, small_sim.scene_map,
        small_sim.intrinsics, small_sim.trajectory, ModelParams(scale=0.01),
    )
    result = evaluate(problem)
    assert result.behind_camera > 0
    w_e = problem.weights[0]
    r = result.residuals[:problem.n_event_rows].reshape(problem.N, 2)
    capped = (r[:, 0] >= w_e * BEHIND_CAMERA_CAP) & np.isclose(r[:, 0], r[:, 1])
    assert capped.sum() == result.behind_camera

    J = jacobian(problem).tocsc()
    column = J[:problem.n_event_rows, problem.parameter_names.index("scale")].toarray().reshape(problem.N, 2)
    # growing the scale moves the primitives towards the front of the camera
    assert np.all(column[capped] < 0.0)


@pytest.mark.parametrize("initial_scale", [0.01, 0.1, 10.0, 100.0])
def test_scale_recovered_from_distant_initial_guess(initial_scale):
    sim = _sim_with()
    result = _solve_from_truth(sim, ModelParams(scale=initial_scale))
    assert result.params.scale == pytest.approx(1.0, rel=5e-3)
    assert not any("behind-camera penalties" in w for w in result.report.warnings)


@pytest.mark.parametrize("initial_scale", [0.1, 10.0])
def test_scale_recovered_with_sensor_noise(initial_scale):
    sim = _sim_with(noise=True)
    result = _solve_from_truth(sim, ModelParams(scale=initial_scale))
    assert result.params.scale == pytest.approx(1.0, rel=0.07)


@pytest.mark.parametrize("noise, tolerance", [(False, 0.5), (True, 2.0)])
def test_map_orientation_recovered(noise, tolerance):
    truth = (np.radians(5.0), np.radians(-3.0))
    sim = _sim_with(noise=noise, orientation=truth)
    result = _solve_from_truth(sim, ModelParams())
    roll, pitch = np.degrees(result.params.orientation)
    assert roll == pytest.approx(5.0, abs=tolerance)
    assert pitch == pytest.approx(-3.0, abs=tolerance)


@pytest.mark.slow
@pytest.mark.parametrize("noise, tolerance", [(False, 5e-3), (True, 0.07)])
@pytest.mark.parametrize("initial_scale", [0.01, 0.1, 10.0, 100.0])
def test_scale_recovery_full_sequence(initial_scale, noise, tolerance):
    """Ten seconds, 100 map points, 1 kHz IMU."""
    sim = simulate(SimConfig(
        seed=3, **({} if noise else {"sigma_e": 0.0, "sigma_omega": 0.0, "sigma_a": 0.0}),
    ))
    result = _solve_from_truth(sim, ModelParams(scale=initial_scale), max_iterations=200)
    assert result.params.scale == pytest.approx(1.0, rel=tolerance)


@pytest.mark.slow
@pytest.mark.parametrize("noise, tolerance", [(False, 0.5), (True, 2.0)])
def test_map_orientation_full_sequence(noise, tolerance):
    truth = (np.radians(5.0), np.radians(-3.0))
    sigmas = {} if noise else {"sigma_e": 0.0, "sigma_omega": 0.0, "sigma_a": 0.0}
    sim = simulate(SimConfig(seed=3, params=ModelParams(orientation=truth), **sigmas))
    result = _solve_from_truth(sim, ModelParams(), max_iterations=200)
    np.testing.assert_allclose(np.degrees(result.params.orientation), [5.0, -3.0], atol=tolerance)


def test_stalled_solve_behind_camera_warns(intrinsics, mocker):
    scene = SceneMap.from_points([0], [[0.0, 0.0, -1e-3]])
    times = np.linspace(0.12, 0.28, 10)
    events = EventStream(times, np.full(10, 120.0), np.full(10, 90.0), np.ones(10))
    problem = build_problem(
        events, Associations(np.arange(10), np.zeros(10, dtype=int), "point"), None, scene,
        intrinsics, _identity_trajectory(), freeze=FreezeFlags(scale=True, orientation=True),
    )
    F = evaluate(problem).objective
    stalled = LMResult(
        state=problem.initial_state, initial_objective=F, final_objective=F, objective_trace=[F],
        iterations=0, termination="function_tolerance",
    )
    mocker.patch("evspline.estimator.levenberg_marquardt", return_value=stalled)

    report = solve(problem).report
    assert any("10 events project behind the camera" in w for w in report.warnings)
    assert any("behind-camera penalties" in w for w in report.warnings)
