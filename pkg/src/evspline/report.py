"""Human-readable run log printed to stdout."""

from .metrics import SUMMARY_HEADER, summary_row


def report_runtime(runtime_config):
    """Print process-level settings."""
    print(f"Workers: {runtime_config.workers}")
    print(f"Log level: {runtime_config.log_level}")


def report_dataset(stats):
    """Print dataset statistics (counts, duration, density per control pose)."""
    print(f"Dataset: {stats.root}")
    print(f"  events:           {stats.n_events}")
    print(f"  associated:       {stats.n_associated if stats.n_associated is not None else '-'}")
    print(f"  IMU samples:      {stats.n_imu}")
    print(f"  map primitives:   {stats.n_primitives} ({stats.map_kind})")
    print(f"  duration:         {stats.duration:.3f} s")
    print(f"  control poses:    {stats.n_control_poses} (dt = {stats.knot_spacing:g} s)")
    print(f"  events / pose:    {stats.events_per_pose:.1f}")
    print(f"  IMU / pose:       {stats.imu_per_pose:.1f}")
    if stats.n_imu == 0:
        print("Warning: dataset has no IMU samples; only visual-only optimisation is possible")


def report_solve(report):
    """Print the outcome of an optimisation."""
    print(f"Objective: {report.initial_objective:.6e} -> {report.final_objective:.6e}")
    print(
        f"  events {report.objective_events:.6e}, gyro {report.objective_gyro:.6e}, "
        f"accel {report.objective_accel:.6e}"
    )
    print(f"Iterations: {report.iterations} ({report.termination}, {report.rejected_steps} rejected steps)")
    print(
        f"Residual RMS: events {report.rms_event_px:.4f} px, gyro {report.rms_gyro:.4f} rad/s, "
        f"accel {report.rms_accel:.4f} m/s^2"
    )
    print(f"Time: {report.elapsed_seconds:.2f} s total, {report.jacobian_seconds:.2f} s in Jacobians")
    if report.dropped_events or report.dropped_imu:
        print(
            f"Note: {report.dropped_events} events and {report.dropped_imu} IMU samples "
            "lie outside the spline domain and were ignored"
        )
    if report.rank_deficient:
        names = ", ".join(report.unobservable) or "unknown direction"
        print(f"Warning: normal equations are rank deficient; unobservable: {names}")
    for warning in report.warnings:
        print(f"Warning: {warning}")


def report_params(params, true_params=None, scale_error=None, gravity_error=None):
    print(f"Gyro bias:  {params.gyro_bias}")
    print(f"Accel bias: {params.accel_bias}")
    print(f"Map scale:  {params.scale:.6f}")
    print(f"Map roll/pitch: {params.orientation[0]:.6f} / {params.orientation[1]:.6f} rad")
    if true_params is not None:
        print(f"Scale error: {scale_error:.3f} %")
        print(f"Gravity direction error: {gravity_error:.3f} deg")


def report_errors(summary, label: str = "estimate"):
    print(SUMMARY_HEADER)
    print(summary_row(summary, label))
    if summary.unmatched:
        print(f"Note: {summary.unmatched} estimated poses had no ground-truth match")


def report_fit(fit):
    print(
        f"Spline fit: {fit.trajectory.n + 1} control poses, rms {fit.rms:.3e} "
        f"after {fit.iterations} iterations"
    )
    if fit.dropped_samples:
        print(f"Note: {fit.dropped_samples} samples outside the spline domain were ignored")


def report_saved(paths):
    for path in paths:
        print(f"Saved: {path}")
