"""Continuous-time visual-inertial trajectory estimation for event cameras."""

from . import (
    cli,
    config,
    env,
    errors,
    estimator,
    geometry,
    io,
    metrics,
    pipeline,
    report,
    sensors,
    simulator,
    solver,
    trajectory,
)

__version__ = "0.1.0"
