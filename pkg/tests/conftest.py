"""Pytest configuration and fixtures."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to Python path for imports
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from evspline.geometry import se3_exp  # noqa: E402
from evspline.sensors import CameraIntrinsics  # noqa: E402
from evspline.simulator import MapSpec, SimConfig, TrajectorySpec  # noqa: E402
from evspline.trajectory import SplineTrajectory  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run desk-scale experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale experiment, run with --run-slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_trajectory(rng, n_poses=8, dt=0.1, t0=0.0, spread=0.3) -> SplineTrajectory:
    """Spline with control poses exp(xi_i), xi_i ~ N(0, spread^2)."""
    xi = rng.normal(0.0, spread, size=(n_poses, 6))
    return SplineTrajectory.from_matrices(t0, dt, se3_exp(xi))


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(200.0, 200.0, 120.0, 90.0)


def small_sim_config(noise: bool = False, seed: int = 7, **overrides) -> SimConfig:
    """About one second of data: 13 control poses, ~1000 events, 200 IMU samples."""
    trajectory = overrides.pop("trajectory", TrajectorySpec(duration=1.0, dt=0.1))
    scene = overrides.pop("map", MapSpec(count=20, half_extent=(0.3, 0.2, 0.15)))
    sigmas = {} if noise else {"sigma_e": 0.0, "sigma_omega": 0.0, "sigma_a": 0.0}
    kwargs = dict(
        trajectory=trajectory, map=scene, event_rate=50.0, imu_rate=200.0, seed=seed, **sigmas,
    )
    kwargs.update(overrides)
    return SimConfig(**kwargs)


@pytest.fixture
def small_sim():
    from evspline.simulator import simulate
    return simulate(small_sim_config())
