"""Configuration dataclasses and the flat ``key = value`` config file format."""

import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from dotenv import load_dotenv

from .errors import ConfigError
from .estimator import FreezeFlags, NoiseConfig
from .sensors import CameraIntrinsics, ModelParams
from .simulator import MapSpec, SimConfig, TrajectorySpec
from .solver import LMConfig

INIT_KINDS = ("groundtruth", "tracker", "perturbed")


@dataclass(frozen=True)
class InitSpec:
    """How control poses are initialised; perturbation sizes in m and rad."""
    kind: str = "groundtruth"
    sigma_t: float = 0.0
    sigma_r: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "InitSpec":
        """``groundtruth``, ``tracker`` or ``perturbed:<m>,<angle>[deg]``."""
        kind, _, rest = text.strip().partition(":")
        if kind not in INIT_KINDS:
            raise ConfigError(f"Unknown init {text!r}; expected groundtruth, tracker or perturbed:<m>,<angle>")
        if kind != "perturbed":
            if rest:
                raise ConfigError(f"init {kind!r} takes no arguments")
            return cls(kind)
        parts = [p.strip() for p in rest.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"perturbed init needs '<m>,<angle>', got {rest!r}")
        try:
            sigma_t = float(parts[0])
            if parts[1].endswith("deg"):
                sigma_r = math.radians(float(parts[1][:-3]))
            else:
                sigma_r = float(parts[1].removesuffix("rad"))
        except ValueError as exc:
            raise ConfigError(f"Cannot parse perturbation {rest!r}: {exc}") from exc
        if sigma_t < 0.0 or sigma_r < 0.0:
            raise ConfigError("Perturbation sizes must not be negative")
        return cls(kind, sigma_t, sigma_r)

    def __str__(self) -> str:
        if self.kind != "perturbed":
            return self.kind
        return f"perturbed:{self.sigma_t:g},{math.degrees(self.sigma_r):g}deg"


@dataclass
class RunConfig:
    """Every knob of a run. Noise and solver defaults are the desk-scale settings."""
    command: str
    out_dir: Path = Path("outputs")
    dataset: Path | None = None
    config_file: Path | None = None
    # estimation
    knot_spacing: float = 0.1  # s
    sigma_e: float = 0.1  # px
    sigma_omega: float = 0.03  # rad/s
    sigma_a: float = 0.1  # m/s^2
    freeze: tuple[str, ...] = ()
    use_imu: bool = True
    init: InitSpec = field(default_factory=InitSpec)
    tracker: Path | None = None
    initial_scale: float = 1.0
    initial_roll: float = 0.0  # rad
    initial_pitch: float = 0.0  # rad
    max_iterations: int = 50
    function_tolerance: float = 1e-3
    gradient_tolerance: float = 1e-8
    trajectory_rate: float = 200.0  # Hz, for trajectory.txt
    assoc_line_tolerance: float = 1.0  # px
    strict: bool = False
    seed: int = 0
    # evaluation
    est: Path | None = None
    gt: Path | None = None
    align: str = "se3"
    scene_depth: float | None = None
    label: str = "estimate"
    handeye: Path | None = None
    map_file: Path | None = None
    # fit
    poses: Path | None = None

    def __post_init__(self):
        if not self.knot_spacing > 0.0:
            raise ConfigError(f"knot_spacing must be positive, got {self.knot_spacing!r}")
        if not self.initial_scale > 0.0:
            raise ConfigError(f"initial_scale must be positive, got {self.initial_scale!r}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be at least 1, got {self.max_iterations!r}")
        if self.align not in ("se3", "sim3"):
            raise ConfigError(f"align must be se3 or sim3, got {self.align!r}")
        try:
            self.noise
            self.freeze_flags
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def noise(self) -> NoiseConfig:
        return NoiseConfig(self.sigma_e, self.sigma_omega, self.sigma_a)

    @property
    def freeze_flags(self) -> FreezeFlags:
        return FreezeFlags.from_names(self.freeze)

    @property
    def lm_config(self) -> LMConfig:
        return LMConfig(
            max_iterations=self.max_iterations,
            function_tolerance=self.function_tolerance,
            gradient_tolerance=self.gradient_tolerance,
        )

    @property
    def initial_params(self) -> ModelParams:
        return ModelParams(scale=self.initial_scale, orientation=(self.initial_roll, self.initial_pitch))

    def resolved_lines(self) -> list[str]:
        """``key = value`` lines for resolved_config.txt (the output directory itself excluded)."""
        lines = []
        for f in fields(self):
            if f.name == "out_dir":
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(value) or "-"
            lines.append(f"{f.name} = {'-' if value is None else value}")
        return lines


@dataclass
class RuntimeConfig:
    """Process-level settings taken from the environment."""
    workers: int
    log_level: str

    @classmethod
    def from_env(cls) -> "RuntimeConfig":
        """Create RuntimeConfig from environment variables (and a .env file)."""
        load_dotenv()
        raw_workers = os.getenv("EVSPLINE_WORKERS", "1")
        try:
            workers = max(1, int(raw_workers))
        except ValueError as exc:
            raise ConfigError(f"EVSPLINE_WORKERS must be an integer, got {raw_workers!r}") from exc
        return cls(
            workers=workers,
            log_level=os.getenv("EVSPLINE_LOG_LEVEL", "INFO").upper(),
        )


# config files

RUN_KEYS = {
    "knot_spacing": float, "sigma_e": float, "sigma_omega": float, "sigma_a": float,
    "initial_scale": float, "max_iterations": int, "function_tolerance": float,
    "gradient_tolerance": float, "trajectory_rate": float, "assoc_line_tolerance": float,
    "seed": int,
}
TRAJ_KEYS = ("kind", "duration", "dt", "t0", "twist", "amplitude", "frequency", "phase", "control_poses")
MAP_KEYS = ("kind", "count", "depth", "half_extent", "side")
SIM_KEYS = (
    "event_rate", "imu_rate", "groundtruth_rate", "sigma_e", "sigma_omega", "sigma_a",
    "gyro_bias", "accel_bias", "scale", "roll_deg", "pitch_deg",
    "fx", "fy", "cx", "cy", "width", "height",
)
KNOWN_KEYS = (
    set(RUN_KEYS)
    | {f"traj.{k}" for k in TRAJ_KEYS}
    | {f"map.{k}" for k in MAP_KEYS}
    | {f"sim.{k}" for k in SIM_KEYS}
)


def load_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    path = Path(path)
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            if key not in KNOWN_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
            values[key] = value
    return values


def _number(values: dict, key: str, kind=float, default=None):
    if key not in values:
        return default
    try:
        return kind(values[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {values[key]!r} as {kind.__name__}") from exc


def _vector(values: dict, key: str, size: int, default):
    if key not in values:
        return default
    parts = values[key].replace(",", " ").split()
    try:
        vec = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {values[key]!r} as numbers") from exc
    if len(vec) != size:
        raise ConfigError(f"{key}: expected {size} values, got {len(vec)}")
    return vec


def run_overrides(values: dict) -> dict:
    """RunConfig keyword arguments present in a config file."""
    return {k: _number(values, k, kind) for k, kind in RUN_KEYS.items() if k in values}


def sim_config_from(values: dict, knot_spacing: float = 0.1, seed: int = 0, control_poses=()) -> SimConfig:
    """SimConfig from ``traj.*``, ``map.*`` and ``sim.*`` keys; missing keys keep defaults."""
    t_default, m_default, s_default = TrajectorySpec(), MapSpec(), SimConfig()
    trajectory = TrajectorySpec(
        kind=values.get("traj.kind", t_default.kind),
        duration=_number(values, "traj.duration", default=t_default.duration),
        dt=_number(values, "traj.dt", default=knot_spacing),
        t0=_number(values, "traj.t0", default=t_default.t0),
        twist=_vector(values, "traj.twist", 6, t_default.twist),
        amplitude=_vector(values, "traj.amplitude", 6, t_default.amplitude),
        frequency=_vector(values, "traj.frequency", 6, t_default.frequency),
        phase=_vector(values, "traj.phase", 6, t_default.phase),
        control_poses=tuple(control_poses),
    )
    scene = MapSpec(
        kind=values.get("map.kind", m_default.kind),
        count=_number(values, "map.count", int, m_default.count),
        depth=_number(values, "map.depth", default=m_default.depth),
        half_extent=_vector(values, "map.half_extent", 3, m_default.half_extent),
        side=_number(values, "map.side", default=m_default.side),
    )
    K0 = s_default.intrinsics
    try:
        intrinsics = CameraIntrinsics(
            fx=_number(values, "sim.fx", default=K0.fx),
            fy=_number(values, "sim.fy", default=K0.fy),
            cx=_number(values, "sim.cx", default=K0.cx),
            cy=_number(values, "sim.cy", default=K0.cy),
            width=_number(values, "sim.width", int, K0.width),
            height=_number(values, "sim.height", int, K0.height),
        )
        params = ModelParams(
            gyro_bias=_vector(values, "sim.gyro_bias", 3, (0.0, 0.0, 0.0)),
            accel_bias=_vector(values, "sim.accel_bias", 3, (0.0, 0.0, 0.0)),
            scale=_number(values, "sim.scale", default=1.0),
            orientation=(
                math.radians(_number(values, "sim.roll_deg", default=0.0)),
                math.radians(_number(values, "sim.pitch_deg", default=0.0)),
            ),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return SimConfig(
        trajectory=trajectory,
        map=scene,
        intrinsics=intrinsics,
        event_rate=_number(values, "sim.event_rate", default=s_default.event_rate),
        imu_rate=_number(values, "sim.imu_rate", default=s_default.imu_rate),
        groundtruth_rate=_number(values, "sim.groundtruth_rate", default=s_default.groundtruth_rate),
        sigma_e=_number(values, "sim.sigma_e", default=s_default.sigma_e),
        sigma_omega=_number(values, "sim.sigma_omega", default=s_default.sigma_omega),
        sigma_a=_number(values, "sim.sigma_a", default=s_default.sigma_a),
        params=params,
        seed=seed,
    )
