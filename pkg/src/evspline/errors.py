"""Exception hierarchy for evspline.

Every error raised by the package derives from EvSplineError, so the CLI can map
failures onto exit codes in one place (see ``exit_code_for``).
"""

from pathlib import Path


class EvSplineError(RuntimeError):
    """Base class for all evspline errors."""

    exit_code = 1


# geometry / trajectory

class NotSkewSymmetric(EvSplineError):
    """Raised by vee when the symmetric part of the input exceeds tolerance."""

    def __init__(self, asymmetry: float):
        self.asymmetry = asymmetry
        super().__init__(f"Matrix is not skew-symmetric (max |M + M^T| = {asymmetry:.3e})")


class DomainError(EvSplineError):
    """Spline parameter u outside [0, 1)."""


class OutOfDomain(EvSplineError):
    """Evaluation time outside the spline's valid domain."""

    def __init__(self, t: float, domain: tuple[float, float]):
        self.t = t
        self.domain = domain
        super().__init__(
            f"Time {t:.9f} s is outside the spline domain "
            f"[{domain[0]:.9f}, {domain[1]:.9f})"
        )


class InsufficientData(EvSplineError):
    """Not enough samples to determine every control pose."""


# sensors

class BehindCamera(EvSplineError):
    """A map primitive projects with non-positive depth."""

    def __init__(self, depth: float):
        self.depth = depth
        super().__init__(f"Point is behind the camera (depth {depth:.3e} m)")


class DegenerateSegment(EvSplineError):
    """Projected segment endpoints coincide."""


# estimator

class EmptyProblem(EvSplineError):
    """No residual blocks remain after assembly."""


class DomainMismatch(EvSplineError):
    """Measurements fall outside the trajectory domain."""

    def __init__(self, dropped_events: list[int], dropped_imu: list[int]):
        self.dropped_events = dropped_events
        self.dropped_imu = dropped_imu
        super().__init__(
            f"{len(dropped_events)} events and {len(dropped_imu)} IMU samples lie outside "
            f"the trajectory domain (first events: {dropped_events[:5]}, "
            f"first IMU samples: {dropped_imu[:5]})"
        )


class NumericalFailure(EvSplineError):
    """Normal equations could not be solved at any damping level."""

    exit_code = 3

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


# simulator

class BadSpec(EvSplineError):
    """Invalid simulator specification."""

    exit_code = 2


class NoVisiblePrimitives(EvSplineError):
    """No map primitive is visible along the trajectory."""


# io

class ParseError(EvSplineError):
    """A line of an input file could not be parsed."""

    exit_code = 4

    def __init__(self, path: Path | str, line: int, column: int | None, reason: str):
        self.path = Path(path)
        self.line = line
        self.column = column
        where = f"{self.path}:{line}" + (f":{column}" if column is not None else "")
        super().__init__(f"{where}: {reason}")


class NonMonotoneTimestamp(EvSplineError):
    """Timestamps decrease within a file."""

    exit_code = 4

    def __init__(self, path: Path | str, line: int):
        self.path = Path(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: timestamp is smaller than the previous one")


class NonUnitQuaternion(EvSplineError):
    """Quaternion norm deviates from 1 by more than the accepted tolerance."""

    exit_code = 4

    def __init__(self, path: Path | str, line: int, norm: float):
        self.path = Path(path)
        self.line = line
        self.norm = norm
        super().__init__(f"{self.path}:{line}: quaternion norm {norm:.6f} is not unit")


# metrics

class DegenerateGeometry(EvSplineError):
    """Point set is collinear or coincident; alignment is undefined."""


class EmptyOverlap(EvSplineError):
    """No timestamps could be matched between two trajectories."""


# configuration

class ConfigError(EvSplineError):
    """Invalid run configuration."""

    exit_code = 2


def exit_code_for(exc: BaseException) -> int:
    """Return the CLI exit code for an exception."""
    if isinstance(exc, EvSplineError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return 4
    return 1
