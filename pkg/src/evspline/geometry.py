"""Lie-group primitives on SO(3) and SE(3).

Twists are stored as 6-vectors ``(alpha, beta)``: translational part first,
rotational part second. This order is used everywhere in the package,
including the decision vector of the estimator and every file format.

All array functions accept a single element or a leading batch dimension
(``(..., 3)``, ``(..., 6)``, ``(..., 3, 3)``, ``(..., 4, 4)``).
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NotSkewSymmetric

SMALL_ANGLE = 1e-8
SKEW_TOLERANCE = 1e-9
# Above this angle the rotation axis is read off the symmetric part of R.
NEAR_PI = np.pi - 1e-3


def hat(v) -> np.ndarray:
    """Skew-symmetric matrix M with M @ a == cross(v, a)."""
    v = np.asarray(v, dtype=float)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    zero = np.zeros_like(x)
    return np.stack(
        [zero, -z, y,
         z, zero, -x,
         -y, x, zero],
        axis=-1,
    ).reshape(v.shape[:-1] + (3, 3))


def vee(M, tol: float = SKEW_TOLERANCE) -> np.ndarray:
    """Inverse of hat; raises NotSkewSymmetric when the symmetric part exceeds tol."""
    M = np.asarray(M, dtype=float)
    asym = np.max(np.abs(M + np.swapaxes(M, -1, -2))) if M.size else 0.0
    if asym > tol:
        raise NotSkewSymmetric(float(asym))
    return np.stack([M[..., 2, 1], M[..., 0, 2], M[..., 1, 0]], axis=-1)


def twist_hat(xi) -> np.ndarray:
    """4x4 matrix form of a twist (alpha, beta)."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros(xi.shape[:-1] + (4, 4))
    out[..., :3, :3] = hat(xi[..., 3:])
    out[..., :3, 3] = xi[..., :3]
    return out


def _rodrigues_coefficients(theta: np.ndarray):
    """sin(t)/t, (1-cos t)/t^2 and (t-sin t)/t^3 with a series below SMALL_ANGLE."""
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0, 2.0 * np.sin(0.5 * t) ** 2 / (t * t))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0, (t - np.sin(t)) / (t * t * t))
    return a, b, c


def so3_exp(phi) -> np.ndarray:
    """Rotation matrix exp(hat(phi)) by the Rodrigues formula."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    a, b, _ = _rodrigues_coefficients(theta)
    W = hat(phi)
    WW = W @ W
    return np.eye(3) + a[..., None, None] * W + b[..., None, None] * WW


def so3_log(R) -> np.ndarray:
    """Principal-branch rotation vector of R (norm in [0, pi]).

    At exactly pi the axis sign is undetermined; the branch that reads the axis
    from the symmetric part of R returns the representative whose largest
    component is positive.
    """
    R = np.asarray(R, dtype=float)
    batch_shape = R.shape[:-2]
    Rf = R.reshape(-1, 3, 3)
    s = 0.5 * np.stack(
        [Rf[:, 2, 1] - Rf[:, 1, 2], Rf[:, 0, 2] - Rf[:, 2, 0], Rf[:, 1, 0] - Rf[:, 0, 1]],
        axis=-1,
    )
    sin_t = np.linalg.norm(s, axis=-1)
    cos_t = np.clip(0.5 * (np.trace(Rf, axis1=1, axis2=2) - 1.0), -1.0, 1.0)
    theta = np.arctan2(sin_t, cos_t)

    small = theta < SMALL_ANGLE
    safe_sin = np.where(small, 1.0, sin_t)
    factor = np.where(small, 1.0 + theta * theta / 6.0, theta / safe_sin)
    out = factor[:, None] * s

    near_pi = theta > NEAR_PI
    if np.any(near_pi):
        Rp = Rf[near_pi]
        S = 0.5 * (Rp + np.swapaxes(Rp, 1, 2)) - cos_t[near_pi, None, None] * np.eye(3)
        k = np.argmax(np.diagonal(S, axis1=1, axis2=2), axis=1)
        idx = np.arange(len(Rp))
        axis = S[idx, :, k]
        axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
        sign = np.where(np.einsum("ij,ij->i", axis, s[near_pi]) < 0.0, -1.0, 1.0)
        out[near_pi] = (sign * theta[near_pi])[:, None] * axis
    return out.reshape(batch_shape + (3,))


def se3_exp(xi) -> np.ndarray:
    """4x4 homogeneous matrix exp(twist_hat(xi))."""
    xi = np.asarray(xi, dtype=float)
    alpha, beta = xi[..., :3], xi[..., 3:]
    theta = np.linalg.norm(beta, axis=-1)
    a, b, c = _rodrigues_coefficients(theta)
    W = hat(beta)
    WW = W @ W
    eye = np.eye(3)
    R = eye + a[..., None, None] * W + b[..., None, None] * WW
    V = eye + b[..., None, None] * W + c[..., None, None] * WW
    out = np.zeros(xi.shape[:-1] + (4, 4))
    out[..., :3, :3] = R
    out[..., :3, 3] = np.einsum("...ij,...j->...i", V, alpha)
    out[..., 3, 3] = 1.0
    return out


def se3_log(T) -> np.ndarray:
    """Principal-branch twist (alpha, beta) of a homogeneous matrix."""
    T = np.asarray(T, dtype=float)
    beta = so3_log(T[..., :3, :3])
    theta = np.linalg.norm(beta, axis=-1)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    a, b, _ = _rodrigues_coefficients(theta)
    d = np.where(
        small,
        1.0 / 12.0 + theta * theta / 720.0,
        (1.0 - a / (2.0 * np.where(small, 1.0, b))) / (t * t),
    )
    W = hat(beta)
    V_inv = np.eye(3) - 0.5 * W + d[..., None, None] * (W @ W)
    alpha = np.einsum("...ij,...j->...i", V_inv, T[..., :3, 3])
    return np.concatenate([alpha, beta], axis=-1)


def se3_inverse(T) -> np.ndarray:
    """Closed-form inverse of homogeneous rigid-body matrices."""
    T = np.asarray(T, dtype=float)
    Rt = np.swapaxes(T[..., :3, :3], -1, -2)
    out = np.zeros_like(T)
    out[..., :3, :3] = Rt
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", Rt, T[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(R) -> np.ndarray:
    """Geodesic angle (radians, in [0, pi]) of rotation matrices."""
    return np.linalg.norm(so3_log(R), axis=-1)


def quaternion_to_rotation(q) -> np.ndarray:
    """Rotation matrices from scalar-last quaternions (qx, qy, qz, qw)."""
    return Rotation.from_quat(np.asarray(q, dtype=float)).as_matrix()


def rotation_to_quaternion(R) -> np.ndarray:
    """Scalar-last unit quaternions with non-negative qw."""
    q = Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
    return np.where(q[..., 3:4] < 0.0, -q, q)


@dataclass(frozen=True, eq=False)
class Twist:
    """Exponential coordinates of a rigid-body motion."""
    alpha: np.ndarray  # translational part [m]
    beta: np.ndarray  # rotational part [rad]

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float).reshape(3))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(3))

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = np.asarray(xi, dtype=float)
        return cls(xi[:3], xi[3:6])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta])

    def hat(self) -> np.ndarray:
        return twist_hat(self.vector)

    def __mul__(self, scale: float) -> "Twist":
        return Twist(self.alpha * scale, self.beta * scale)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid-body transformation T = [[R, t], [0, 1]]."""
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def act(self, points) -> np.ndarray:
        """Transform points (..., 3) from the local to the parent frame."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(
            np.all(np.isfinite(self.matrix))
            and np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) < tol
        )


def exp_se3(xi: Twist) -> Pose:
    return Pose.from_matrix(se3_exp(xi.vector))


def log_se3(T: Pose) -> Twist:
    return Twist.from_vector(se3_log(T.matrix))


def pose_distance(a: Pose, b: Pose) -> float:
    """Norm of the twist taking a onto b."""
    return float(np.linalg.norm(se3_log(se3_inverse(a.matrix) @ b.matrix)))
