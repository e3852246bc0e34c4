"""Rigid-body motion on SE(3).

Poses are stored as an explicit rotation matrix and translation vector.
Tangent coordinates are ordered ``(phi, rho)``: rotation first, then
translation, and the exponential map uses the left Jacobian of SO(3) to
carry ``rho`` into the translation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, NearSingularRotation

SMALL_ANGLE = 1e-8
ORTHO_TOL = 1e-9
# looser bound for externally supplied matrices (files, user code)
INPUT_ORTHO_TOL = 1e-6
# log is undefined (axis ambiguous) this close to a half turn
PI_MARGIN = 1e-6
# below this, cancellation-prone coefficients switch to their series
SERIES_ANGLE = 1e-3

_I3 = np.eye(3)


def skew(v) -> np.ndarray:
    """Cross-product matrix ``[v]x`` such that ``skew(a) @ b == cross(a, b)``."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _orthonormality_error(r: np.ndarray) -> float:
    return float(np.abs(r.T @ r - _I3).max())


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True, eq=False)
class SE3Pose:
    """Rigid transform ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InvalidInput(f"bad pose shapes {r.shape}, {t.shape}")
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise InvalidInput("non-finite pose")
        if _orthonormality_error(r) > INPUT_ORTHO_TOL or np.linalg.det(r) <= 0.0:
            raise InvalidInput("rotation is not orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def _raw(cls, r: np.ndarray, t: np.ndarray) -> "SE3Pose":
        # trusted constructor for internal arithmetic, skips validation
        obj = object.__new__(cls)
        object.__setattr__(obj, "rotation", r)
        object.__setattr__(obj, "translation", t)
        return obj

    @classmethod
    def identity(cls) -> "SE3Pose":
        return cls._raw(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "SE3Pose":
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, m) -> "SE3Pose":
        m = np.asarray(m, dtype=float)
        if m.shape not in ((4, 4), (3, 4)):
            raise InvalidInput(f"expected 4x4 or 3x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def matrix3x4(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    def inverse(self) -> "SE3Pose":
        rt = self.rotation.T
        return SE3Pose._raw(rt, -(rt @ self.translation))

    def apply(self, points) -> np.ndarray:
        """Transform a (3,) point or an (N, 3) array of points."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def __matmul__(self, other: "SE3Pose") -> "SE3Pose":
        return compose(self, other)

    def is_valid(self, tol: float = ORTHO_TOL) -> bool:
        r = self.rotation
        return _orthonormality_error(r) <= tol and abs(np.linalg.det(r) - 1.0) <= tol

    def allclose(self, other: "SE3Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __repr__(self) -> str:
        return f"SE3Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class Twist:
    """Tangent-space coordinates: ``phi`` (rad) and ``rho`` (m)."""

    phi: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).reshape(3))
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float).reshape(3))

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(xi[:3], xi[3:])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.phi, self.rho])

    def scaled(self, s: float) -> "Twist":
        """Velocity-to-displacement mapping ``xi = V * dt``."""
        return Twist(self.phi * s, self.rho * s)


def _so3_coefficients(theta: float):
    # sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3 with Taylor fallbacks
    t2 = theta * theta
    if theta < SMALL_ANGLE:
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s = math.sin(theta)
    h = math.sin(0.5 * theta)
    # half-angle form avoids cancellation in 1 - cos
    b = 2.0 * h * h / t2
    if theta < SERIES_ANGLE:
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        c = (theta - s) / (t2 * theta)
    return s / theta, b, c


def exp_map(twist: Twist) -> SE3Pose:
    """Exponential map se(3) -> SE(3)."""
    phi = twist.phi
    rho = twist.rho
    if not (np.isfinite(phi).all() and np.isfinite(rho).all()):
        raise InvalidInput("non-finite twist")
    theta = math.sqrt(float(phi @ phi))
    a, b, c = _so3_coefficients(theta)
    k = skew(phi)
    k2 = k @ k
    r = _I3 + a * k + b * k2
    v = _I3 + b * k + c * k2
    return SE3Pose._raw(r, v @ rho)


def exp_rotation(phi) -> np.ndarray:
    """Rodrigues formula for a rotation vector."""
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(float(phi @ phi))
    a, b, _ = _so3_coefficients(theta)
    k = skew(phi)
    return _I3 + a * k + b * (k @ k)


def log_rotation(r: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix; raises near a half turn."""
    w = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    sin_t = math.sqrt(float(w @ w))
    cos_t = 0.5 * (r[0, 0] + r[1, 1] + r[2, 2] - 1.0)
    theta = math.atan2(sin_t, cos_t)
    if theta > math.pi - PI_MARGIN:
        raise NearSingularRotation(f"rotation angle {theta!r} too close to pi")
    if theta < SMALL_ANGLE:
        # theta/sin(theta) ~ 1 + theta^2/6
        return w * (1.0 + theta * theta / 6.0)
    if theta < 2.5:
        return w * (theta / sin_t)
    # antisymmetric part loses precision here; take the axis from the
    # symmetric part and the sign from w
    s = 0.5 * (r + r.T) - cos_t * _I3
    col = int(np.argmax(np.diag(s)))
    axis = s[:, col] / math.sqrt(s[col, col] * (1.0 - cos_t))
    if axis @ w < 0.0:
        axis = -axis
    return axis * theta


def log_map(pose: SE3Pose) -> Twist:
    """Logarithm map SE(3) -> se(3), inverse of :func:`exp_map`."""
    phi = log_rotation(pose.rotation)
    theta = math.sqrt(float(phi @ phi))
    k = skew(phi)
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        coeff = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        a, b, _ = _so3_coefficients(theta)
        coeff = (1.0 - a / (2.0 * b)) / (theta * theta)
    v_inv = _I3 - 0.5 * k + coeff * (k @ k)
    return Twist(phi, v_inv @ pose.translation)


def compose(a: SE3Pose, b: SE3Pose) -> SE3Pose:
    """``a * b``: apply ``b`` first, then ``a``."""
    r = a.rotation @ b.rotation
    if _orthonormality_error(r) > ORTHO_TOL:
        r = nearest_rotation(r)
    return SE3Pose._raw(r, a.rotation @ b.translation + a.translation)


def inverse(pose: SE3Pose) -> SE3Pose:
    return pose.inverse()


def relative(current: SE3Pose, reference: SE3Pose) -> SE3Pose:
    """Motion taking ``reference`` to ``current``: ``current * reference^-1``."""
    return compose(current, reference.inverse())


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    w = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    cos_t = 0.5 * (np.trace(r) - 1.0)
    return math.atan2(math.sqrt(float(w @ w)), cos_t)
