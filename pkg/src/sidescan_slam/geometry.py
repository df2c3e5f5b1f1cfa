"""Rigid-body geometry for trajectory state and the sonar measurement chain.

Conventions used throughout the package:

* Global frame is NED: x = north, y = east, z = down (meters).
* Body frame is FRD: x = forward, y = starboard, z = down.
* Tangent vectors are rotation-first: ``(wx, wy, wz, tx, ty, tz)``.
* Human-facing attitude is yaw-pitch-roll, Z-Y-X intrinsic, so yaw equals
  compass heading (0 = north, pi/2 = east).

Rotations are stored as 3x3 matrices for cheap chaining and serialized as
unit quaternions ``(w, x, y, z)``.
"""

from dataclasses import dataclass

import numpy as np

_EPS_ANGLE = 1e-8


def _skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w):
    """Rotation matrix for a rotation vector (axis * angle)."""
    w = np.asarray(w, dtype=float)
    theta2 = float(w @ w)
    theta = np.sqrt(theta2)
    k = _skew(w)
    if theta < _EPS_ANGLE:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(rot):
    """Rotation vector of a rotation matrix. Stable away from theta = pi."""
    rot = np.asarray(rot, dtype=float)
    trace = np.clip((np.trace(rot) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(trace))
    if theta < _EPS_ANGLE:
        return 0.5 * np.array(
            [rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]
        )
    if np.pi - theta < 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from the
        # dominant diagonal entry instead.
        diag = np.diag(rot)
        i = int(np.argmax(diag))
        axis = np.zeros(3)
        axis[i] = np.sqrt(max(0.0, (diag[i] + 1.0) * 0.5))
        j, k = (i + 1) % 3, (i + 2) % 3
        axis[j] = rot[i, j] / (2.0 * axis[i])
        axis[k] = rot[i, k] / (2.0 * axis[i])
        return theta * axis
    scale = theta / (2.0 * np.sin(theta))
    return scale * np.array(
        [rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]
    )


def _so3_left_jacobian(w):
    w = np.asarray(w, dtype=float)
    theta2 = float(w @ w)
    theta = np.sqrt(theta2)
    k = _skew(w)
    if theta < _EPS_ANGLE:
        b = 0.5 - theta2 / 24.0
        c = 1.0 / 6.0 - theta2 / 120.0
    else:
        b = (1.0 - np.cos(theta)) / theta2
        c = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) + b * k + c * (k @ k)


def _so3_left_jacobian_inv(w):
    w = np.asarray(w, dtype=float)
    theta2 = float(w @ w)
    theta = np.sqrt(theta2)
    k = _skew(w)
    if theta < 1e-4:
        e = 1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
        e = (1.0 - a / (2.0 * b)) / theta2
    return np.eye(3) - 0.5 * k + e * (k @ k)


@dataclass(frozen=True)
class Pose3:
    """Rigid transform in 3-D: ``p_world = rotation @ p_local + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float)
        trans = np.array(self.translation, dtype=float).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError("rotation must be a 3x3 matrix")
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(trans)):
            raise ValueError("pose entries must be finite")
        err = np.abs(rot @ rot.T - np.eye(3)).max()
        if err > 1e-6 or np.linalg.det(rot) < 0.0:
            raise ValueError(f"rotation is not orthonormal (error {err:.2e})")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def _trusted(cls, rotation, translation):
        """Construct without validation; rotation/translation must already be
        a well-formed float64 pair produced by this module."""
        self = object.__new__(cls)
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)
        return self

    @staticmethod
    def identity():
        return Pose3(np.eye(3), np.zeros(3))

    @staticmethod
    def from_translation(x, y, z):
        return Pose3(np.eye(3), np.array([x, y, z], dtype=float))

    @staticmethod
    def from_yaw_pitch_roll(yaw, pitch, roll, translation=(0.0, 0.0, 0.0)):
        cy, sy = np.cos(yaw), np.sin(yaw)
        cp, sp = np.cos(pitch), np.sin(pitch)
        cr, sr = np.cos(roll), np.sin(roll)
        rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
        return Pose3(rz @ ry @ rx, np.asarray(translation, dtype=float))

    @staticmethod
    def from_quat(qw, qx, qy, qz, translation=(0.0, 0.0, 0.0)):
        n = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        if n < 1e-12:
            raise ValueError("zero-norm quaternion")
        w, x, y, z = qw / n, qx / n, qy / n, qz / n
        rot = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        return Pose3(rot, np.asarray(translation, dtype=float))

    def quat(self):
        """Unit quaternion ``(w, x, y, z)`` with non-negative w."""
        m = self.rotation
        t = np.trace(m)
        if t > 0.0:
            s = np.sqrt(t + 1.0) * 2.0
            w = 0.25 * s
            x = (m[2, 1] - m[1, 2]) / s
            y = (m[0, 2] - m[2, 0]) / s
            z = (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] > m[2, 2]:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        q = np.array([w, x, y, z])
        if q[0] < 0.0:
            q = -q
        return q / np.linalg.norm(q)

    def yaw(self):
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def compose(self, other):
        return Pose3._trusted(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other):
        return self.compose(other)

    def inverse(self):
        rt = np.ascontiguousarray(self.rotation.T)
        return Pose3._trusted(rt, -(rt @ self.translation))

    def apply(self, points):
        """Transform one point (3,) or a stack (N, 3) into the parent frame."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation

    def matrix(self):
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out


def se3_exp(xi):
    """Exponential map: tangent vector (w, t) -> Pose3."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    w, rho = xi[:3], xi[3:]
    return Pose3._trusted(so3_exp(w), _so3_left_jacobian(w) @ rho)


def se3_log(pose):
    """Logarithm map: Pose3 -> tangent vector (w, t)."""
    w = so3_log(pose.rotation)
    rho = _so3_left_jacobian_inv(w) @ pose.translation
    return np.concatenate([w, rho])


def se3_adjoint(pose):
    """6x6 adjoint mapping tangent vectors across a frame change."""
    r = pose.rotation
    out = np.zeros((6, 6))
    out[:3, :3] = r
    out[3:, 3:] = r
    out[3:, :3] = _skew(pose.translation) @ r
    return out


def se3_ad(xi):
    """6x6 little adjoint of a tangent vector."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    out = np.zeros((6, 6))
    kw = _skew(xi[:3])
    out[:3, :3] = kw
    out[3:, 3:] = kw
    out[3:, :3] = _skew(xi[3:])
    return out


def se3_jr_inv(xi):
    """Inverse right Jacobian of the exponential map (Bernoulli series).

    Accurate to ~1e-10 for rotation magnitudes below ~0.7 rad, which covers
    every residual this package linearizes.
    """
    x = se3_ad(xi)
    x2 = x @ x
    x4 = x2 @ x2
    return (
        np.eye(6)
        + 0.5 * x
        + x2 / 12.0
        - x4 / 720.0
        + (x4 @ x2) / 30240.0
    )


def log_residual(a, b):
    """Tangent-space difference of two poses: log(a^-1 * b).

    Zero iff the poses are equal; used as the residual for every
    pose-to-pose factor.
    """
    return se3_log(a.inverse() @ b)


def global_to_sensor(point, centre_pose, centre_to_ping, sensor_offset):
    """Map a global-frame point into the sonar sensor frame.

    The sensor pose in the global frame is
    ``centre_pose * centre_to_ping * sensor_offset``; this applies the
    inverse of that chain.
    """
    w = centre_pose @ centre_to_ping @ sensor_offset
    return w.inverse().apply(point)


def sensor_to_global(point, centre_pose, centre_to_ping, sensor_offset):
    w = centre_pose @ centre_to_ping @ sensor_offset
    return w.apply(point)


@dataclass(frozen=True)
class Landmark:
    """A 3-D point on the seafloor in the global frame."""

    position: np.ndarray

    def __post_init__(self):
        pos = np.array(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("landmark coordinates must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class SensorConfig:
    """Side-scan sensor geometry and noise model.

    ``beam_width_alpha`` scales the across-array (plane) measurement noise
    with range; ``range_sigma`` is the slant-range noise floor.
    """

    max_range: float
    bins_per_side: int
    beam_width_alpha: float = 0.1
    range_sigma: float = 0.1
    sensor_offset: Pose3 = Pose3.identity()

    def __post_init__(self):
        if self.beam_width_alpha <= 0.0:
            raise ValueError("beam_width_alpha must be positive")
        if self.range_sigma <= 0.0:
            raise ValueError("range_sigma must be positive")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")
        if self.bins_per_side < 1:
            raise ValueError("bins_per_side must be at least 1")

    @property
    def slant_resolution(self):
        return self.max_range / self.bins_per_side
