"""Rigid-body transform algebra: quaternions, poses, Euler angles, timed trajectories.

Conventions:
    - Quaternions are Hamilton, stored (w, x, y, z), kept unit-norm.
    - Pose composition is column-vector / left-multiplying: compose(a, b)
      applies b first, then a (matrix product T_a @ T_b).
    - Euler angles are intrinsic Z-Y-X (yaw, pitch, roll).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-9


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion (w, x, y, z). Normalized eagerly by constructors below."""

    w: float
    x: float
    y: float
    z: float

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Quaternion":
        ax, ay, az = float(axis[0]), float(axis[1]), float(axis[2])
        n = math.sqrt(ax * ax + ay * ay + az * az)
        if n < 1e-15:
            if abs(angle) < 1e-15:
                return Quaternion.identity()
            raise ValueError("zero rotation axis")
        s = math.sin(0.5 * angle) / n
        return Quaternion(math.cos(0.5 * angle), ax * s, ay * s, az * s).normalized()

    @staticmethod
    def from_rotvec(v) -> "Quaternion":
        vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
        angle = math.sqrt(vx * vx + vy * vy + vz * vz)
        if angle < 1e-15:
            return Quaternion.identity()
        return Quaternion.from_axis_angle((vx, vy, vz), angle)

    def normalized(self) -> "Quaternion":
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n < 1e-15:
            raise ValueError("cannot normalize zero quaternion")
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    inverse = conjugate  # unit quaternions only

    def multiply(self, other: "Quaternion") -> "Quaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ).normalized()

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return self.multiply(other)

    def rotate(self, v) -> np.ndarray:
        """Rotate a 3-vector by this quaternion."""
        vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
        w, x, y, z = self.w, self.x, self.y, self.z
        # t = 2 * (q_vec x v)
        tx = 2.0 * (y * vz - z * vy)
        ty = 2.0 * (z * vx - x * vz)
        tz = 2.0 * (x * vy - y * vx)
        return np.array(
            [
                vx + w * tx + (y * tz - z * ty),
                vy + w * ty + (z * tx - x * tz),
                vz + w * tz + (x * ty - y * tx),
            ]
        )

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    @staticmethod
    def from_matrix(R) -> "Quaternion":
        R = np.asarray(R, dtype=float)
        t = np.trace(R)
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            w = 0.25 * s
            x = (R[2, 1] - R[1, 2]) / s
            y = (R[0, 2] - R[2, 0]) / s
            z = (R[1, 0] - R[0, 1]) / s
        elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            w = (R[2, 1] - R[1, 2]) / s
            x = 0.25 * s
            y = (R[0, 1] + R[1, 0]) / s
            z = (R[0, 2] + R[2, 0]) / s
        elif R[1, 1] > R[2, 2]:
            s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            w = (R[0, 2] - R[2, 0]) / s
            x = (R[0, 1] + R[1, 0]) / s
            y = 0.25 * s
            z = (R[1, 2] + R[2, 1]) / s
        else:
            s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
            w = (R[1, 0] - R[0, 1]) / s
            x = (R[0, 2] + R[2, 0]) / s
            y = (R[1, 2] + R[2, 1]) / s
            z = 0.25 * s
        return Quaternion(w, x, y, z).normalized()

    def to_rotvec(self) -> np.ndarray:
        """Axis * angle, angle in [0, pi]."""
        q = self if self.w >= 0.0 else Quaternion(-self.w, -self.x, -self.y, -self.z)
        sin_half = math.sqrt(q.x * q.x + q.y * q.y + q.z * q.z)
        if sin_half < 1e-15:
            return np.zeros(3)
        angle = 2.0 * math.atan2(sin_half, q.w)
        return np.array([q.x, q.y, q.z]) * (angle / sin_half)

    def angle(self) -> float:
        """Rotation angle in [0, pi]."""
        sin_half = math.sqrt(self.x**2 + self.y**2 + self.z**2)
        return 2.0 * math.atan2(sin_half, abs(self.w))

    def rotation_equal(self, other: "Quaternion", tol: float = NORM_TOL) -> bool:
        """True if both represent the same rotation (q and -q are equal)."""
        dot = abs(
            self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
        )
        return abs(dot - 1.0) < tol

    def canonical(self) -> "Quaternion":
        """Sign-canonical representative with w >= 0."""
        if self.w < 0.0:
            return Quaternion(-self.w, -self.x, -self.y, -self.z)
        return self

    def slerp(self, other: "Quaternion", alpha: float) -> "Quaternion":
        dot = self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
        q2 = other
        if dot < 0.0:
            q2 = Quaternion(-other.w, -other.x, -other.y, -other.z)
            dot = -dot
        dot = min(dot, 1.0)
        theta = math.acos(dot)
        if theta < 1e-12:
            return Quaternion(
                self.w + alpha * (q2.w - self.w),
                self.x + alpha * (q2.x - self.x),
                self.y + alpha * (q2.y - self.y),
                self.z + alpha * (q2.z - self.z),
            ).normalized()
        s1 = math.sin((1.0 - alpha) * theta) / math.sin(theta)
        s2 = math.sin(alpha * theta) / math.sin(theta)
        return Quaternion(
            s1 * self.w + s2 * q2.w,
            s1 * self.x + s2 * q2.x,
            s1 * self.y + s2 * q2.y,
            s1 * self.z + s2 * q2.z,
        ).normalized()


@dataclass(frozen=True)
class EulerAngles:
    """Intrinsic Z-Y-X angles in radians: yaw about z, then pitch about y, then roll about x."""

    roll: float
    pitch: float
    yaw: float

    def to_quaternion(self) -> Quaternion:
        qz = Quaternion.from_axis_angle((0, 0, 1), self.yaw)
        qy = Quaternion.from_axis_angle((0, 1, 0), self.pitch)
        qx = Quaternion.from_axis_angle((1, 0, 0), self.roll)
        return qz * qy * qx

    @staticmethod
    def from_quaternion(q: Quaternion) -> "EulerAngles":
        w, x, y, z = q.w, q.x, q.y, q.z
        sinp = 2.0 * (w * y - z * x)
        sinp = max(-1.0, min(1.0, sinp))
        pitch = math.asin(sinp)
        roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
        yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
        return EulerAngles(roll, pitch, yaw)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (unit quaternion) + translation in meters.

    As a frame label, Pose T_A_B is "frame B expressed in frame A":
    apply() maps B-frame points to A-frame points.
    """

    rotation: Quaternion = field(default_factory=Quaternion.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_matrix(T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return Pose(Quaternion.from_matrix(T[:3, :3]), T[:3, 3].copy())

    def to_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation.to_matrix()
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        qi = self.rotation.conjugate()
        return Pose(qi, -qi.rotate(self.translation))

    def apply(self, point) -> np.ndarray:
        return self.rotation.rotate(point) + self.translation

    def approx_equal(self, other: "Pose", rot_tol: float = NORM_TOL, trans_tol: float = NORM_TOL) -> bool:
        dq = self.rotation.conjugate() * other.rotation
        return dq.angle() < rot_tol and bool(
            np.all(np.abs(self.translation - other.translation) < trans_tol)
        )


def compose(a: Pose, b: Pose) -> Pose:
    """T_a @ T_b: applies b first, then a."""
    return Pose(a.rotation * b.rotation, a.rotation.rotate(b.translation) + a.translation)


def compose_chain(*poses: Pose) -> Pose:
    out = Pose.identity()
    for p in poses:
        out = compose(out, p)
    return out


def tip_pose_in_camera(T_Cam_H_inv: Pose, T_V_H: Pose, T_V_CB: Pose, T_CB_CT: Pose) -> Pose:
    """Tip pose in the camera frame from the four-term mocap transform chain.

    T_Cam_CT = T_H_Cam^-1 . T_V_H^-1 . T_V_CB . T_CB_CT

    The first argument is the already-inverted hand-eye transform
    (camera-in-headset-constellation, inverted).
    """
    return compose_chain(T_Cam_H_inv, T_V_H.inverse(), T_V_CB, T_CB_CT)


def tip_offset(T_V_CB: Pose, T_V_CT: Pose) -> Pose:
    """Rigid offset from back-constellation frame to tip frame: T_V_CB^-1 . T_V_CT."""
    return compose(T_V_CB.inverse(), T_V_CT)


@dataclass(frozen=True)
class TimedTrajectory:
    """Time-ordered pose samples with nominal rate metadata."""

    times: np.ndarray
    poses: tuple
    rate_hz: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) != len(t):
            raise ValueError("times/poses length mismatch")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    def shifted(self, dt: float) -> "TimedTrajectory":
        return TimedTrajectory(self.times + dt, self.poses, self.rate_hz)


def angular_velocity(traj: TimedTrajectory):
    """Finite-difference body angular velocity per sample.

    Central differences in the interior, one-sided at the endpoints:
    w_i = rotvec(q_{i-1}^-1 q_{i+1}) / (t_{i+1} - t_{i-1}).
    Returns a list of (timestamp, 3-vector rad/s).
    """
    n = len(traj)
    if n < 2:
        raise ValueError("trajectory too short")
    t = traj.times
    qs = [p.rotation for p in traj.poses]
    out = []
    for i in range(n):
        lo = max(0, i - 1)
        hi = min(n - 1, i + 1)
        dq = qs[lo].conjugate() * qs[hi]
        w = dq.to_rotvec() / (t[hi] - t[lo])
        out.append((float(t[i]), w))
    return out


def angular_speed(traj: TimedTrajectory) -> np.ndarray:
    """||omega|| per sample, shape (n,)."""
    return np.array([np.linalg.norm(w) for _, w in angular_velocity(traj)])


def interpolate(traj: TimedTrajectory, t: float) -> Pose:
    """Slerp rotation / lerp translation between the bracketing samples."""
    times = traj.times
    if t < times[0] or t > times[-1]:
        raise ValueError("extrapolation refused")
    idx = int(np.searchsorted(times, t))
    if idx < len(times) and times[idx] == t:
        return traj.poses[idx]
    lo, hi = idx - 1, idx
    alpha = (t - times[lo]) / (times[hi] - times[lo])
    p0, p1 = traj.poses[lo], traj.poses[hi]
    return Pose(
        p0.rotation.slerp(p1.rotation, alpha),
        (1.0 - alpha) * p0.translation + alpha * p1.translation,
    )
