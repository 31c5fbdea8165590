"""Equidistant fisheye camera model and calibrated stereo rig.

Projection follows r = f * theta with an optional odd-order distortion
polynomial theta_d = theta * (1 + k1 th^2 + k2 th^4 + ...). Pixel axes:
u right, v down; the optical axis is +z.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose, Quaternion


@dataclass(frozen=True)
class FisheyeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    max_theta: float = math.pi / 2
    distortion: tuple = ()

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0.0 < self.max_theta <= math.pi):
            raise ValueError("max_theta must be in (0, pi]")
        object.__setattr__(self, "distortion", tuple(float(k) for k in self.distortion))

    def _distort(self, theta: float) -> float:
        if not self.distortion:
            return theta
        t2 = theta * theta
        poly = 1.0
        p = t2
        for k in self.distortion:
            poly += k * p
            p *= t2
        return theta * poly

    def _undistort(self, theta_d: float) -> float:
        if not self.distortion:
            return theta_d
        theta = theta_d
        for _ in range(20):  # Newton; the polynomial is gentle inside the FOV
            t2 = theta * theta
            f = theta
            df = 1.0
            p = t2
            for i, k in enumerate(self.distortion):
                f += k * theta * p
                df += (2 * i + 3) * k * p
                p *= t2
            step = (f - theta_d) / df
            theta -= step
            if abs(step) < 1e-14:
                break
        return theta

    def project(self, point) -> tuple:
        """3D point in camera frame -> (u, v) pixels."""
        x, y, z = float(point[0]), float(point[1]), float(point[2])
        n = math.sqrt(x * x + y * y + z * z)
        if n < 1e-9:
            raise ValueError("degenerate point")
        r_xy = math.sqrt(x * x + y * y)
        theta = math.atan2(r_xy, z)
        if theta > self.max_theta:
            raise ValueError("outside field of view")
        r = self._distort(theta)
        if r_xy < 1e-15:
            return (self.cx, self.cy)
        return (self.cx + self.fx * r * (x / r_xy), self.cy + self.fy * r * (y / r_xy))

    def unproject(self, u: float, v: float) -> np.ndarray:
        """(u, v) pixels -> unit ray in camera frame."""
        a = (u - self.cx) / self.fx
        b = (v - self.cy) / self.fy
        theta_d = math.sqrt(a * a + b * b)
        theta = self._undistort(theta_d)
        if theta > self.max_theta:
            raise ValueError("outside field of view")
        if theta_d < 1e-15:
            return np.array([0.0, 0.0, 1.0])
        s = math.sin(theta) / theta_d
        return np.array([a * s, b * s, math.cos(theta)])

    def contains(self, u: float, v: float) -> bool:
        return 0.0 <= u <= self.width and 0.0 <= v <= self.height


def scale_intrinsics(cam: FisheyeCamera, factor: float) -> FisheyeCamera:
    """Rescale for a resized image; angles (and thus rays) are unchanged."""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    return replace(
        cam,
        fx=cam.fx * factor,
        fy=cam.fy * factor,
        cx=cam.cx * factor,
        cy=cam.cy * factor,
        width=int(round(cam.width * factor)),
        height=int(round(cam.height * factor)),
    )


@dataclass(frozen=True)
class StereoRig:
    left: FisheyeCamera
    right: FisheyeCamera
    T_left_right: Pose  # right camera expressed in the left camera frame

    def __post_init__(self):
        if np.linalg.norm(self.T_left_right.translation) <= 0:
            raise ValueError("stereo baseline must be nonzero")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.T_left_right.translation))


def triangulate(rig: StereoRig, uv_left, uv_right):
    """Midpoint of the common perpendicular between the two pixel rays.

    Returns (point_in_left_frame, gap) where gap is the closest-approach
    distance between the rays, a triangulation quality signal.
    """
    d1 = rig.left.unproject(*uv_left)
    ray_r = rig.right.unproject(*uv_right)
    d2 = rig.T_left_right.rotation.rotate(ray_r)
    o2 = rig.T_left_right.translation

    cross = np.cross(d1, d2)
    denom = float(np.dot(cross, cross))
    if math.sqrt(denom) < 1e-6:
        raise ValueError("ill-conditioned triangulation")
    # closest points: o1 + s*d1 and o2 + t*d2
    s = float(np.dot(np.cross(o2, d2), cross)) / denom
    t = float(np.dot(np.cross(o2, d1), cross)) / denom
    p1 = s * d1
    p2 = o2 + t * d2
    gap = float(np.linalg.norm(p1 - p2))
    return 0.5 * (p1 + p2), gap


def default_rig() -> StereoRig:
    """Synthetic desk-scale rig: 640x480 equidistant pair, 64 mm baseline, parallel axes."""
    cam = FisheyeCamera(fx=160.0, fy=160.0, cx=320.0, cy=240.0, width=640, height=480)
    return StereoRig(cam, cam, Pose(Quaternion.identity(), np.array([0.064, 0.0, 0.0])))


def _cam_to_dict(cam: FisheyeCamera) -> dict:
    return {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "max_theta": cam.max_theta,
        "distortion": list(cam.distortion),
    }


def _cam_from_dict(d: dict) -> FisheyeCamera:
    return FisheyeCamera(
        fx=d["fx"],
        fy=d["fy"],
        cx=d["cx"],
        cy=d["cy"],
        width=d["width"],
        height=d["height"],
        max_theta=d.get("max_theta", math.pi / 2),
        distortion=tuple(d.get("distortion", ())),
    )


def rig_to_json(rig: StereoRig) -> str:
    q = rig.T_left_right.rotation
    obj = {
        "left": _cam_to_dict(rig.left),
        "right": _cam_to_dict(rig.right),
        "t_left_right": {
            "quaternion": [q.w, q.x, q.y, q.z],
            "translation_m": [float(v) for v in rig.T_left_right.translation],
        },
    }
    return json.dumps(obj, indent=2, sort_keys=True)


def rig_from_json(text: str) -> StereoRig:
    obj = json.loads(text)
    ext = obj["t_left_right"]
    w, x, y, z = ext["quaternion"]
    return StereoRig(
        _cam_from_dict(obj["left"]),
        _cam_from_dict(obj["right"]),
        Pose(Quaternion(w, x, y, z).normalized(), np.array(ext["translation_m"], dtype=float)),
    )
