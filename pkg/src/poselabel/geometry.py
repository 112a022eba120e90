"""Rigid transforms, pinhole cameras, and depth-image backprojection.

Conventions used throughout the package:

* Rotations are 3x3 orthonormal matrices with det +1. On disk they are
  serialized as unit quaternions (qw, qx, qy, qz), sign-canonicalized so
  the first nonzero component is positive.
* ``RigidTransform`` maps a point p to ``rotation @ p + translation``.
  There are no 4x4 homogeneous matrices in the public data model.
* Camera extrinsics map CAMERA-frame points into the WORLD frame.  The
  camera frame is the usual computer-vision one: x right, y down,
  z forward along the optical axis.
* Depth is meters along camera z. Depths that are zero, negative, or
  non-finite mark missing pixels (covers both common sensor encodings).

Everything here is a pure function over immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud


class InvalidDepthError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) element: 3x3 rotation (dimensionless) + translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if np.linalg.norm(rot.T @ rot - np.eye(3)) > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("rotation determinant must be +1 within 1e-9")
        rot.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @property
    def quat(self) -> np.ndarray:
        """Unit quaternion (qw, qx, qy, qz), sign-canonicalized."""
        return matrix_to_quat(self.rotation)


def identity() -> RigidTransform:
    return RigidTransform(np.eye(3), np.zeros(3))


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix onto SO(3) (closest in Frobenius norm)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying b first, then a."""
    rot = a.rotation @ b.rotation
    if np.linalg.norm(rot.T @ rot - np.eye(3)) > 1e-12:
        rot = nearest_rotation(rot)
    return RigidTransform(rot, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


def apply(t: RigidTransform, p) -> np.ndarray:
    """Apply to a single 3-vector or an (N, 3) batch."""
    pts = np.asarray(p, dtype=np.float64)
    if pts.ndim == 1:
        return t.rotation @ pts + t.translation
    return pts @ t.rotation.T + t.translation


def rotation_geodesic(a: RigidTransform, b: RigidTransform) -> float:
    """Angle in [0, pi] between the two rotations: arccos((trace(RaT Rb)-1)/2).

    Small angles are evaluated through ||RaT Rb - I||_F = 2*sqrt(2)*sin(angle/2),
    which resolves angles far below the ~1e-8 granularity of arccos near 1.
    """
    m = a.rotation.T @ b.rotation
    c = (np.trace(m) - 1.0) / 2.0
    if c > 0.5:
        s = np.linalg.norm(m - np.eye(3)) / (2.0 * math.sqrt(2.0))
        return float(2.0 * math.asin(min(1.0, s)))
    return float(math.acos(min(1.0, max(-1.0, c))))


def rotation_about_axis(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
    """Rodrigues rotation by `angle` radians about `axis` (need not be unit)."""
    ax = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(ax)
    if norm == 0:
        raise ValueError("axis must be nonzero")
    x, y, z = ax / norm
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    rot = np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)
    return RigidTransform(nearest_rotation(rot), np.asarray(translation, dtype=np.float64))


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(rot: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w, x, y, z), first nonzero positive."""
    m = np.asarray(rot, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    q /= np.linalg.norm(q)
    for comp in q:
        if comp != 0:
            if comp < 0:
                q = -q
            break
    return q


def transform_from_quat(q, translation) -> RigidTransform:
    return RigidTransform(nearest_rotation(quat_to_matrix(q)), translation)


def random_rotation(rng: np.random.Generator) -> RigidTransform:
    """Uniform random rotation from a random unit quaternion."""
    q = rng.normal(size=4)
    return transform_from_quat(q, np.zeros(3))


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole intrinsics plus a camera->world extrinsic.

    `depth_scale` is the meters-per-unit factor of 16-bit PNG depth files
    recorded with this camera (1.0 when depth is stored in meters).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: RigidTransform = field(default_factory=identity)
    depth_scale: float = 1.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be > 0, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )


@dataclass(frozen=True, eq=False)
class DepthImage:
    """One RGB-D view: depth in meters (<=0 or non-finite = missing), RGB in [0,1]."""

    depth: np.ndarray
    color: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        c = np.asarray(self.color, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"depth must be HxW, got shape {d.shape}")
        if c.shape != d.shape + (3,):
            raise ValueError(f"color must be HxWx3 matching depth, got {c.shape}")
        d.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "color", c)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0)


def backproject_pixel(cam: CameraModel, u: float, v: float, d: float) -> np.ndarray:
    """Lift pixel (u, v) at depth d through the inverse intrinsics and the
    extrinsic into a world-frame point: extrinsic applied to
    (d*(u-cx)/fx, d*(v-cy)/fy, d)."""
    if not math.isfinite(d) or d <= 0:
        raise InvalidDepthError(f"depth must be finite and > 0, got {d}")
    if not (0 <= u < cam.width and 0 <= v < cam.height):
        raise ValueError(f"pixel ({u}, {v}) outside {cam.width}x{cam.height} image")
    p_cam = np.array([d * (u - cam.cx) / cam.fx, d * (v - cam.cy) / cam.fy, d])
    return apply(cam.extrinsic, p_cam)


def project_points(cam: CameraModel, points_world) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World points -> (u, v, depth) through the inverse extrinsic and intrinsics.

    Returns real-valued pixel coordinates; callers decide on bounds/visibility.
    """
    p = apply(invert(cam.extrinsic), points_world)
    p = np.atleast_2d(p)
    z = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * p[:, 0] / z + cam.cx
        v = cam.fy * p[:, 1] / z + cam.cy
    return u, v, z


def backproject_frame(cam: CameraModel, img: DepthImage, stride: int = 1) -> PointCloud:
    """One world-frame point per valid-depth pixel, sampled every `stride`
    pixels in each axis, carrying the pixel's RGB. Points come out in
    row-major pixel order."""
    if img.width != cam.width or img.height != cam.height:
        raise DimensionMismatchError(
            f"image is {img.width}x{img.height} but camera expects {cam.width}x{cam.height}"
        )
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    depth = img.depth[::stride, ::stride]
    color = img.color[::stride, ::stride]
    vs, us = np.mgrid[0 : img.height : stride, 0 : img.width : stride]
    valid = np.isfinite(depth) & (depth > 0)
    d = depth[valid]
    u = us[valid].astype(np.float64)
    v = vs[valid].astype(np.float64)
    p_cam = np.stack([d * (u - cam.cx) / cam.fx, d * (v - cam.cy) / cam.fy, d], axis=1)
    return PointCloud(apply(cam.extrinsic, p_cam), color[valid])
