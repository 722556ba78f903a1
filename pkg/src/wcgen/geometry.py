"""Pinhole camera model, rigid transforms, and the projective primitives.

Conventions used everywhere in this package:

* Camera frame: x right, y down, z forward (standard computer vision).
* World frame: z up, right handed. Zero heading faces world +y and
  headings increase clockwise when seen from above.
* Pixel coordinates are continuous, with integer coordinates at pixel
  centers; (0, 0) is the center of the top-left pixel.
* Depth is the camera-frame z coordinate in meters (planar depth, not
  ray length).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import BehindCameraError, InvalidArgumentError

__all__ = [
    "Intrinsics",
    "Pose",
    "RelativePose",
    "Convention",
    "PixelCoord",
    "ImageBuffer",
    "DepthMap",
    "intrinsics_from_fov",
    "unproject",
    "project",
    "camera_to_world",
    "apply_relative",
    "pixel_to_sphere",
    "rotate_direction",
    "yaw_matrix",
    "pitch_matrix",
    "check_rotation",
]

_ROTATION_ATOL = 1e-8


def check_rotation(value, name: str = "rotation", atol: float = _ROTATION_ATOL) -> np.ndarray:
    """Return ``value`` as a float64 array after checking it is a proper rotation."""
    r = np.asarray(value, dtype=np.float64)
    if r.shape != (3, 3):
        raise InvalidArgumentError(f"{name} must be 3x3, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    if not np.allclose(r.T @ r, np.eye(3), atol=atol):
        raise InvalidArgumentError(f"{name} is not orthonormal")
    if abs(float(np.linalg.det(r)) - 1.0) > max(atol, 1e-9):
        raise InvalidArgumentError(f"{name} determinant is not +1")
    return r


def yaw_matrix(degrees: float) -> np.ndarray:
    """Rotation about the camera's vertical axis.

    Positive angles turn the view clockwise seen from above: the forward
    axis (0, 0, 1) maps to (sin a, 0, cos a).
    """
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], dtype=np.float64)


def pitch_matrix(degrees: float) -> np.ndarray:
    """Rotation about the camera's right axis.

    Positive angles tilt the view upward: the forward axis (0, 0, 1)
    maps to (0, -sin a, cos a) since camera y points down.
    """
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]], dtype=np.float64)


class PixelCoord(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgumentError("image dimensions must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ],
            dtype=np.float64,
        )


def intrinsics_from_fov(width: int, height: int, vertical_fov_deg: float) -> Intrinsics:
    """Square-pixel intrinsics with a centered principal point."""
    if not (0.0 < vertical_fov_deg < 180.0):
        raise InvalidArgumentError(f"vertical fov must be in (0, 180), got {vertical_fov_deg}")
    if width <= 0 or height <= 0:
        raise InvalidArgumentError("image dimensions must be positive")
    fy = (height / 2.0) / math.tan(math.radians(vertical_fov_deg) / 2.0)
    return Intrinsics(fx=fy, fy=fy, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid camera-to-world transform: p_world = rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation, "Pose.rotation", atol=1e-9))
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise InvalidArgumentError("Pose.translation must be a finite 3-vector")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def transform(self, p) -> np.ndarray:
        return self.rotation @ np.asarray(p, dtype=np.float64) + self.translation


class Convention(str, Enum):
    """How a RelativePose combines its rotation and translation.

    ROTATE_AFTER_TRANSLATE applies p' = R @ (p + T); ROTATE_THEN_ADD is
    the canonical p' = R @ p + t. The two describe the same transform
    when t = R @ T.
    """

    ROTATE_AFTER_TRANSLATE = "rotate-after-translate"
    ROTATE_THEN_ADD = "rotate-then-add"


@dataclass(frozen=True, eq=False)
class RelativePose:
    """Rigid transform taking points of a source camera frame into a target frame."""

    rotation: np.ndarray
    translation: np.ndarray
    convention: Convention = Convention.ROTATE_THEN_ADD

    def __post_init__(self):
        object.__setattr__(
            self, "rotation", check_rotation(self.rotation, "RelativePose.rotation", atol=1e-9)
        )
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise InvalidArgumentError("RelativePose.translation must be a finite 3-vector")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "convention", Convention(self.convention))

    @classmethod
    def identity(cls) -> "RelativePose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_poses(cls, source: Pose, target: Pose) -> "RelativePose":
        """Relative transform between two camera-to-world poses (canonical form)."""
        r = target.rotation.T @ source.rotation
        t = target.rotation.T @ (source.translation - target.translation)
        return cls(r, t, Convention.ROTATE_THEN_ADD)

    def canonical(self) -> "RelativePose":
        """Equivalent transform expressed in the rotate-then-add convention."""
        if self.convention is Convention.ROTATE_THEN_ADD:
            return self
        return RelativePose(self.rotation, self.rotation @ self.translation, Convention.ROTATE_THEN_ADD)

    def is_identity(self, atol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.rotation, np.eye(3), atol=atol)
            and np.allclose(self.translation, 0.0, atol=atol)
        )


def unproject(p, depth: float, k: Intrinsics) -> np.ndarray:
    """Lift a pixel with known depth to a camera-frame 3D point (z equals depth)."""
    d = float(depth)
    if not (math.isfinite(d) and d > 0):
        raise InvalidArgumentError(f"depth must be finite and positive, got {depth}")
    u, v = float(p[0]), float(p[1])
    return np.array([(u - k.cx) / k.fx * d, (v - k.cy) / k.fy * d, d], dtype=np.float64)


def project(p, k: Intrinsics) -> tuple[PixelCoord, float]:
    """Project a camera-frame point onto the image plane.

    Raises BehindCameraError for z <= 0; batched callers drop such points
    instead of raising.
    """
    x, y, z = (float(c) for c in np.asarray(p, dtype=np.float64))
    if z <= 0:
        raise BehindCameraError(f"point has non-positive depth z={z}")
    return PixelCoord(k.fx * x / z + k.cx, k.fy * y / z + k.cy), z


def camera_to_world(p, pose: Pose) -> np.ndarray:
    """Map a camera-frame point into the world frame."""
    return pose.transform(p)


def apply_relative(p_w, rel: RelativePose) -> np.ndarray:
    """Carry a point into the new camera frame, honoring the pose convention."""
    p = np.asarray(p_w, dtype=np.float64)
    if rel.convention is Convention.ROTATE_AFTER_TRANSLATE:
        return rel.rotation @ (p + rel.translation)
    return rel.rotation @ p + rel.translation


def pixel_to_sphere(p, k: Intrinsics) -> np.ndarray:
    """Unit-sphere direction of a pixel's viewing ray."""
    u, v = float(p[0]), float(p[1])
    d = np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0], dtype=np.float64)
    return d / np.linalg.norm(d)


def rotate_direction(d, r_view, r_extrinsic) -> np.ndarray:
    """Rotate a ray direction by the view rotation composed with an extrinsic rotation."""
    rv = check_rotation(r_view, "r_view")
    re = check_rotation(r_extrinsic, "r_extrinsic")
    return rv @ (re @ np.asarray(d, dtype=np.float64))


@dataclass(eq=False)
class ImageBuffer:
    """RGB raster with float32 channel values in [0, 1], shape (H, W, 3)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or v.shape[2] != 3:
            raise InvalidArgumentError(f"image values must have shape (H, W, 3), got {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidArgumentError("image must have at least one pixel")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("image values must be finite")
        if float(v.min(initial=0.0)) < 0.0 or float(v.max(initial=0.0)) > 1.0:
            raise InvalidArgumentError("image values must lie in [0, 1]")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def constant(cls, width: int, height: int, color=(0.0, 0.0, 0.0)) -> "ImageBuffer":
        v = np.empty((height, width, 3), dtype=np.float32)
        v[:] = np.asarray(color, dtype=np.float32)
        return cls(v)

    @classmethod
    def from_array(cls, values, clip: bool = False) -> "ImageBuffer":
        v = np.asarray(values, dtype=np.float32)
        if clip:
            v = np.clip(v, 0.0, 1.0)
        return cls(v)

    def quantized(self) -> "ImageBuffer":
        """Snap channel values onto the 8-bit grid (round(v*255)/255)."""
        q = np.round(self.values.astype(np.float64) * 255.0) / 255.0
        return ImageBuffer(q.astype(np.float32))


@dataclass(eq=False)
class DepthMap:
    """Per-pixel metric depth in meters with a validity mask.

    Invalid pixels carry no depth semantics; valid pixels are finite and
    strictly positive.
    """

    values: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        m = np.asarray(self.validity, dtype=bool)
        if v.ndim != 2:
            raise InvalidArgumentError(f"depth values must have shape (H, W), got {v.shape}")
        if m.shape != v.shape:
            raise InvalidArgumentError("depth validity mask must match depth shape")
        sel = v[m]
        if sel.size and (not np.all(np.isfinite(sel)) or float(sel.min()) <= 0.0):
            raise InvalidArgumentError("valid depths must be finite and positive")
        self.values = v
        self.validity = m

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def constant(cls, width: int, height: int, depth: float) -> "DepthMap":
        return cls(np.full((height, width), depth, dtype=np.float32), np.ones((height, width), bool))

    @classmethod
    def from_values(cls, values) -> "DepthMap":
        """All pixels valid."""
        v = np.asarray(values, dtype=np.float32)
        return cls(v, np.ones_like(v, dtype=bool))
