"""Geometry and imaging primitives shared by every other module."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BehindCamera, FrameMismatch

QUAT_TOL = 1e-9


@dataclass(frozen=True)
class GazeSample:
    """A timestamped gaze point, 2D pixel or 3D world coordinates."""

    t: float
    pos: tuple[float, ...]
    frame_id: str = ""

    def __post_init__(self):
        if not math.isfinite(self.t) or self.t < 0:
            raise ValueError(f"gaze timestamp must be finite and >= 0, got {self.t}")
        pos = tuple(float(v) for v in self.pos)
        if len(pos) not in (2, 3) or not all(math.isfinite(v) for v in pos):
            raise ValueError(f"gaze position must be 2 or 3 finite values, got {self.pos}")
        object.__setattr__(self, "pos", pos)


@dataclass(frozen=True)
class BBox2D:
    """Axis-aligned box with inclusive real-valued corners."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"box corners must be finite: {vals}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"box corners out of order: {vals}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, x: float, y: float) -> bool:
        return self.x1 <= x <= self.x2 and self.y1 <= y <= self.y2

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "BBox2D":
        return cls(x, y, x + w, y + h)


@dataclass(frozen=True)
class BBox3D:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    frame_id: str = ""

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("BBox3D needs 3-vectors")
        if not all(math.isfinite(v) for v in center + size):
            raise ValueError("BBox3D values must be finite")
        if any(s <= 0 for s in size):
            raise ValueError(f"BBox3D size components must be > 0, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)

    @property
    def min_corner(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.size) / 2

    @property
    def max_corner(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.size) / 2

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    @classmethod
    def from_points(cls, points, frame_id: str = "", min_size: float = 1e-6) -> "BBox3D":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        size = np.maximum(hi - lo, min_size)
        return cls(tuple((lo + hi) / 2), tuple(size), frame_id)


# -- quaternions (w, x, y, z), Hamilton convention -------------------------


def quat_multiply(a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: Sequence[float]) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    """Rotation matrix to unit quaternion (Shepperd's method), w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) pose. ``apply`` maps points from the source frame into the target frame."""

    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        t = tuple(float(v) for v in self.translation)
        q = tuple(float(v) for v in self.rotation)
        if len(t) != 3 or len(q) != 4:
            raise ValueError("translation needs 3 values, rotation 4 (w, x, y, z)")
        if not all(math.isfinite(v) for v in t + q):
            raise ValueError("transform values must be finite")
        if abs(math.sqrt(sum(v * v for v in q)) - 1.0) > QUAT_TOL:
            raise ValueError(f"rotation quaternion is not unit length: {q}")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(tuple(m[:3, 3]), tuple(matrix_to_quat(m[:3, :3])))

    @classmethod
    def from_rotation_matrix(cls, R, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(tuple(translation), tuple(matrix_to_quat(R)))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform one point or an (N, 3) array.

        Evaluated as explicit per-component sums rather than a BLAS product,
        so each point's result is bit-identical whatever the batch size.
        """
        pts = np.asarray(points, dtype=float)
        R = self.rotation_matrix
        return (
            pts[..., 0:1] * R[:, 0] + pts[..., 1:2] * R[:, 1] + pts[..., 2:3] * R[:, 2]
        ) + np.asarray(self.translation)

    def inverse(self) -> "RigidTransform":
        w, x, y, z = self.rotation
        q_inv = (w, -x, -y, -z)
        t = -quat_to_matrix(q_inv) @ np.asarray(self.translation)
        return RigidTransform(tuple(t), q_inv)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return ``a ∘ b``: the transform that applies ``b`` first, then ``a``."""
    q = quat_multiply(a.rotation, b.rotation)
    q = q / np.linalg.norm(q)
    t = a.rotation_matrix @ np.asarray(b.translation) + np.asarray(a.translation)
    return RigidTransform(tuple(t), tuple(q))


def invert(a: RigidTransform) -> RigidTransform:
    return a.inverse()


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, p_cam) -> tuple[float, float]:
        return project(self, p_cam)

    def project_many(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised projection. Returns ``(uv, valid)``; rows with z <= 0 are invalid and NaN."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        valid = pts[:, 2] > 0
        uv = np.full((len(pts), 2), np.nan)
        z = pts[valid, 2]
        uv[valid, 0] = self.fx * pts[valid, 0] / z + self.cx
        uv[valid, 1] = self.fy * pts[valid, 1] / z + self.cy
        return uv, valid

    def back_project(self, u: float, v: float, z: float) -> np.ndarray:
        return np.array([(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z])

    def in_frame(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        with np.errstate(invalid="ignore"):
            return (uv[:, 0] >= 0) & (uv[:, 0] <= self.width - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= self.height - 1)


def project(cam: PinholeCamera, p_cam) -> tuple[float, float]:
    x, y, z = (float(v) for v in p_cam)
    if z <= 0:
        raise BehindCamera(f"point has z = {z} <= 0")
    return (cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy)


@dataclass(frozen=True, eq=False)
class Raster:
    """Row-major image samples stored as an (height, width, channels) array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"raster needs 2 or 3 dimensions, got shape {arr.shape}")
        if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
            raise ValueError("raster values must be finite")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def as_array(image) -> np.ndarray:
    """Unwrap a :class:`Raster` (or pass an array through), dropping a singleton channel axis."""
    arr = image.data if isinstance(image, Raster) else np.asarray(image)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    frame_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def iou2d(a: BBox2D, b: BBox2D) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0:
        # both boxes are degenerate (zero area)
        return 1.0 if a == b else 0.0
    return inter / union


def iou3d(a: BBox3D, b: BBox3D) -> float:
    if a.frame_id != b.frame_id:
        raise FrameMismatch(f"{a.frame_id!r} != {b.frame_id!r}")
    lo = np.maximum(a.min_corner, b.min_corner)
    hi = np.minimum(a.max_corner, b.max_corner)
    inter = float(np.prod(np.clip(hi - lo, 0.0, None)))
    union = a.volume + b.volume - inter
    return inter / union


def iou2d_matrix(boxes_a: Sequence[BBox2D], boxes_b: Sequence[BBox2D]) -> np.ndarray:
    """Pairwise IoU, same arithmetic as :func:`iou2d`."""
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou2d(a, b)
    return out


__all__ = [
    "GazeSample",
    "BBox2D",
    "BBox3D",
    "RigidTransform",
    "PinholeCamera",
    "Raster",
    "PointCloud",
    "compose",
    "invert",
    "project",
    "iou2d",
    "iou3d",
    "iou2d_matrix",
    "as_array",
    "quat_multiply",
    "quat_to_matrix",
    "matrix_to_quat",
]
