"""Seeded synthetic stimuli: rendered frames with gaze, tabletop clouds, cube clouds.

Used by the ``demo-synthetic`` command and by the test-suite; every generator
takes a ``numpy.random.Generator`` so runs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw
from scipy.spatial import ConvexHull, QhullError

from .core import BBox2D


@dataclass(frozen=True, eq=False)
class SyntheticFrame:
    image: np.ndarray  # (H, W, 3) uint8
    box: BBox2D  # inclusive pixel corners of the gazed object
    gaze: np.ndarray  # (N, 2) pixel coordinates
    decoy: BBox2D | None = None


def _place(rng, width, height, w, h, avoid: BBox2D | None, margin: int = 8):
    for _ in range(200):
        x1 = int(rng.integers(margin, width - w - margin))
        y1 = int(rng.integers(margin, height - h - margin))
        box = BBox2D(x1, y1, x1 + w - 1, y1 + h - 1)
        if avoid is None or (
            box.x1 > avoid.x2 + 2 * margin
            or avoid.x1 > box.x2 + 2 * margin
            or box.y1 > avoid.y2 + 2 * margin
            or avoid.y1 > box.y2 + 2 * margin
        ):
            return box
    raise RuntimeError("could not place object")


def _paint(image, box: BBox2D, color):
    image[int(box.y1) : int(box.y2) + 1, int(box.x1) : int(box.x2) + 1] = color


def render_frame(
    rng: np.random.Generator,
    width: int = 320,
    height: int = 240,
    decoy: bool = False,
    n_gaze: int = 30,
    gaze_sigma: float = 5.0,
    size_range: tuple[int, int] = (40, 80),
    noise: float = 0.0,
) -> SyntheticFrame:
    """Dark background (optionally noisy), one bright rectangle, gaze jittered around its centre."""
    base = rng.uniform(20, 50)
    img = base + rng.normal(0.0, noise, size=(height, width, 3))
    w, h = (int(v) for v in rng.integers(size_range[0], size_range[1] + 1, size=2))
    box = _place(rng, width, height, w, h, None)
    color = rng.uniform(170, 255, size=3)
    color[rng.integers(3)] = rng.uniform(0, 60)  # saturated, so colour channels respond too
    _paint(img, box, color)
    decoy_box = None
    if decoy:
        dw, dh = (int(v) for v in rng.integers(size_range[0], size_range[1] + 1, size=2))
        decoy_box = _place(rng, width, height, dw, dh, box)
        dcolor = rng.uniform(200, 255, size=3)
        dcolor[rng.integers(3)] = rng.uniform(0, 40)
        _paint(img, decoy_box, dcolor)
    cx, cy = (box.x1 + box.x2) / 2, (box.y1 + box.y2) / 2
    gaze = np.column_stack(
        [rng.normal(cx, gaze_sigma, n_gaze), rng.normal(cy, gaze_sigma, n_gaze)]
    )
    gaze = np.clip(gaze, 0, [width - 1, height - 1])
    image = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return SyntheticFrame(image, box, gaze, decoy_box)


@dataclass(frozen=True, eq=False)
class TabletopScene:
    points: np.ndarray  # (N, 3)
    labels: np.ndarray  # (N,) -1 outlier, 0 plane, 1..k blob id
    normal: np.ndarray  # unit plane normal
    offset: float  # plane: normal . p + offset = 0
    blob_centers: np.ndarray  # (k, 3)


def _orthonormal_basis(normal):
    n = normal / np.linalg.norm(normal)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u), n


def tabletop_scene(
    rng: np.random.Generator,
    n_blobs: int | None = None,
    plane_points: int = 2500,
    blob_points: int = 300,
    outlier_fraction: float = 0.3,
    tilt_deg: float = 8.0,
    table_half: float = 0.5,
    blob_radius: float = 0.04,
    hover: float = 0.03,
    plane_noise: float = 0.002,
) -> TabletopScene:
    """Plane through the origin (slightly tilted), separated spherical blobs, uniform outliers.

    Blobs sit ``hover`` above the plane surface so plane-inlier removal cannot
    eat object points; ``outlier_fraction`` is relative to the final cloud size.
    """
    if n_blobs is None:
        n_blobs = int(rng.integers(2, 5))
    axis = rng.normal(size=3)
    axis[2] = 0
    axis /= np.linalg.norm(axis)
    tilt = np.deg2rad(rng.uniform(0, tilt_deg))
    normal = np.cos(tilt) * np.array([0.0, 0.0, 1.0]) + np.sin(tilt) * axis
    normal /= np.linalg.norm(normal)
    u, v, n = _orthonormal_basis(normal)

    ab = rng.uniform(-table_half, table_half, size=(plane_points, 2))
    plane = ab[:, :1] * u + ab[:, 1:] * v + rng.normal(0, plane_noise, size=(plane_points, 1)) * n

    centers = []
    min_sep = 6 * blob_radius
    while len(centers) < n_blobs:
        c2 = rng.uniform(-table_half + 2 * blob_radius, table_half - 2 * blob_radius, size=2)
        if all(np.linalg.norm(c2 - c) >= min_sep for c in centers):
            centers.append(c2)
    blob_c = np.array([c[0] * u + c[1] * v + (blob_radius + hover) * n for c in centers])
    blobs, labels = [], []
    for i, c in enumerate(blob_c):
        d = rng.normal(size=(blob_points, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = blob_radius * rng.uniform(0, 1, size=(blob_points, 1)) ** (1 / 3)
        blobs.append(c + d * r)
        labels.append(np.full(blob_points, i + 1))

    inliers = plane_points + n_blobs * blob_points
    n_out = int(round(outlier_fraction / (1 - outlier_fraction) * inliers))
    ab = rng.uniform(-table_half, table_half, size=(n_out, 2))
    h = rng.uniform(0.02, 0.4, size=(n_out, 1))
    outliers = ab[:, :1] * u + ab[:, 1:] * v + h * n

    points = np.vstack([plane] + blobs + [outliers])
    lab = np.concatenate([np.zeros(plane_points, int)] + labels + [np.full(n_out, -1)])
    return TabletopScene(points, lab, normal, 0.0, blob_c)


def cube_cloud(center=(0.0, 0.0, 0.0), size: float = 0.1, per_edge: int = 6) -> np.ndarray:
    """Points on the surface of an axis-aligned cube."""
    g = np.linspace(-size / 2, size / 2, per_edge)
    pts = np.array([(x, y, z) for x in g for y in g for z in g])
    on_surface = np.any(np.isclose(np.abs(pts), size / 2), axis=1)
    return pts[on_surface] + np.asarray(center, dtype=float)


def render_view(uv_inside, cam_width: int, cam_height: int, color=(230, 40, 40), background: int = 30):
    """Paint the convex hull of projected points as a flat silhouette.

    ``uv_inside`` is the (N, 2) array of in-frame projections. Returns the
    image and the silhouette's tight box.
    """
    img = Image.new("RGB", (cam_width, cam_height), (background,) * 3)
    uv = np.asarray(uv_inside, dtype=float).reshape(-1, 2)
    try:
        hull = uv[ConvexHull(uv).vertices]
    except (QhullError, ValueError):
        hull = uv
    ImageDraw.Draw(img).polygon([tuple(p) for p in hull], fill=tuple(int(c) for c in color))
    arr = np.asarray(img).copy()
    fg = np.any(arr != background, axis=2)
    rows, cols = np.flatnonzero(fg.any(axis=1)), np.flatnonzero(fg.any(axis=0))
    box = BBox2D(float(cols[0]), float(rows[0]), float(cols[-1]), float(rows[-1])) if len(rows) else None
    return arr, box
