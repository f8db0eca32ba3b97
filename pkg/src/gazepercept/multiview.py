"""Multiperspective auto-labelling.

Camera frames follow the optical convention: +z along the viewing ray, +x to
the image right, +y towards the image bottom. ``Viewpoint.pose`` maps camera
coordinates into the world. Stored extrinsics are camera<-object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import BBox2D, BBox3D, PinholeCamera, PointCloud, RigidTransform, compose
from .errors import DegenerateBox, GazePerceptError, TooFewGazePoints, TooFewProjected
from .gbvs import GbvsParams, saliency
from .ingest import save_omd_view
from .roi import extract_roi

ELEVATION_DEG = 45.0
MIN_DIST = 0.5
M_MIN = 10
GAZE_BOX_EPS = 0.01
WORLD_UP = (0.0, 0.0, 1.0)
FALLBACK_UP = (1.0, 0.0, 0.0)
MODES = ("cloud-project", "gaze-saliency")


@dataclass(frozen=True)
class Viewpoint:
    pose: RigidTransform  # world <- camera
    target: tuple[float, float, float]

    @property
    def position(self) -> np.ndarray:
        return np.asarray(self.pose.translation)

    @property
    def optical_axis(self) -> np.ndarray:
        return self.pose.rotation_matrix[:, 2]


@dataclass(frozen=True)
class LabeledView:
    view: Viewpoint
    roi: BBox2D
    n_projected: int  # points landing inside the frame


def calibrate_extrinsics(hTmb: RigidTransform, hTmc: RigidTransform, mbTb: RigidTransform, mcTc: RigidTransform) -> RigidTransform:
    """Robot base -> camera: ``(mbTb)^-1 (hTmb)^-1 hTmc mcTc``.

    ``h`` is the headset world, ``mb``/``mc`` the markers on the base and the
    camera.
    """
    return compose(compose(mbTb.inverse(), hTmb.inverse()), compose(hTmc, mcTc))


def look_at(eye, target, up=WORLD_UP) -> RigidTransform:
    """world <- camera pose at ``eye`` whose +z axis points at ``target``.

    The image "up" follows ``up``; when the ray is parallel to it the world +x
    axis is used instead.
    """
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    dist = np.linalg.norm(z)
    if dist == 0:
        raise ValueError("eye and target coincide")
    z /= dist
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, FALLBACK_UP)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return RigidTransform.from_rotation_matrix(np.column_stack([x, y, z]), tuple(eye))


def circular_path(
    box: BBox3D,
    n_waypoints: int,
    min_dist: float = MIN_DIST,
    reachable: Callable[[Viewpoint], bool] | None = None,
    elevation_deg: float = ELEVATION_DEG,
) -> list[Viewpoint]:
    """Equiangular waypoints on a circle 45 degrees above the box centre.

    Distance to the centre is ``max(2 * |size|, min_dist)``; azimuths start
    at 0 on the world +x axis. ``reachable`` filters waypoints (all kept by
    default).
    """
    if n_waypoints < 1:
        raise ValueError("n_waypoints must be >= 1")
    dist = max(2 * float(np.linalg.norm(box.size)), min_dist)
    if not dist > 1e-9:
        raise DegenerateBox(f"box {box.size} with min_dist {min_dist} gives no viewing distance")
    c = np.asarray(box.center)
    el = math.radians(elevation_deg)
    out = []
    for k in range(n_waypoints):
        az = 2 * math.pi * k / n_waypoints
        eye = c + dist * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        vp = Viewpoint(look_at(eye, c), tuple(float(v) for v in c))
        if reachable is None or reachable(vp):
            out.append(vp)
    return out


def project_points(points, view: Viewpoint, cam: PinholeCamera) -> tuple[np.ndarray, np.ndarray]:
    """World points -> pixel coordinates. Returns ``(uv, in_frame)``; points behind the camera are out."""
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=float).reshape(-1, 3)
    p_cam = view.pose.inverse().apply(pts)
    uv, valid = cam.project_many(p_cam)
    inside = np.zeros(len(pts), dtype=bool)
    inside[valid] = cam.in_frame(uv[valid])
    return uv, inside


def label_view(points, view: Viewpoint, cam: PinholeCamera, m_min: int = M_MIN) -> LabeledView:
    """ROI = min/max of the in-frame projections of ``points``."""
    uv, inside = project_points(points, view, cam)
    n = int(inside.sum())
    if n < m_min:
        raise TooFewProjected(f"{n} points project into the frame, need {m_min}")
    p = uv[inside]
    lo, hi = p.min(axis=0), p.max(axis=0)
    roi = BBox2D(
        max(0.0, float(lo[0])),
        max(0.0, float(lo[1])),
        min(cam.width - 1.0, float(hi[0])),
        min(cam.height - 1.0, float(hi[1])),
    )
    return LabeledView(view, roi, n)


def gaze_box_3d(gaze, eps: float = GAZE_BOX_EPS, frame_id: str = "") -> BBox3D:
    """Median centre and 3 x IQR size per axis (floored at ``eps``)."""
    g = np.asarray(gaze, dtype=float).reshape(-1, 3)
    if len(g) < 4:
        raise TooFewGazePoints(f"need at least 4 gaze points, got {len(g)}")
    q1, med, q3 = np.quantile(g, [0.25, 0.5, 0.75], axis=0, method="linear")
    size = np.maximum(3 * (q3 - q1), eps)
    return BBox3D(tuple(med), tuple(size), frame_id)


@dataclass
class LabelRun:
    views: list[LabeledView | None]  # aligned with the input path, None where labelling failed
    errors: dict[int, str] = field(default_factory=dict)

    @property
    def labeled(self) -> list[tuple[int, LabeledView]]:
        return [(i, v) for i, v in enumerate(self.views) if v is not None]


def _gaze_saliency_view(gaze, view, cam, image, params: GbvsParams, m_min: int) -> LabeledView:
    uv, inside = project_points(gaze, view, cam)
    n = int(inside.sum())
    if n < m_min:
        raise TooFewProjected(f"{n} gaze points project into the frame, need {m_min}")
    field_ = saliency(image, uv[inside], params)
    box, _ = extract_roi(field_)
    return LabeledView(view, box, n)


def label_run(
    source,
    path: Sequence[Viewpoint],
    cam: PinholeCamera,
    mode: str = "cloud-project",
    images=None,
    params: GbvsParams = GbvsParams(),
    m_min: int | None = None,
) -> LabelRun:
    """Label every waypoint; failures are recorded and the run continues.

    ``cloud-project``: ``source`` is the segmented object cloud (world frame).
    ``gaze-saliency``: ``source`` holds 3D gaze points; ``images`` gives the
    RGB frame per view (a sequence, or a callable taking the Viewpoint). The
    projected gaze drives GA/DGA saliency and the Otsu box becomes the label.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "gaze-saliency" and images is None:
        raise ValueError("gaze-saliency mode needs one image per view")
    run = LabelRun([])
    for i, view in enumerate(path):
        try:
            if mode == "cloud-project":
                lv = label_view(source, view, cam, M_MIN if m_min is None else m_min)
            else:
                image = images(view) if callable(images) else images[i]
                lv = _gaze_saliency_view(source, view, cam, image, params, 1 if m_min is None else m_min)
        except GazePerceptError as exc:
            run.views.append(None)
            run.errors[i] = f"{type(exc).__name__}: {exc}"
            continue
        run.views.append(lv)
    return run


def save_run(
    run: LabelRun,
    directory,
    cam: PinholeCamera,
    label: str,
    world_from_object: RigidTransform = RigidTransform(),
    images=None,
) -> list[Path]:
    """Write labelled views in the OMD layout; returns the camera files written."""
    written = []
    for i, lv in run.labeled:
        camera_from_object = compose(lv.view.pose.inverse(), world_from_object)
        rgb = None
        if images is not None:
            rgb = images(lv.view) if callable(images) else images[i]
        rec = save_omd_view(directory, i, cam, camera_from_object, lv.roi, label, rgb=rgb)
        written.append(rec.rgb_path.with_name(f"{i:04d}_camera.json"))
    return written
