"""Gaze-driven perception of unknown objects.

Gaze heatmap features with KNN detection, gaze-assisted graph-based visual
saliency with Otsu boxes, proposal distillation, gaze-seeded point-cloud
segmentation, multiview auto-labelling and COCO-style evaluation.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    BBox2D,
    BBox3D,
    GazeSample,
    PinholeCamera,
    PointCloud,
    Raster,
    RigidTransform,
    compose,
    invert,
    iou2d,
    iou3d,
    project,
)
from .errors import GazePerceptError  # noqa: E402

__all__ = [
    "BBox2D",
    "BBox3D",
    "GazeSample",
    "GazePerceptError",
    "PinholeCamera",
    "PointCloud",
    "Raster",
    "RigidTransform",
    "compose",
    "invert",
    "iou2d",
    "iou3d",
    "project",
    "__version__",
]
