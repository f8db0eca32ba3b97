"""Gaze-seeded point-cloud segmentation.

Chain: pass-through range filter, voxel-grid downsampling, RANSAC removal of
the support plane (normal constrained to an expected direction), Euclidean
clustering, and selection of the cluster(s) the gaze point touches.

Indices in a :class:`Segmentation` always refer to the input cloud: each
original point inherits the fate of the voxel it fell into.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .core import BBox3D, PointCloud
from .errors import NoPlaneFound, NothingSegmented

MIN_TRIANGLE_AREA = 1e-9
MODES = ("nearest", "radius")


@dataclass(frozen=True)
class SegParams:
    """Segmentation settings (metres, degrees).

    The defaults keep the cluster tolerance above the voxel pitch so that
    downsampled surfaces stay connected. :meth:`literal_tabletop` and
    :meth:`flat_objects` reproduce the two published configurations.
    """

    z_min: float = 0.0
    z_max: float = 3.0
    leaf: float = 0.01
    max_normal_deviation_deg: float = 30.0
    inlier_distance: float = 0.01
    iterations: int = 1000
    seed: int = 0
    tolerance: float = 0.02
    min_cluster_size: int = 5
    attach_radius: float = 0.02
    expected_normal: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.z_max >= self.z_min:
            raise ValueError("pass-through range needs z_min <= z_max")
        for name in ("leaf", "inlier_distance", "tolerance", "attach_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.max_normal_deviation_deg <= 90:
            raise ValueError("max_normal_deviation_deg must lie in (0, 90]")
        if self.iterations < 1 or self.min_cluster_size < 1:
            raise ValueError("iterations and min_cluster_size must be >= 1")
        n = np.asarray(self.expected_normal, dtype=float)
        if n.shape != (3,) or not np.linalg.norm(n) > 0:
            raise ValueError("expected_normal must be a non-zero 3-vector")
        object.__setattr__(self, "expected_normal", tuple(float(v) for v in n / np.linalg.norm(n)))

    @classmethod
    def literal_tabletop(cls, **changes) -> "SegParams":
        """Leaf 0.03, tolerance 5 mm, minimum cluster 500, as published for nearest-cluster mode."""
        return replace(cls(leaf=0.03, tolerance=0.005, min_cluster_size=500), **changes)

    @classmethod
    def flat_objects(cls, **changes) -> "SegParams":
        """Radius-mode settings: clusters within 2 cm of the gaze, at least five points."""
        return replace(cls(attach_radius=0.02, min_cluster_size=5), **changes)


@dataclass(frozen=True, eq=False)
class PlaneModel:
    normal: np.ndarray  # unit, oriented along the expected normal
    offset: float  # normal . p + offset = 0

    def distance(self, points) -> np.ndarray:
        return np.abs(np.asarray(points, dtype=float) @ self.normal + self.offset)


@dataclass(frozen=True, eq=False)
class Segmentation:
    indices: np.ndarray  # object points, indices into the input cloud
    plane: PlaneModel
    plane_indices: np.ndarray  # plane inliers, indices into the input cloud
    box: BBox3D
    clusters_selected: int = 1

    def to_dict(self) -> dict:
        return {
            "indices": [int(i) for i in self.indices],
            "plane": {"normal": [float(v) for v in self.plane.normal], "offset": float(self.plane.offset)},
            "box": {"center": list(self.box.center), "size": list(self.box.size), "frame": self.box.frame_id},
            "clusters_selected": self.clusters_selected,
            "n_plane_points": int(len(self.plane_indices)),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=float).reshape(-1, 3)


def pass_through_mask(cloud, z_min: float, z_max: float) -> np.ndarray:
    z = _points(cloud)[:, 2]
    return (z >= z_min) & (z <= z_max)


def pass_through(cloud, z_min: float = 0.0, z_max: float = 3.0) -> np.ndarray:
    """Points with ``z_min <= z <= z_max``, in input order."""
    pts = _points(cloud)
    return pts[pass_through_mask(pts, z_min, z_max)]


def voxel_downsample(cloud, leaf: float, return_inverse: bool = False):
    """One centroid per occupied voxel ``floor(p / leaf)``.

    Voxels are emitted in lexicographic order of their integer (x, y, z) key.
    With ``return_inverse`` the voxel row of every input point is returned too.
    """
    if not leaf > 0:
        raise ValueError("leaf must be > 0")
    pts = _points(cloud)
    if len(pts) == 0:
        out = np.zeros((0, 3))
        return (out, np.zeros(0, dtype=np.int64)) if return_inverse else out
    keys = np.floor(pts / leaf).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, pts)
    centroids = sums / counts[:, None]
    return (centroids, inverse) if return_inverse else centroids


def _fit_plane(points: np.ndarray, orient: np.ndarray) -> PlaneModel:
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    if n @ orient < 0:
        n = -n
    return PlaneModel(n, -float(n @ c))


def ransac_plane(cloud, params: SegParams = SegParams()) -> tuple[PlaneModel, np.ndarray]:
    """Largest plane whose normal lies within the allowed deviation of ``expected_normal``.

    Candidates come from seeded random point triples; near-collinear triples
    are skipped. The best candidate (most inliers, earliest on ties) is refit
    to its inliers by least squares; the refit is kept only if it still meets
    the normal constraint. Returns ``(plane, inlier_indices)``.
    """
    pts = _points(cloud)
    if len(pts) < 3:
        raise NoPlaneFound(f"need at least 3 points, got {len(pts)}")
    rng = np.random.default_rng(params.seed)
    expected = np.asarray(params.expected_normal)
    cos_min = math.cos(math.radians(params.max_normal_deviation_deg))

    triples = np.array([rng.choice(len(pts), 3, replace=False) for _ in range(params.iterations)])
    a, b, c = pts[triples[:, 0]], pts[triples[:, 1]], pts[triples[:, 2]]
    cross = np.cross(b - a, c - a)
    norm = np.linalg.norm(cross, axis=1)
    ok = 0.5 * norm >= MIN_TRIANGLE_AREA
    normals = np.zeros_like(cross)
    normals[ok] = cross[ok] / norm[ok, None]
    ok &= np.abs(normals @ expected) >= cos_min
    if not ok.any():
        raise NoPlaneFound("no sampled plane satisfies the normal constraint")

    cand = np.flatnonzero(ok)
    best, best_count = -1, -1
    for lo in range(0, len(cand), 256):
        chunk = cand[lo : lo + 256]
        n = normals[chunk]
        d = -np.einsum("ij,ij->i", n, a[chunk])
        counts = (np.abs(pts @ n.T + d) <= params.inlier_distance).sum(axis=0)
        j = int(np.argmax(counts))
        if counts[j] > best_count:
            best, best_count = int(chunk[j]), int(counts[j])

    n = normals[best] if normals[best] @ expected >= 0 else -normals[best]
    model = PlaneModel(n, -float(n @ a[best]))
    inliers = np.flatnonzero(model.distance(pts) <= params.inlier_distance)
    if len(inliers) >= 3:
        refit = _fit_plane(pts[inliers], expected)
        if abs(refit.normal @ expected) >= cos_min:
            model = refit
            inliers = np.flatnonzero(model.distance(pts) <= params.inlier_distance)
    return model, inliers


def euclidean_clusters(cloud, tolerance: float, min_size: int = 1) -> list[np.ndarray]:
    """Connected components of the graph linking points within ``tolerance``.

    Components smaller than ``min_size`` are dropped. Clusters are sorted by
    size (descending), ties by their lowest member index; members ascend.
    """
    pts = _points(cloud)
    n = len(pts)
    if n == 0:
        return []
    pairs = cKDTree(pts).query_pairs(tolerance, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    order = np.argsort(labels, kind="stable")
    splits = np.flatnonzero(np.diff(labels[order])) + 1
    groups = [g for g in np.split(order, splits) if len(g) >= min_size]
    groups.sort(key=lambda g: (-len(g), int(g[0])))
    return groups


def segment_by_gaze(cloud, gaze: Sequence[float], params: SegParams = SegParams(), mode: str = "nearest", frame_id: str = "") -> Segmentation:
    """Isolate the object under the gaze point.

    ``nearest``: the cluster holding the gaze point's nearest neighbour among
    the non-plane voxels. ``radius``: every cluster with a voxel within
    ``attach_radius`` of the gaze.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    pts = _points(cloud)
    g = np.asarray(gaze, dtype=float).reshape(3)
    kept = np.flatnonzero(pass_through_mask(pts, params.z_min, params.z_max))
    if len(kept) == 0:
        raise NothingSegmented("pass-through filter removed every point")
    vox, inverse = voxel_downsample(pts[kept], params.leaf, return_inverse=True)

    plane, plane_vox = ransac_plane(vox, params)
    is_plane = np.zeros(len(vox), dtype=bool)
    is_plane[plane_vox] = True
    rest = np.flatnonzero(~is_plane)
    if len(rest) == 0:
        raise NothingSegmented("nothing left after plane removal")
    clusters = euclidean_clusters(vox[rest], params.tolerance, params.min_cluster_size)
    label = np.full(len(rest), -1)
    for c, members in enumerate(clusters):
        label[members] = c

    tree = cKDTree(vox[rest])
    if mode == "nearest":
        _, nn = tree.query(g)
        chosen = {int(label[nn])} - {-1}
    else:
        near = tree.query_ball_point(g, params.attach_radius)
        chosen = {int(label[i]) for i in near} - {-1}
    if not chosen:
        raise NothingSegmented(f"no cluster attached to gaze point {g.tolist()}")

    obj_vox = np.zeros(len(vox), dtype=bool)
    obj_vox[rest[np.isin(label, sorted(chosen))]] = True
    indices = kept[obj_vox[inverse]]
    plane_indices = kept[is_plane[inverse]]
    box = BBox3D.from_points(pts[indices], frame_id)
    return Segmentation(indices, plane, plane_indices, box, len(chosen))
