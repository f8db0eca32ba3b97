"""Gaze heatmap features: temporal windows, grid encoding, window labels.

Each window's gaze points are binned into a G_x x G_y x G_z grid over the
stimulus extent (R_x, R_y, R_z) and the counts are normalised into a
distribution. Flattened grids are the feature vectors for :mod:`knn`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import GazeSample
from .errors import EmptyLog, EmptyWindow, OutOfRange
from .ingest import AnnotationSet, GazeLog

RANGE_EPS = 1e-6
GRID_SIZES = (15, 30, 50)
WINDOW_LENGTHS_MS = (100, 250, 500, 750, 1000)

OBJECT = 1
NO_OBJECT = 0


@dataclass(frozen=True)
class WindowSpec:
    length_ms: float
    stride_ms: float | None = None  # defaults to length (disjoint windows)

    def __post_init__(self):
        if self.stride_ms is None:
            object.__setattr__(self, "stride_ms", self.length_ms)
        if self.length_ms <= 0 or self.stride_ms <= 0:
            raise ValueError("window length and stride must be positive")


@dataclass(frozen=True)
class Window:
    start: float
    end: float  # exclusive
    times: np.ndarray
    positions: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    @property
    def center(self) -> float:
        return (self.start + self.end) / 2


@dataclass(frozen=True)
class HeatmapGrid:
    """Normalised counts, stored as an array of shape (G_z, G_y, G_x)."""

    values: np.ndarray

    @property
    def shape_xyz(self) -> tuple[int, int, int]:
        gz, gy, gx = self.values.shape
        return (gx, gy, gz)

    def __getitem__(self, xyz):
        x, y, z = xyz
        return self.values[z, y, x]


@dataclass(frozen=True)
class WindowLabel:
    cls: int  # OBJECT or NO_OBJECT
    target: tuple[float, float, float, float] | None = None  # (x, y, w, h) as fractions
    label: str = ""


def windows(log: GazeLog, spec: WindowSpec) -> list[Window]:
    """Slice a log into [start, start + length) windows every ``stride`` ms.

    Starts run from t_min while start <= t_max. Windows with no samples are
    kept so the cover of the time axis stays explicit.
    """
    if len(log) == 0:
        raise EmptyLog("cannot window an empty log")
    times = log.times
    pos = log.positions()
    t0, t1 = times[0], times[-1]
    out = []
    k = 0
    while True:
        start = t0 + k * spec.stride_ms
        if start > t1:
            break
        end = start + spec.length_ms
        lo = np.searchsorted(times, start, side="left")
        hi = np.searchsorted(times, end, side="left")
        out.append(Window(start, end, times[lo:hi], pos[lo:hi]))
        k += 1
    return out


def _as_positions(samples) -> np.ndarray:
    if isinstance(samples, Window):
        return samples.positions
    if len(samples) and isinstance(samples[0], GazeSample):
        dims = max(len(s.pos) for s in samples)
        out = np.zeros((len(samples), dims))
        for i, s in enumerate(samples):
            out[i, : len(s.pos)] = s.pos
        return out
    arr = np.asarray(samples, dtype=float)
    return arr.reshape(len(arr), -1) if arr.size else np.zeros((0, 2))


def cell_indices(positions, resolution: Sequence[float], grid: Sequence[int]) -> np.ndarray:
    """Per-sample (x, y, z) cell indices: round half away from zero, clamped to [0, G-1]."""
    p = np.asarray(positions, dtype=float)
    res = np.asarray(resolution, dtype=float)
    g = np.asarray(grid, dtype=int)
    dims = p.shape[1]
    idx = np.zeros((len(p), 3), dtype=np.int64)
    scaled = p / res[:dims] * g[:dims]
    # inputs are non-negative, so floor(v + 0.5) is half-away-from-zero rounding
    idx[:, :dims] = np.floor(scaled + 0.5).astype(np.int64)
    return np.clip(idx, 0, g - 1)


def encode(samples, resolution: Sequence[float], grid: Sequence[int]) -> HeatmapGrid:
    """Bin gaze points into a normalised grid.

    Args:
        samples: (N, 2) / (N, 3) positions, a :class:`Window`, or GazeSamples.
        resolution: ``(R_x, R_y, R_z)``; R_z is ignored for 2D input.
        grid: ``(G_x, G_y, G_z)``; use G_z = 1 for a 2D heatmap.
    """
    p = _as_positions(samples)
    if len(p) == 0:
        raise EmptyWindow("no gaze samples in window")
    res = tuple(float(r) for r in resolution)
    g = tuple(int(v) for v in grid)
    if len(g) == 2:
        g = g + (1,)
    if len(res) == 2:
        res = res + (1.0,)
    if any(v < 1 for v in g):
        raise ValueError(f"grid cell counts must be >= 1, got {g}")
    dims = p.shape[1]
    limit = np.asarray(res[:dims]) * (1 + RANGE_EPS)
    if np.any(p < 0) or np.any(p > limit) or not np.all(np.isfinite(p)):
        raise OutOfRange(f"gaze coordinates outside [0, R] for R={res[:dims]}")
    idx = cell_indices(p, res, g)
    gx, gy, gz = g
    flat = (idx[:, 2] * gy + idx[:, 1]) * gx + idx[:, 0]
    counts = np.bincount(flat, minlength=gx * gy * gz).astype(float)
    return HeatmapGrid((counts / counts.sum()).reshape(gz, gy, gx))


def flatten(grid: HeatmapGrid) -> np.ndarray:
    """Row-major vector, x fastest, then y, then z."""
    return grid.values.ravel(order="C").copy()


def label_window(window: Window, annotations: AnnotationSet, resolution: Sequence[float]) -> WindowLabel:
    """Object/no-object class plus (x, y, w, h) target from the annotation nearest the centre.

    Equidistant annotations resolve to the earlier timestamp.
    """
    hits = [
        (t, lb) for t, lb in annotations.sorted_items() if lb is not None and window.start <= t < window.end
    ]
    if not hits:
        return WindowLabel(NO_OBJECT)
    center = window.center
    t_best, lb = min(hits, key=lambda item: (abs(item[0] - center), item[0]))
    rx, ry = float(resolution[0]), float(resolution[1])
    b = lb.box
    target = (b.x1 / rx, b.y1 / ry, b.width / rx, b.height / ry)
    target = tuple(float(min(max(v, 0.0), 1.0)) for v in target)
    return WindowLabel(OBJECT, target, lb.label)


@dataclass
class FeatureSet:
    features: np.ndarray  # (n, d)
    classes: np.ndarray  # (n,)
    targets: np.ndarray  # (n, 4), NaN where no box
    starts: np.ndarray  # (n,) window start times


def build_features(
    log: GazeLog,
    spec: WindowSpec,
    grid: Sequence[int],
    annotations: AnnotationSet | None = None,
    dims: int | None = None,
) -> FeatureSet:
    """Encode every non-empty window of a log; label it when annotations are given."""
    dims = dims or (3 if log.is_3d else 2)
    g = tuple(int(v) for v in grid)
    if dims == 2:
        g = (g[0], g[1], 1)
    feats, classes, targets, starts = [], [], [], []
    for w in windows(log, spec):
        if len(w) == 0:
            continue
        pos = w.positions[:, :dims]
        feats.append(flatten(encode(pos, log.resolution, g)))
        starts.append(w.start)
        if annotations is not None:
            lab = label_window(w, annotations, log.resolution)
            classes.append(lab.cls)
            targets.append(lab.target if lab.target is not None else (np.nan,) * 4)
        else:
            classes.append(-1)
            targets.append((np.nan,) * 4)
    d = int(np.prod(g))
    return FeatureSet(
        np.array(feats, dtype=float).reshape(-1, d),
        np.array(classes, dtype=int),
        np.array(targets, dtype=float).reshape(-1, 4),
        np.array(starts, dtype=float),
    )


def save_features(path, features: np.ndarray, grid, resolution, window: WindowSpec | None = None) -> None:
    """Write ``path`` as little-endian float64 and ``path.json`` as the sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(features, dtype="<f8")
    path.write_bytes(arr.tobytes())
    sidecar = {
        "dtype": "<f8",
        "shape": list(arr.shape),
        "grid": [int(v) for v in grid],
        "resolution": [float(v) for v in resolution],
        "window": None if window is None else {"length_ms": window.length_ms, "stride_ms": window.stride_ms},
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")


def load_features(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    arr = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(meta["shape"])
    return arr.astype(float), meta
