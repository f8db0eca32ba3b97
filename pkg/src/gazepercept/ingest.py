"""Loaders and writers for gaze logs, annotations, proposals, clouds and OMD view folders.

File grammars
-------------
Gaze log (CSV)::

    # rx=1088 ry=1080 rz=5.0
    t_ms,x,y,z,frame
    0,512.5,400,,scene

The comment line carries the stimulus resolution. ``z`` and ``frame`` may be
omitted entirely (2D logs) or left empty per row. Foreign schemas are mapped
with ``columns={"t_ms": "timestamp", "x": "gaze_x", ...}``.

OMD view folder: per view index ``NNNN`` the files ``NNNN_rgb.png``,
``NNNN_depth.png`` (16-bit, millimetres), ``NNNN_camera.json`` and
``NNNN_roi.json``. The camera file holds intrinsics plus the camera<-object
extrinsic ``{fx, fy, cx, cy, width, height, t: [x, y, z], q: [w, x, y, z]}``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .core import BBox2D, GazeSample, PinholeCamera, PointCloud, RigidTransform
from .errors import EmptyLog, InconsistentResolution, MissingComponent, ParseError

DEFAULT_MAX_DEPTH = 5.0
GAZE_COLUMNS = ("t_ms", "x", "y", "z", "frame")


@dataclass(frozen=True)
class GazeLog:
    samples: tuple[GazeSample, ...]
    resolution: tuple[float, float, float]

    def __post_init__(self):
        if any(r <= 0 for r in self.resolution):
            raise ValueError(f"resolution components must be > 0: {self.resolution}")
        ts = [s.t for s in self.samples]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("gaze samples must be sorted by timestamp")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples], dtype=float)

    def positions(self, dims: int | None = None) -> np.ndarray:
        """(N, dims) coordinate array; missing z reads as 0."""
        dims = dims or max((len(s.pos) for s in self.samples), default=2)
        out = np.zeros((len(self.samples), dims))
        for i, s in enumerate(self.samples):
            n = min(dims, len(s.pos))
            out[i, :n] = s.pos[:n]
        return out

    @property
    def is_3d(self) -> bool:
        return any(len(s.pos) == 3 for s in self.samples)


@dataclass(frozen=True)
class LabeledBox:
    label: str
    box: BBox2D


@dataclass(frozen=True)
class AnnotationSet:
    """Frame timestamp -> optional labelled box (None = frame annotated as empty)."""

    frames: Mapping[float, LabeledBox | None] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    def sorted_items(self) -> list[tuple[float, LabeledBox | None]]:
        return sorted(self.frames.items(), key=lambda kv: kv[0])


@dataclass(frozen=True)
class ProposalList:
    """Proposals in hierarchical output order; list position is the position index."""

    boxes: tuple[BBox2D, ...] = ()

    def __len__(self) -> int:
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def __getitem__(self, i):
        return self.boxes[i]


@dataclass(frozen=True)
class ViewRecord:
    rgb_path: Path
    depth_path: Path
    camera: PinholeCamera
    camera_from_object: RigidTransform
    roi: BBox2D | None
    label: str
    index: int = 0


# -- number formatting -------------------------------------------------------


def fmt_num(v: float) -> str:
    """Canonical text form: integral values without a fraction, others as shortest repr."""
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line, column) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value: {text!r}", line, column)
    return v


# -- gaze logs ---------------------------------------------------------------

_RES_RE = re.compile(r"\b(rx|ry|rz)\s*=\s*([^\s,]+)")


def load_gaze_log(
    path,
    resolution: Sequence[float] | None = None,
    columns: Mapping[str, str] | None = None,
) -> GazeLog:
    """Read a CSV gaze log.

    Args:
        path: CSV file.
        resolution: ``(R_x, R_y[, R_z])`` overriding the ``# rx= ry= rz=`` header.
        columns: maps canonical names (``t_ms, x, y, z, frame``) to the file's headers.

    Rows are stable-sorted by timestamp. Raises :class:`ParseError` (with the
    1-based file line) on malformed rows and :class:`EmptyLog` when no rows remain.
    """
    text = Path(path).read_text()
    return parse_gaze_log(text, resolution=resolution, columns=columns)


def parse_gaze_log(text: str, resolution=None, columns=None) -> GazeLog:
    header_res: dict[str, float] = {}
    body_lines: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if raw.lstrip().startswith("#"):
            for key, val in _RES_RE.findall(raw):
                header_res[key] = _parse_float(val, lineno, key)
            continue
        if raw.strip():
            body_lines.append((lineno, raw))
    if not body_lines:
        raise EmptyLog("gaze log has no header or rows")

    mapping = {c: c for c in GAZE_COLUMNS}
    if columns:
        unknown = set(columns) - set(GAZE_COLUMNS)
        if unknown:
            raise ParseError(f"unknown canonical column(s) {sorted(unknown)}")
        mapping.update(columns)

    head_line, head = body_lines[0]
    header = [h.strip() for h in next(csv.reader([head]))]
    index = {}
    for canon in GAZE_COLUMNS:
        name = mapping[canon]
        if name in header:
            index[canon] = header.index(name)
        elif canon in ("t_ms", "x", "y"):
            raise ParseError(f"required column {name!r} missing from header", head_line)

    rows = []
    for lineno, raw in body_lines[1:]:
        cells = next(csv.reader([raw]))
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(cells)}", lineno)
        t = _parse_float(cells[index["t_ms"]], lineno, mapping["t_ms"])
        if t < 0:
            raise ParseError("negative timestamp", lineno, mapping["t_ms"])
        pos = [_parse_float(cells[index[c]], lineno, mapping[c]) for c in ("x", "y")]
        if "z" in index and cells[index["z"]].strip() != "":
            pos.append(_parse_float(cells[index["z"]], lineno, mapping["z"]))
        frame = cells[index["frame"]].strip() if "frame" in index else ""
        rows.append(GazeSample(t, tuple(pos), frame))
    if not rows:
        raise EmptyLog("gaze log contains a header but no samples")
    rows.sort(key=lambda s: s.t)  # stable

    if resolution is not None:
        res = [float(r) for r in resolution]
        if len(res) == 2:
            res.append(header_res.get("rz", DEFAULT_MAX_DEPTH))
    elif "rx" in header_res and "ry" in header_res:
        res = [header_res["rx"], header_res["ry"], header_res.get("rz", DEFAULT_MAX_DEPTH)]
    else:
        raise ParseError("stimulus resolution missing: add '# rx=.. ry=..' or pass resolution=")
    if any(r <= 0 for r in res):
        raise ParseError(f"resolution must be positive, got {res}")
    return GazeLog(tuple(rows), tuple(res))


def format_gaze_log(log: GazeLog) -> str:
    rx, ry, rz = log.resolution
    has_z = log.is_3d
    has_frame = any(s.frame_id for s in log.samples)
    cols = ["t_ms", "x", "y"] + (["z"] if has_z else []) + (["frame"] if has_frame else [])
    out = io.StringIO()
    out.write(f"# rx={fmt_num(rx)} ry={fmt_num(ry)} rz={fmt_num(rz)}\n")
    out.write(",".join(cols) + "\n")
    for s in log.samples:
        cells = [fmt_num(s.t), fmt_num(s.pos[0]), fmt_num(s.pos[1])]
        if has_z:
            cells.append(fmt_num(s.pos[2]) if len(s.pos) == 3 else "")
        if has_frame:
            cells.append(s.frame_id)
        out.write(",".join(cells) + "\n")
    return out.getvalue()


def save_gaze_log(log: GazeLog, path) -> None:
    Path(path).write_text(format_gaze_log(log))


# -- annotations -------------------------------------------------------------


def _box_from_json(obj, where: str) -> LabeledBox:
    try:
        box = BBox2D(float(obj["x1"]), float(obj["y1"]), float(obj["x2"]), float(obj["y2"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad box in {where}: {exc}") from None
    return LabeledBox(str(obj.get("class", "")), box)


def box_to_json(box: BBox2D, label: str = "") -> dict:
    return {"x1": box.x1, "y1": box.y1, "x2": box.x2, "y2": box.y2, "class": label}


def load_annotations(path) -> AnnotationSet:
    """``{"frames": [{"t_ms": 120, "box": {x1, y1, x2, y2, class} | null}, ...]}``"""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc.msg), exc.lineno, exc.colno) from None
    frames = {}
    for i, item in enumerate(doc.get("frames", [])):
        if "t_ms" not in item:
            raise ParseError(f"frame entry {i} lacks t_ms")
        t = float(item["t_ms"])
        box = item.get("box")
        frames[t] = None if box is None else _box_from_json(box, f"frame {i}")
    return AnnotationSet(frames)


def save_annotations(ann: AnnotationSet, path) -> None:
    frames = [
        {"t_ms": t, "box": None if lb is None else box_to_json(lb.box, lb.label)}
        for t, lb in ann.sorted_items()
    ]
    Path(path).write_text(json.dumps({"frames": frames}, indent=1) + "\n")


# -- proposals ---------------------------------------------------------------


def parse_proposals(text: str) -> ProposalList:
    boxes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 4:
            raise ParseError(f"expected 4 box values, got {len(parts)}", lineno)
        vals = [_parse_float(p, lineno, k) for k, p in enumerate(parts, start=1)]
        try:
            boxes.append(BBox2D(*vals))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    return ProposalList(tuple(boxes))


def load_proposals(path) -> ProposalList:
    """One ``x1 y1 x2 y2`` box per line (comma or whitespace separated), order preserved."""
    return parse_proposals(Path(path).read_text())


def save_proposals(proposals: Iterable[BBox2D], path) -> None:
    lines = [" ".join(fmt_num(v) for v in b.as_tuple()) for b in proposals]
    Path(path).write_text("".join(line + "\n" for line in lines))


# -- point clouds ------------------------------------------------------------


def load_xyz(path, frame_id: str = "") -> PointCloud:
    pts = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"expected 3 coordinates, got {len(parts)}", lineno)
        pts.append([_parse_float(p, lineno, k) for k, p in enumerate(parts, start=1)])
    return PointCloud(np.array(pts, dtype=float).reshape(-1, 3), frame_id)


def save_xyz(cloud, path) -> None:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    Path(path).write_text("".join(" ".join(fmt_num(v) for v in p) + "\n" for p in pts))


# -- rasters -----------------------------------------------------------------


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            return np.asarray(im, dtype=np.uint16)
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        return np.asarray(im)


def save_rgb_png(image, path) -> None:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.floor(np.asarray(arr, dtype=float) * 255 + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def save_depth_png(depth_mm, path) -> None:
    arr = np.clip(np.rint(np.asarray(depth_mm, dtype=float)), 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(path, format="PNG")


def png_size(path) -> tuple[int, int]:
    with Image.open(path) as im:
        return im.size  # (width, height)


# -- OMD view folders --------------------------------------------------------


def camera_to_json(cam: PinholeCamera, camera_from_object: RigidTransform) -> dict:
    return {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "t": list(camera_from_object.translation),
        "q": list(camera_from_object.rotation),
    }


def camera_from_json(doc: Mapping, where: str = "camera") -> tuple[PinholeCamera, RigidTransform]:
    try:
        cam = PinholeCamera(
            float(doc["fx"]), float(doc["fy"]), float(doc["cx"]), float(doc["cy"]),
            int(doc["width"]), int(doc["height"]),
        )
        q = np.asarray(doc["q"], dtype=float)
        pose = RigidTransform(tuple(doc["t"]), tuple(q / np.linalg.norm(q)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad camera description in {where}: {exc}") from None
    return cam, pose


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def save_omd_view(
    directory,
    index: int,
    camera: PinholeCamera,
    camera_from_object: RigidTransform,
    roi: BBox2D | None,
    label: str,
    rgb=None,
    depth_mm=None,
) -> ViewRecord:
    """Write one view group. Missing rasters are written as black placeholders."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stem = f"{index:04d}"
    rgb_path, depth_path = d / f"{stem}_rgb.png", d / f"{stem}_depth.png"
    if rgb is None:
        rgb = np.zeros((camera.height, camera.width, 3), dtype=np.uint8)
    if depth_mm is None:
        depth_mm = np.zeros((camera.height, camera.width))
    save_rgb_png(rgb, rgb_path)
    save_depth_png(depth_mm, depth_path)
    _write_json(d / f"{stem}_camera.json", camera_to_json(camera, camera_from_object))
    _write_json(d / f"{stem}_roi.json", None if roi is None else box_to_json(roi, label))
    return ViewRecord(rgb_path, depth_path, camera, camera_from_object, roi, label, index)


_VIEW_RE = re.compile(r"^(\d{4})_(rgb|depth|camera|roi)\.(png|json)$")


def load_omd_view_dir(path, label: str | None = None) -> list[ViewRecord]:
    """Load every view group of one class directory, sorted by view index.

    Raises:
        MissingComponent: a group lacks one of its four files.
        InconsistentResolution: a raster's size disagrees with the camera file.
    """
    d = Path(path)
    if not d.is_dir():
        raise MissingComponent(d)
    groups: dict[str, set[str]] = {}
    for p in d.iterdir():
        m = _VIEW_RE.match(p.name)
        if m:
            groups.setdefault(m.group(1), set()).add(m.group(2))
    records = []
    for stem in sorted(groups):
        for part, ext in (("rgb", "png"), ("depth", "png"), ("camera", "json"), ("roi", "json")):
            if part not in groups[stem]:
                raise MissingComponent(d / f"{stem}_{part}.{ext}")
        cam_path = d / f"{stem}_camera.json"
        try:
            cam_doc = json.loads(cam_path.read_text())
            roi_doc = json.loads((d / f"{stem}_roi.json").read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{exc.msg} in {cam_path.parent / stem}", exc.lineno, exc.colno) from None
        cam, pose = camera_from_json(cam_doc, str(cam_path))
        roi, cls = None, label or d.name
        if roi_doc is not None:
            lb = _box_from_json(roi_doc, f"{stem}_roi.json")
            roi = lb.box
            cls = lb.label or cls
        rgb_path, depth_path = d / f"{stem}_rgb.png", d / f"{stem}_depth.png"
        for raster in (rgb_path, depth_path):
            if png_size(raster) != (cam.width, cam.height):
                raise InconsistentResolution(
                    f"{raster.name} is {png_size(raster)}, camera declares {(cam.width, cam.height)}"
                )
        records.append(ViewRecord(rgb_path, depth_path, cam, pose, roi, cls, int(stem)))
    return records
