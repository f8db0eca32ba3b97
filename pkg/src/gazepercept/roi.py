"""Bounding boxes from saliency fields: 8-bit quantisation, Otsu threshold, tight box."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import BBox2D
from .errors import EmptyHistogram, EmptyMask
from .gbvs import SaliencyField, minmax, quantize


@dataclass(frozen=True, eq=False)
class BinaryMask:
    mask: np.ndarray  # (m, n) bool, foreground = value > threshold
    threshold: int


def otsu_threshold(histogram: Sequence[float]) -> int:
    """Threshold t in [0, 255] maximising the between-class variance of {<= t} vs {> t}.

    Only thresholds with a non-empty lower class are candidates; ties go to
    the lowest t. Integer histograms are evaluated in exact integer
    arithmetic, so equal-variance thresholds tie exactly.
    """
    h = np.asarray(histogram)
    if h.shape != (256,):
        raise ValueError(f"histogram must have 256 bins, got shape {h.shape}")
    if np.any(h < 0) or not np.any(h > 0):
        raise EmptyHistogram("histogram has no mass")
    if np.all(np.mod(h, 1) == 0):
        return _otsu_exact([int(v) for v in h])
    return _otsu_float(h.astype(float))


def _otsu_exact(h: list[int]) -> int:
    # between-class variance = (s0*N - S*n0)^2 / (N^2 * n0 * n1); compare num/den by cross-multiplying
    N = sum(h)
    S = sum(i * c for i, c in enumerate(h))
    best_t, best_num, best_den = None, 0, 1
    n0 = s0 = 0
    for t, c in enumerate(h):
        n0 += c
        s0 += t * c
        if n0 == 0:
            continue
        n1 = N - n0
        if n1 == 0:
            num, den = 0, 1
        else:
            num, den = (s0 * N - S * n0) ** 2, n0 * n1
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def _otsu_float(h: np.ndarray) -> int:
    N = h.sum()
    S = (np.arange(256) * h).sum()
    n0 = np.cumsum(h)
    s0 = np.cumsum(np.arange(256) * h)
    n1 = N - n0
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(n1 > 0, (s0 * N - S * n0) ** 2 / (n0 * n1), 0.0)
    var = np.where(n0 > 0, var, -np.inf)
    return int(np.argmax(var))


def mask_to_bbox(mask, full_shape: Sequence[int] | None = None) -> BBox2D:
    """Tight box around foreground pixels, in inclusive pixel corners.

    With ``full_shape=(H, W)`` the mask's cell span is scaled to the full image:
    cell c covers pixels [c * W/n, (c + 1) * W/n - 1].
    """
    m = mask.mask if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    if len(rows) == 0:
        raise EmptyMask("mask has no foreground pixels")
    r1, r2, c1, c2 = rows[0], rows[-1], cols[0], cols[-1]
    if full_shape is None:
        return BBox2D(float(c1), float(r1), float(c2), float(r2))
    sy = full_shape[0] / m.shape[0]
    sx = full_shape[1] / m.shape[1]
    return BBox2D(c1 * sx, r1 * sy, (c2 + 1) * sx - 1, (r2 + 1) * sy - 1)


def largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(mask)
    if n <= 1:
        return mask
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def binarize(values, largest_only: bool = False) -> BinaryMask:
    q = quantize(minmax(np.asarray(values, dtype=float)))
    t = otsu_threshold(np.bincount(q.ravel(), minlength=256))
    fg = q > t
    if largest_only and fg.any():
        fg = largest_component(fg)
    return BinaryMask(fg, t)


def extract_roi(field, full_shape: Sequence[int] | None = None, largest_only: bool = False) -> tuple[BBox2D, BinaryMask]:
    """Quantise, Otsu-binarise and box a saliency field.

    A uniform field quantises to 255 everywhere, thresholds at 255 and so
    raises :class:`EmptyMask`.
    """
    values = field.values if isinstance(field, SaliencyField) else np.asarray(field, dtype=float)
    mask = binarize(values, largest_only)
    return mask_to_bbox(mask, full_shape), mask


def save_mask_png(mask: BinaryMask, path) -> None:
    Image.fromarray(mask.mask.astype(bool)).convert("1").save(path, format="PNG")


def save_box_json(box: BBox2D, path, label: str = "", threshold: int | None = None) -> None:
    doc = {"x1": box.x1, "y1": box.y1, "x2": box.x2, "y2": box.y2, "class": label}
    if threshold is not None:
        doc["threshold"] = threshold
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
