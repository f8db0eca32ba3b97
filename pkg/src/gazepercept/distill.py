"""Gaze-based distillation of location proposals and position-index analytics.

A proposal survives distillation when the gaze point lies inside it
(boundaries inclusive). Survivors keep their hierarchical order, and each one
remembers its position in the original list.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import BBox2D, iou2d
from .ingest import ProposalList

SUFFICIENT_IOU = 0.7


@dataclass(frozen=True)
class Distilled:
    boxes: tuple[BBox2D, ...]
    indices: tuple[int, ...]  # 0-based positions in the original list, strictly increasing

    def __len__(self) -> int:
        return len(self.boxes)


def _boxes(proposals) -> tuple[BBox2D, ...]:
    if isinstance(proposals, ProposalList):
        return proposals.boxes
    if isinstance(proposals, Distilled):
        return proposals.boxes
    return tuple(proposals)


def distill(proposals, gaze: Sequence[float]) -> Distilled:
    """Keep boxes with ``x1 <= g.x <= x2`` and ``y1 <= g.y <= y2``, in input order.

    Distilling a :class:`Distilled` result again keeps the original indices,
    so repeated application is idempotent.
    """
    gx, gy = float(gaze[0]), float(gaze[1])
    boxes = _boxes(proposals)
    base = proposals.indices if isinstance(proposals, Distilled) else range(len(boxes))
    keep = [(b, i) for b, i in zip(boxes, base) if b.contains(gx, gy)]
    return Distilled(tuple(b for b, _ in keep), tuple(i for _, i in keep))


def distill_multi(proposals, gaze_points: Iterable[Sequence[float]]) -> Distilled:
    """Intersection of the per-point subsets: a box must contain every gaze point."""
    result = None
    for g in gaze_points:
        result = distill(proposals if result is None else result, g)
    if result is None:
        boxes = _boxes(proposals)
        return Distilled(boxes, tuple(range(len(boxes))))
    return result


@dataclass(frozen=True)
class SufficiencyReport:
    n_boxes: int
    n_sufficient: int
    precision: float
    recall: float
    f1: float
    best_index: int | None  # 1-based position of the highest-IoU box
    best_iou: float
    first_sufficient: int | None  # 1-based position of the first box with IoU >= tau
    tau: float

    def to_dict(self) -> dict:
        return {
            "n_boxes": self.n_boxes,
            "n_sufficient": self.n_sufficient,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "best_index": self.best_index,
            "best_iou": self.best_iou,
            "first_sufficient": self.first_sufficient,
            "tau": self.tau,
        }


def sufficiency_report(
    boxes,
    ground_truth: BBox2D,
    tau: float = SUFFICIENT_IOU,
    reference=None,
) -> SufficiencyReport:
    """Precision/recall of "sufficient" boxes (IoU >= tau) and position indices.

    Recall is measured against the sufficient boxes of ``reference`` (the full
    proposal list); without a reference the list itself is used, so recall is
    1 whenever any sufficient box exists. For a :class:`Distilled` input the
    reported positions are its original (1-based) indices.
    """
    if not 0 < tau <= 1:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    bxs = _boxes(boxes)
    positions = boxes.indices if isinstance(boxes, Distilled) else tuple(range(len(bxs)))
    ious = np.array([iou2d(b, ground_truth) for b in bxs], dtype=float)
    hits = ious >= tau
    n_suff = int(hits.sum())

    if reference is None:
        ref_total = n_suff
    else:
        ref_total = int(sum(iou2d(b, ground_truth) >= tau for b in _boxes(reference)))

    precision = n_suff / len(bxs) if len(bxs) else 0.0
    recall = n_suff / ref_total if ref_total else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    best = first = None
    best_iou = 0.0
    if len(bxs) and ious.max() > 0:
        j = int(np.argmax(ious))  # first maximum
        best, best_iou = positions[j] + 1, float(ious[j])
    if n_suff:
        first = positions[int(np.flatnonzero(hits)[0])] + 1
    return SufficiencyReport(len(bxs), n_suff, precision, recall, f1, best, best_iou, first, float(tau))


def report_json(before: SufficiencyReport, after: SufficiencyReport) -> str:
    """Side-by-side report for the full and the distilled list."""
    doc = {"all": before.to_dict(), "distilled": after.to_dict()}
    if before.precision > 0:
        doc["precision_gain"] = after.precision / before.precision
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"
