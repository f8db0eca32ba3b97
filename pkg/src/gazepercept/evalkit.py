"""COCO-style detection metrics: greedy matching, 101-point AP, AR, curves.

Confidence ties are broken by input order everywhere. Classes without
ground truth are reported but left out of the class means unless asked.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import BBox2D, iou2d
from .errors import ParseError

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
MAX_DETS = (1, 10, 100)


@dataclass(frozen=True)
class Detection:
    image_id: str
    cls: str
    box: BBox2D
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    cls: str
    box: BBox2D


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float) -> list[tuple[int, int]]:
    """Greedy matching within one image and class.

    Detections are visited by descending confidence (stable); each takes the
    unmatched ground truth of highest IoU >= threshold (lowest index on ties).
    Returns ``(det_index, gt_index or -1)`` in visiting order.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    taken = [False] * len(gts)
    out = []
    for i in order:
        best, best_iou = -1, iou_threshold
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = iou2d(dets[i].box, g.box)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
        out.append((i, best))
    return out


def average_precision(tp: Sequence[bool], n_gt: int) -> float:
    """101-point interpolated AP of a confidence-ranked TP/FP sequence.

    Precision at recall r is the best precision reached at any recall >= r.
    Returns NaN when there is no ground truth.
    """
    if n_gt == 0:
        return float("nan")
    curve = precision_at_recall(tp, n_gt)
    return float(curve.mean())


def precision_at_recall(tp: Sequence[bool], n_gt: int) -> np.ndarray:
    """Interpolated precision at the 101 equidistant recall points."""
    flags = np.asarray(tp, dtype=bool)
    if n_gt == 0 or len(flags) == 0:
        return np.zeros(len(RECALL_POINTS))
    ctp = np.cumsum(flags)
    cfp = np.cumsum(~flags)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    return np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)


def _group(items) -> dict[tuple[str, str], list[int]]:
    groups: dict[tuple[str, str], list[int]] = {}
    for i, it in enumerate(items):
        groups.setdefault((it.image_id, it.cls), []).append(i)
    return groups


def _ranked_matches(dets, gts, cls: str, thr: float, max_dets: int | None):
    """(confidence, input index, is_tp) for every kept detection of ``cls``, ranked."""
    det_groups = _group(dets)
    gt_groups = _group(gts)
    rows = []
    for (img, c), idx in det_groups.items():
        if c != cls:
            continue
        idx = sorted(idx, key=lambda i: -dets[i].confidence)
        if max_dets is not None:
            idx = idx[:max_dets]
        g_idx = gt_groups.get((img, c), [])
        matches = match_detections([dets[i] for i in idx], [gts[j] for j in g_idx], thr)
        for local, gt_local in matches:
            rows.append((dets[idx[local]].confidence, idx[local], gt_local >= 0))
    rows.sort(key=lambda r: (-r[0], r[1]))
    return rows


@dataclass
class ClassMetrics:
    cls: str
    n_gt: int
    n_det: int
    ap: dict[float, float]  # IoU threshold -> AP
    ar: dict[int, float]  # max detections -> AR (averaged over IoU thresholds)
    recall_at_iou: dict[float, float]  # IoU threshold -> recall at 100 detections
    pr50: np.ndarray  # interpolated precision at the 101 recall points, IoU 0.5

    @property
    def ap50(self) -> float:
        return self.ap[0.5]

    @property
    def ap75(self) -> float:
        return self.ap[0.75]

    @property
    def ap_mean(self) -> float:
        return float(np.mean(list(self.ap.values())))

    def to_dict(self) -> dict:
        def clean(v):
            return None if v is None or np.isnan(v) else float(v)

        return {
            "class": self.cls,
            "n_gt": self.n_gt,
            "n_det": self.n_det,
            "AP50": clean(self.ap50),
            "AP75": clean(self.ap75),
            "AP": clean(self.ap_mean),
            "AR1": clean(self.ar[1]),
            "AR10": clean(self.ar[10]),
            "AR100": clean(self.ar[100]),
        }


@dataclass
class MetricReport:
    classes: dict[str, ClassMetrics]
    unknown_classes: list[str] = field(default_factory=list)
    include_empty: bool = False

    def _means_over(self) -> list[ClassMetrics]:
        return [m for m in self.classes.values() if m.n_gt > 0 or self.include_empty]

    def _mean(self, getter) -> float:
        vals = [getter(m) for m in self._means_over()]
        vals = [0.0 if np.isnan(v) else v for v in vals]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def map50(self) -> float:
        return self._mean(lambda m: m.ap50)

    @property
    def map75(self) -> float:
        return self._mean(lambda m: m.ap75)

    @property
    def map(self) -> float:
        return self._mean(lambda m: m.ap_mean)

    def mar(self, max_dets: int = 100) -> float:
        return self._mean(lambda m: m.ar[max_dets])

    def ap_vs_iou(self) -> list[tuple[float, float]]:
        return [(t, self._mean(lambda m, t=t: m.ap[t])) for t in IOU_THRESHOLDS]

    def recall_vs_iou(self) -> list[tuple[float, float]]:
        return [(t, self._mean(lambda m, t=t: m.recall_at_iou[t])) for t in IOU_THRESHOLDS]

    def to_dict(self) -> dict:
        def clean(v):
            return None if np.isnan(v) else v

        return {
            "classes": [self.classes[c].to_dict() for c in sorted(self.classes)],
            "mAP50": clean(self.map50),
            "mAP75": clean(self.map75),
            "mAP": clean(self.map),
            "mAR1": clean(self.mar(1)),
            "mAR10": clean(self.mar(10)),
            "mAR100": clean(self.mar(100)),
            "unknown_classes": list(self.unknown_classes),
            "include_empty": self.include_empty,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def curves_csv(self) -> dict[str, str]:
        """CSV tables keyed by file stem: pr50, ap_iou, recall_iou."""
        out = {}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "recall", "precision"])
        for c in sorted(self.classes):
            for r, p in zip(RECALL_POINTS, self.classes[c].pr50):
                w.writerow([c, f"{r:.2f}", repr(float(p))])
        out["pr50"] = buf.getvalue()
        for name, rows in (("ap_iou", self.ap_vs_iou()), ("recall_iou", self.recall_vs_iou())):
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["iou", name.split("_")[0]])
            for t, v in rows:
                w.writerow([f"{t:.2f}", repr(float(v))])
            out[name] = buf.getvalue()
        return out


def report(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    vocabulary: Iterable[str] | None = None,
    include_empty: bool = False,
) -> MetricReport:
    """Full COCO metric grid per class.

    ``vocabulary`` defaults to the ground-truth classes; detection classes
    outside it are listed in ``unknown_classes`` and still get a row.
    """
    vocab = sorted(set(vocabulary) if vocabulary is not None else {g.cls for g in gts})
    det_classes = sorted({d.cls for d in dets})
    unknown = [c for c in det_classes if c not in vocab]
    classes = {}
    for c in sorted(set(vocab) | set(det_classes)):
        n_gt = sum(1 for g in gts if g.cls == c)
        n_det = sum(1 for d in dets if d.cls == c)
        ap, recall_at = {}, {}
        pr50 = np.zeros(len(RECALL_POINTS))
        per_thr_recall: dict[int, list[float]] = {m: [] for m in MAX_DETS}
        for t in IOU_THRESHOLDS:
            ranked = _ranked_matches(dets, gts, c, t, max(MAX_DETS))
            tp = [r[2] for r in ranked]
            ap[t] = average_precision(tp, n_gt)
            if t == 0.5:
                pr50 = precision_at_recall(tp, n_gt)
            for m in MAX_DETS:
                hits = sum(r[2] for r in _ranked_matches(dets, gts, c, t, m)) if m != max(MAX_DETS) else sum(tp)
                per_thr_recall[m].append(hits / n_gt if n_gt else float("nan"))
            recall_at[t] = per_thr_recall[max(MAX_DETS)][-1]
        ar = {m: float(np.mean(v)) for m, v in per_thr_recall.items()}
        classes[c] = ClassMetrics(c, n_gt, n_det, ap, ar, recall_at, pr50)
    return MetricReport(classes, unknown, include_empty)


# -- COCO-like files ---------------------------------------------------------


def _bbox(doc, where: str) -> BBox2D:
    try:
        x, y, w, h = (float(v) for v in doc["bbox"])
        return BBox2D.from_xywh(x, y, w, h)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad bbox in {where}: {exc}") from None


def _category_names(doc) -> dict:
    return {c["id"]: str(c.get("name", c["id"])) for c in doc.get("categories", [])}


def load_ground_truth(path) -> list[GroundTruth]:
    """COCO annotation file: ``annotations`` with ``image_id``, ``category_id``, ``bbox`` (x, y, w, h)."""
    doc = json.loads(Path(path).read_text())
    names = _category_names(doc)
    out = []
    for k, a in enumerate(doc.get("annotations", [])):
        cls = names.get(a["category_id"], str(a["category_id"]))
        out.append(GroundTruth(str(a["image_id"]), cls, _bbox(a, f"annotation {k}")))
    return out


def load_detections(path, categories: dict | None = None) -> list[Detection]:
    """COCO result list ``[{image_id, category_id, bbox, score}]`` (or ``{"annotations": [...]}``)."""
    doc = json.loads(Path(path).read_text())
    items = doc.get("annotations", []) if isinstance(doc, dict) else doc
    names = categories or (_category_names(doc) if isinstance(doc, dict) else {})
    out = []
    for k, a in enumerate(items):
        cls = names.get(a["category_id"], str(a["category_id"]))
        out.append(Detection(str(a["image_id"]), cls, _bbox(a, f"detection {k}"), float(a.get("score", 1.0))))
    return out


def save_detections(dets: Sequence[Detection], path) -> None:
    items = [
        {
            "image_id": d.image_id,
            "category_id": d.cls,
            "bbox": [d.box.x1, d.box.y1, d.box.width, d.box.height],
            "score": d.confidence,
        }
        for d in dets
    ]
    Path(path).write_text(json.dumps(items, indent=1) + "\n")


def save_ground_truth(gts: Sequence[GroundTruth], path) -> None:
    images = sorted({g.image_id for g in gts})
    cats = sorted({g.cls for g in gts})
    doc = {
        "images": [{"id": i} for i in images],
        "categories": [{"id": c, "name": c} for c in cats],
        "annotations": [
            {"id": k, "image_id": g.image_id, "category_id": g.cls, "bbox": [g.box.x1, g.box.y1, g.box.width, g.box.height]}
            for k, g in enumerate(gts)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def write_report(rep: MetricReport, directory, plots: bool = False) -> list[Path]:
    """``report.json`` plus one CSV per curve; PNG plots need matplotlib."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / "report.json"]
    paths[0].write_text(rep.to_json())
    for stem, text in rep.curves_csv().items():
        p = d / f"curve_{stem}.csv"
        p.write_text(text)
        paths.append(p)
    if plots:
        paths.extend(_plot(rep, d))
    return paths


def _plot(rep: MetricReport, d: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = []
    fig, ax = plt.subplots(figsize=(4, 3))
    for c in sorted(rep.classes):
        ax.plot(RECALL_POINTS, rep.classes[c].pr50, label=c)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision (IoU 0.5)")
    ax.legend(fontsize="small")
    out.append(d / "pr50.png")
    fig.savefig(out[-1], dpi=100, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    fig, ax = plt.subplots(figsize=(4, 3))
    t, ap = zip(*rep.ap_vs_iou())
    _, rc = zip(*rep.recall_vs_iou())
    ax.plot(t, ap, marker="o", label="AP")
    ax.plot(t, rc, marker="s", label="recall")
    ax.set_xlabel("IoU threshold")
    ax.legend(fontsize="small")
    out.append(d / "iou_curves.png")
    fig.savefig(out[-1], dpi=100, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return out
