"""Rotated-box mAP and cross-modal deviation statistics."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import RotatedBox, rotated_iou


@dataclass(frozen=True)
class Detection:
    image_id: int | str
    class_id: int | str
    box: RotatedBox
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class GroundTruth:
    image_id: int | str
    class_id: int | str
    box: RotatedBox


def match_detections(dets: list[Detection], gts: list[GroundTruth], iou_thresh: float = 0.5):
    """Greedy matching in descending confidence order.

    Each detection takes the highest-IoU ground truth of the same image that
    is still unmatched and reaches ``iou_thresh``.  Confidence ties keep input
    order.  Returns ``(order, tp, matched_gt)`` where ``order`` indexes ``dets``.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    by_image: dict = {}
    for j, g in enumerate(gts):
        by_image.setdefault(g.image_id, []).append(j)
    used = [False] * len(gts)
    tp = np.zeros(len(dets), dtype=bool)
    matched = [-1] * len(dets)
    for rank, i in enumerate(order):
        d = dets[i]
        best, best_iou = -1, iou_thresh
        for j in by_image.get(d.image_id, ()):
            if used[j]:
                continue
            iou = rotated_iou(d.box, gts[j].box)
            if iou >= best_iou and (best < 0 or iou > best_iou):
                best, best_iou = j, iou
        if best >= 0:
            used[best] = True
            tp[rank] = True
            matched[rank] = best
    return order, tp, matched


def ap_from_tp(tp: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from ranked TP flags."""
    if n_gt == 0 or len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=float)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, np.finfo(float).eps)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def average_precision(dets, gts, class_id, iou_thresh: float = 0.5) -> float:
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError("iou_thresh must lie in (0, 1)")
    cdets = [d for d in dets if d.class_id == class_id]
    cgts = [g for g in gts if g.class_id == class_id]
    if not cgts:
        warnings.warn(f"no ground truth for class {class_id!r}; AP set to 0", stacklevel=2)
        return 0.0
    _, tp, _ = match_detections(cdets, cgts, iou_thresh)
    return ap_from_tp(tp, len(cgts))


def mean_ap(dets, gts, classes, iou_thresh: float = 0.5) -> tuple[float, list[float]]:
    classes = list(classes)
    if not classes:
        raise ValueError("classes must be nonempty")
    per_class = [average_precision(dets, gts, c, iou_thresh) for c in classes]
    return float(np.mean(per_class)), per_class


# -- JSON-lines records: {image_id, class, cx, cy, w, h, theta_rad, confidence?} --


def _record(image_id, class_id, box: RotatedBox, confidence=None) -> dict:
    rec = {"image_id": image_id, "class": class_id, "cx": box.cx, "cy": box.cy,
           "w": box.w, "h": box.h, "theta_rad": box.theta}
    if confidence is not None:
        rec["confidence"] = confidence
    return rec


def write_jsonl(path, items) -> None:
    lines = []
    for it in items:
        conf = it.confidence if isinstance(it, Detection) else None
        lines.append(json.dumps(_record(it.image_id, it.class_id, it.box, conf), sort_keys=True))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_jsonl(path) -> list[Detection | GroundTruth]:
    """Read records; lines with ``confidence`` become detections."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                box = RotatedBox(r["cx"], r["cy"], r["w"], r["h"], r["theta_rad"])
                if "confidence" in r:
                    out.append(Detection(r["image_id"], r["class"], box, float(r["confidence"])))
                else:
                    out.append(GroundTruth(r["image_id"], r["class"], box))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out


# -- deviation statistics -----------------------------------------------------


@dataclass
class ClassCounts:
    total: int = 0
    position_dev: int = 0
    size_dev: int = 0
    angle_dev: int = 0
    any_dev: int = 0


@dataclass
class DeviationStats:
    pos_px: float = 3.0
    size_px: float = 3.0
    angle_deg: float = 3.0
    per_class: dict = field(default_factory=dict)
    overall: ClassCounts = field(default_factory=ClassCounts)

    @property
    def deviant_fraction(self) -> float:
        return self.overall.any_dev / self.overall.total if self.overall.total else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "total", "pos_dev", "size_dev", "angle_dev", "any_dev"])
        rows = [(k, self.per_class[k]) for k in sorted(self.per_class, key=str)] + [("all", self.overall)]
        for name, c in rows:
            w.writerow([name, c.total, c.position_dev, c.size_dev, c.angle_dev, c.any_dev])
        return buf.getvalue()


def angle_gap(a: float, b: float) -> float:
    """Absolute angle difference folded into [0, pi]."""
    d = math.fmod(abs(a - b), 2 * math.pi)
    return min(d, 2 * math.pi - d)


def deviation_stats(pairs, pos_px: float = 3.0, size_px: float = 3.0, angle_deg: float = 3.0) -> DeviationStats:
    """Count objects whose RGB and IR boxes disagree beyond the thresholds.

    ``pairs`` are :class:`~crossalign.simulator.PairedAnnotation` objects with
    both boxes present.
    """
    stats = DeviationStats(pos_px, size_px, angle_deg)
    for p in pairs:
        a, b = p.rgb_box, p.ir_box
        pos = math.hypot(a.cx - b.cx, a.cy - b.cy) > pos_px
        size = abs(a.w - b.w) > size_px or abs(a.h - b.h) > size_px
        ang = math.degrees(angle_gap(a.theta, b.theta)) > angle_deg
        for c in (stats.per_class.setdefault(p.class_id, ClassCounts()), stats.overall):
            c.total += 1
            c.position_dev += pos
            c.size_dev += size
            c.angle_dev += ang
            c.any_dev += pos or size or ang
    return stats
