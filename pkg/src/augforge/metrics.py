"""Detection and segmentation robustness metrics.

Detections are matched to ground truth greedily: within each image and class,
detections are visited by descending confidence (input order breaks ties) and
each claims the unmatched ground-truth box with the highest IoU at or above
the threshold (lowest index breaks ties).

Average precision uses all-point right-envelope interpolation anchored at
recall 0::

    AP = sum_i (r[i+1] - r[i]) * max_{j >= i+1} p[j]

Classes without ground truth have undefined AP and are left out of class
means.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import NoGroundTruth, NoPredictions, ShapeMismatch, ValidationError
from .scene_io import BoxAnnotation, read_jsonl

COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DEFAULT_MATCH_IOU = 0.5


@dataclass(frozen=True)
class Detection:
    class_id: int
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float = 1.0
    image_id: str = ""

    def __post_init__(self) -> None:
        # reuse box validation
        BoxAnnotation(self.class_id, self.x_min, self.y_min, self.x_max, self.y_max)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence must lie in [0,1], got {self.confidence}")

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "class_id": int(self.class_id),
            "x_min": self.x_min,
            "y_min": self.y_min,
            "x_max": self.x_max,
            "y_max": self.y_max,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Detection":
        try:
            return cls(
                class_id=d["class_id"],
                x_min=float(d["x_min"]),
                y_min=float(d["y_min"]),
                x_max=float(d["x_max"]),
                y_max=float(d["y_max"]),
                confidence=float(d.get("confidence", 1.0)),
                image_id=str(d.get("image_id", "")),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed detection record {dict(d)!r}") from exc


def load_detections(path) -> list:
    """Predictions or ground truth from JSONL; ``confidence`` defaults to 1."""
    return [Detection.from_dict(r) for r in read_jsonl(path)]


def iou(a, b) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter
    return inter / union if union > 0 else 0.0


@dataclass
class MatchResult:
    det_tp: list = field(default_factory=list)  # per detection, input order
    gt_matched: list = field(default_factory=list)  # per ground truth, input order

    @property
    def tp(self) -> int:
        return sum(self.det_tp)

    @property
    def fp(self) -> int:
        return len(self.det_tp) - self.tp

    @property
    def fn(self) -> int:
        return len(self.gt_matched) - sum(self.gt_matched)

    def counts(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn}


def confidence_order(preds: Sequence[Detection]) -> list:
    """Indices by descending confidence, stable on input order."""
    return sorted(range(len(preds)), key=lambda i: -preds[i].confidence)


def match_detections(preds: Sequence[Detection], gts: Sequence, iou_threshold: float = DEFAULT_MATCH_IOU) -> MatchResult:
    if not 0 < iou_threshold <= 1:
        raise ValidationError(f"iou_threshold must lie in (0,1], got {iou_threshold}")
    by_key: dict = {}
    for j, g in enumerate(gts):
        by_key.setdefault((getattr(g, "image_id", ""), g.class_id), []).append(j)
    matched = [False] * len(gts)
    det_tp = [False] * len(preds)
    for i in confidence_order(preds):
        d = preds[i]
        best_j, best_iou = -1, -1.0
        for j in by_key.get((d.image_id, d.class_id), ()):
            if matched[j]:
                continue
            v = iou(d, gts[j])
            if v >= iou_threshold and v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0:
            matched[best_j] = True
            det_tp[i] = True
    return MatchResult(det_tp, matched)


def _select(items: Sequence, class_id: int) -> list:
    return [x for x in items if x.class_id == class_id]


def average_precision(preds: Sequence[Detection], gts: Sequence, class_id: int, iou_threshold: float) -> float:
    class_gts = _select(gts, class_id)
    if not class_gts:
        raise NoGroundTruth(f"class {class_id} has no ground truth; AP undefined")
    class_preds = _select(preds, class_id)
    if not class_preds:
        return 0.0
    match = match_detections(class_preds, class_gts, iou_threshold)
    order = confidence_order(class_preds)
    hits = np.array([match.det_tp[i] for i in order], dtype=np.float64)
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    recall = np.concatenate(([0.0], tp / len(class_gts)))
    precision = np.concatenate(([1.0], tp / (tp + fp)))
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum((recall[1:] - recall[:-1]) * envelope[1:]))


def mean_ap(preds: Sequence[Detection], gts: Sequence, iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS) -> dict:
    """``{"map", "map50", "per_class"}``; ``map``/``map50`` are None when no
    class has ground truth."""
    thresholds = list(iou_thresholds)
    if not thresholds:
        raise ValidationError("iou_thresholds must be non-empty")
    classes = sorted({g.class_id for g in gts})
    per_class = {}
    for c in classes:
        aps = [average_precision(preds, gts, c, t) for t in thresholds]
        per_class[c] = {"ap": sum(aps) / len(aps), "ap50": average_precision(preds, gts, c, 0.5)}
    if not per_class:
        return {"map": None, "map50": None, "per_class": {}}
    return {
        "map": sum(v["ap"] for v in per_class.values()) / len(per_class),
        "map50": sum(v["ap50"] for v in per_class.values()) / len(per_class),
        "per_class": per_class,
    }


def vanishing_ratio(match: MatchResult) -> float:
    denom = match.tp + match.fn
    if denom == 0:
        raise NoGroundTruth("vanishing ratio undefined without ground truth")
    return match.fn / denom


def fabrication_ratio(match: MatchResult) -> float:
    denom = match.tp + match.fp
    if denom == 0:
        raise NoPredictions("fabrication ratio undefined without predictions")
    return match.fp / denom


def detection_report(
    preds: Sequence[Detection],
    gts: Sequence,
    iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
    match_iou: float = DEFAULT_MATCH_IOU,
) -> dict:
    """mAP, mAP50, VR and FR in one record; undefined values are None."""
    ap = mean_ap(preds, gts, iou_thresholds)
    match = match_detections(preds, gts, match_iou)
    try:
        vr: Optional[float] = vanishing_ratio(match)
    except NoGroundTruth:
        vr = None
    try:
        fr: Optional[float] = fabrication_ratio(match)
    except NoPredictions:
        fr = None
    return {
        "map": ap["map"],
        "map50": ap["map50"],
        "vr": vr,
        "fr": fr,
        "counts": match.counts(),
        "per_class": {str(c): v for c, v in ap["per_class"].items()},
        "iou_thresholds": list(iou_thresholds),
        "match_iou": match_iou,
        "note": "classes without ground truth are excluded from class means",
    }


# ---------------------------------------------------------------- segmentation

@dataclass(frozen=True)
class SegPrediction:
    pred_map: np.ndarray
    gt_map: np.ndarray
    num_classes: int
    ignore_index: Optional[int] = None

    def __post_init__(self) -> None:
        if np.shape(self.pred_map) != np.shape(self.gt_map):
            raise ShapeMismatch(f"prediction shape {np.shape(self.pred_map)} != ground truth {np.shape(self.gt_map)}")
        for name, m in (("pred_map", self.pred_map), ("gt_map", self.gt_map)):
            m = np.asarray(m)
            bad = (m >= self.num_classes) & (m != (-1 if self.ignore_index is None else self.ignore_index))
            if np.any(bad) or np.any(m < 0):
                raise ValidationError(f"{name} has class values outside [0,{self.num_classes}) and not ignore_index")


def confusion_counts(seg: SegPrediction) -> tuple:
    """Per-class ``(intersection, union, gt_pixels)`` integer arrays."""
    gt = np.asarray(seg.gt_map).astype(np.int64).ravel()
    pred = np.asarray(seg.pred_map).astype(np.int64).ravel()
    keep = np.ones_like(gt, dtype=bool) if seg.ignore_index is None else gt != seg.ignore_index
    gt, pred = gt[keep], pred[keep]
    n = seg.num_classes
    in_range = pred < n
    inter = np.bincount(gt[in_range & (gt == pred)], minlength=n)[:n]
    gt_count = np.bincount(gt, minlength=n)[:n]
    pred_count = np.bincount(pred[in_range], minlength=n)[:n]
    return inter, gt_count + pred_count - inter, gt_count


def miou(seg_predictions: Iterable[SegPrediction]) -> dict:
    """Dataset-level IoU per class and their mean over classes present in the
    ground truth. The mean is computed exactly from integer counts."""
    inter = union = gt_count = None
    num_classes = None
    for seg in seg_predictions:
        if num_classes is None:
            num_classes = seg.num_classes
        elif seg.num_classes != num_classes:
            raise ValidationError("all predictions must share num_classes")
        i, u, g = confusion_counts(seg)
        inter = i if inter is None else inter + i
        union = u if union is None else union + u
        gt_count = g if gt_count is None else gt_count + g
    if num_classes is None:
        raise ValidationError("no segmentation predictions given")
    per_class = {c: int(inter[c]) / int(union[c]) for c in range(num_classes) if union[c] > 0}
    present = [c for c in range(num_classes) if gt_count[c] > 0]
    if not present:
        return {"miou": None, "per_class_iou": per_class}
    exact = sum(Fraction(int(inter[c]), int(union[c])) for c in present) / len(present)
    return {"miou": float(exact), "per_class_iou": per_class}
