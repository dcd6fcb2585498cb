"""Head decoding, NMS, precision/recall sweeps, AP and mAP."""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .losses import Box, iou, iou_matrix
from .tensor import Tensor, concat, maximum, minimum


class Difficulty(enum.IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    UNRATED = 3


@dataclass(frozen=True)
class Detection:
    box: Box
    class_id: int
    confidence: float
    image_id: int | str = 0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.class_id < 0:
            raise ValueError("classId must be >= 0")


@dataclass(frozen=True)
class GroundTruth:
    box: Box
    class_id: int
    difficulty: Difficulty = Difficulty.UNRATED
    image_id: int | str = 0
    ignore: bool = False  # VOC "difficult" / harder-tier boxes: neither TP nor FN


@dataclass
class PRCurve:
    points: list[tuple[float, float]]  # (recall, precision) per detection prefix
    num_gt: int
    tp: list[bool] = field(default_factory=list)


@dataclass
class EvalResult:
    per_class_ap: dict[int, float | None]
    map: float
    pr_curves: dict[int, list[tuple[float, float]]]
    iou_threshold: float = 0.5

    def to_dict(self) -> dict:
        return {
            "iou_threshold": self.iou_threshold,
            "mAP": self.map,
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "pr_curves": {str(k): [list(p) for p in v] for k, v in sorted(self.pr_curves.items())},
        }


def _order(dets: Sequence[Detection]) -> list[int]:
    # descending confidence, ties by input index
    return sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))


def nms(dets: Sequence[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iouThreshold must lie in (0, 1]")
    kept: list[int] = []
    by_class: dict[tuple, list[int]] = defaultdict(list)
    for i in _order(dets):
        key = (dets[i].image_id, dets[i].class_id)
        if all(iou(dets[i].box, dets[j].box) <= iou_threshold for j in by_class[key]):
            by_class[key].append(i)
            kept.append(i)
    return [dets[i] for i in kept]


def precision_recall(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float = 0.5) -> PRCurve:
    """Greedy confidence-ordered matching; one PR point per counted detection.

    A detection takes the highest-IoU unmatched ground truth of its image and
    class with IoU >= threshold.  Detections that only reach ignored ground
    truths are skipped entirely.
    """
    pool: dict[tuple, list[int]] = defaultdict(list)
    for gi, g in enumerate(gts):
        pool[(g.image_id, g.class_id)].append(gi)
    gt_boxes = np.array([g.box.as_array() for g in gts]).reshape(-1, 4)
    used = np.zeros(len(gts), dtype=bool)
    num_gt = sum(1 for g in gts if not g.ignore)
    tp_count = fp_count = 0
    points: list[tuple[float, float]] = []
    flags: list[bool] = []
    for di in _order(dets):
        d = dets[di]
        cand = pool.get((d.image_id, d.class_id), [])
        best, best_iou, hit_ignored = -1, -1.0, False
        if cand:
            ious = iou_matrix(d.box.as_array(), gt_boxes[cand])[0]
            for gi, ov in zip(cand, ious):
                if ov < iou_threshold:
                    continue
                if gts[gi].ignore:
                    hit_ignored = True
                    continue
                if not used[gi] and ov > best_iou:
                    best, best_iou = gi, ov
        if best >= 0:
            used[best] = True
            tp_count += 1
            flags.append(True)
        elif hit_ignored:
            continue
        else:
            fp_count += 1
            flags.append(False)
        recall = tp_count / num_gt if num_gt else math.nan
        points.append((recall, tp_count / (tp_count + fp_count)))
    return PRCurve(points, num_gt, flags)


def average_precision(curve: PRCurve | Sequence[tuple[float, float]]) -> float | None:
    """All-point interpolated AP: area under the monotone precision envelope.

    Returns ``None`` when the curve has no ground truths (recall undefined).
    """
    if isinstance(curve, PRCurve):
        if curve.num_gt == 0:
            return None
        points = curve.points
    else:
        points = list(curve)
    if not points:
        return 0.0
    rec = np.concatenate([[0.0], [p[0] for p in points], [1.0]])
    prec = np.concatenate([[0.0], [p[1] for p in points], [0.0]])
    prec = np.maximum.accumulate(prec[::-1])[::-1]
    changed = np.nonzero(rec[1:] != rec[:-1])[0]
    return float(np.sum((rec[changed + 1] - rec[changed]) * prec[changed + 1]))


def mean_ap(per_class_ap: dict[int, float | None] | Iterable[float | None]) -> float:
    values = per_class_ap.values() if isinstance(per_class_ap, dict) else per_class_ap
    defined = [v for v in values if v is not None]
    if not defined:
        raise ValueError("no class has a defined AP")
    return float(sum(defined) / len(defined))


def evaluate(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float = 0.5,
             classes: Iterable[int] | None = None) -> EvalResult:
    class_ids = set(classes) if classes is not None else {g.class_id for g in gts} | {d.class_id for d in dets}
    per_class: dict[int, float | None] = {}
    curves: dict[int, list[tuple[float, float]]] = {}
    for c in sorted(class_ids):
        curve = precision_recall([d for d in dets if d.class_id == c], [g for g in gts if g.class_id == c],
                                 iou_threshold)
        per_class[c] = average_precision(curve)
        curves[c] = curve.points
    defined = [v for v in per_class.values() if v is not None]
    return EvalResult(per_class, mean_ap(per_class) if defined else 0.0, curves, iou_threshold)


def evaluate_by_difficulty(dets, gts, iou_threshold: float = 0.5, classes=None) -> dict[str, EvalResult]:
    """KITTI-style tiers: a tier counts ground truths at or below its
    difficulty; harder ones become ignore regions."""
    out = {}
    for tier in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        tier_gts = [
            GroundTruth(g.box, g.class_id, g.difficulty, g.image_id, g.ignore or g.difficulty > tier) for g in gts
        ]
        out[tier.name.lower()] = evaluate(dets, tier_gts, iou_threshold, classes)
    return out


# ---------------------------------------------------------------------------
# head decoding
# ---------------------------------------------------------------------------


TW_CLIP = 6.0


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode_boxes(reg: np.ndarray, stride: float) -> np.ndarray:
    """Corner boxes [B,H,W,4] from raw regression maps [B,4,H,W].

    Center = (cell + sigmoid(t)) * stride; size = stride * exp(t).
    """
    b, _, h, w = reg.shape
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    cx = (jj + _sigmoid(reg[:, 0])) * stride
    cy = (ii + _sigmoid(reg[:, 1])) * stride
    bw = stride * np.exp(np.clip(reg[:, 2], -TW_CLIP, TW_CLIP))
    bh = stride * np.exp(np.clip(reg[:, 3], -TW_CLIP, TW_CLIP))
    return np.stack([cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], axis=-1)


def decode_boxes_at(reg: Tensor, cells, stride: float) -> Tensor:
    """Differentiable decode of the cells ``(b, i, j)``; returns [K,4] corners."""
    b, i, j = cells
    t = reg.transpose(0, 2, 3, 1)[(b, i, j)]  # [K,4]
    cx = (t[:, 0].sigmoid() + Tensor(j.astype(np.float64))) * float(stride)
    cy = (t[:, 1].sigmoid() + Tensor(i.astype(np.float64))) * float(stride)
    bw = minimum(maximum(t[:, 2], -TW_CLIP), TW_CLIP).exp() * float(stride)
    bh = minimum(maximum(t[:, 3], -TW_CLIP), TW_CLIP).exp() * float(stride)
    half_w, half_h = bw * 0.5, bh * 0.5
    cols = [cx - half_w, cy - half_h, cx + half_w, cy + half_h]
    return concat([c.reshape(-1, 1) for c in cols], axis=1)


def encode_box(box: Box, stride: float) -> tuple[int, int, np.ndarray]:
    """Inverse of the decode map: owning cell (row, col) and raw targets."""
    cx, cy = (box.x1 + box.x2) / 2, (box.y1 + box.y2) / 2
    col, row = int(math.floor(cx / stride)), int(math.floor(cy / stride))
    fx, fy = cx / stride - col, cy / stride - row
    eps = 1e-9
    fx, fy = min(max(fx, eps), 1 - eps), min(max(fy, eps), 1 - eps)
    t = np.array([
        math.log(fx / (1 - fx)), math.log(fy / (1 - fy)),
        math.log(max(box.width, eps) / stride), math.log(max(box.height, eps) / stride),
    ])
    return row, col, t


def decode_head(cls_map, reg_map, obj_map, stride: float, conf_threshold: float = 0.25) -> list[Detection]:
    """Detections above ``conf_threshold``; image ids are batch indices."""
    cls_map = cls_map.data if isinstance(cls_map, Tensor) else np.asarray(cls_map, dtype=np.float64)
    reg_map = reg_map.data if isinstance(reg_map, Tensor) else np.asarray(reg_map, dtype=np.float64)
    obj_map = obj_map.data if isinstance(obj_map, Tensor) else np.asarray(obj_map, dtype=np.float64)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    cls_p = _sigmoid(cls_map)
    conf = _sigmoid(obj_map[:, 0]) * cls_p.max(axis=1)
    cls_id = cls_p.argmax(axis=1)
    boxes = decode_boxes(reg_map, stride)
    out = []
    for b, i, j in zip(*np.nonzero(conf >= conf_threshold)):
        x1, y1, x2, y2 = boxes[b, i, j]
        out.append(Detection(Box(x1, y1, x2, y2), int(cls_id[b, i, j]), float(min(conf[b, i, j], 1.0)), int(b)))
    return out


def format_detections(dets: Iterable[Detection]) -> str:
    """Dump lines ``classId confidence x1 y1 x2 y2``."""
    return "".join(
        f"{d.class_id} {d.confidence:.6f} {d.box.x1:.4f} {d.box.y1:.4f} {d.box.x2:.4f} {d.box.y2:.4f}\n" for d in dets
    )


def parse_detections(text: str, image_id: int | str = 0) -> list[Detection]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 6:
            raise ValueError(f"line {lineno}: expected 6 fields 'classId confidence x1 y1 x2 y2', got {len(parts)}")
        try:
            cid, conf = int(parts[0]), float(parts[1])
            x1, y1, x2, y2 = map(float, parts[2:])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        out.append(Detection(Box(x1, y1, x2, y2), cid, conf, image_id))
    return out
