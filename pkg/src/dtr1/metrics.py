"""Mask and bounding-box metrics for reward correctness and evaluation.

Conventions (flagged because the source benchmarks only name the metrics):
the per-sample mean IoU is reported as gIoU, the cumulative
sum-of-intersections over sum-of-unions as cIoU, region similarity J is
mask IoU, and contour accuracy F is a boundary F-measure with a small
Chebyshev matching tolerance proportional to the image diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from . import _kernels
from .masks import BinaryMask, MaskError


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("bounding box must have positive extent")
        if self.x_min < 0 or self.y_min < 0:
            raise ValueError("bounding box coordinates must be non-negative")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def to_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, coords: Sequence[float]) -> "BoundingBox":
        if len(coords) != 4:
            raise ValueError("bounding box needs exactly four coordinates")
        return cls(*(float(c) for c in coords))


@dataclass(frozen=True)
class MetricReport:
    giou: float
    ciou: float
    j_mean: Optional[float]
    f_mean: Optional[float]
    per_sample: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "giou": self.giou,
            "ciou": self.ciou,
            "j_mean": self.j_mean,
            "f_mean": self.f_mean,
            "per_sample": list(self.per_sample),
        }


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; two empty masks agree perfectly (1.0)."""
    if (a.width, a.height) != (b.width, b.height):
        raise MaskError(
            f"dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    inter, union = _kernels.iou_counts(a.decode(), b.decode())
    if union == 0:
        return 1.0
    return inter / union


def bbox_iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def default_boundary_radius(width: int, height: int) -> int:
    return max(1, round(0.0075 * math.hypot(width, height)))


def boundary_f(pred: BinaryMask, gt: BinaryMask, radius: Optional[int] = None) -> float:
    """Boundary F-measure with Chebyshev matching tolerance `radius`."""
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise MaskError(
            f"dimension mismatch: {pred.width}x{pred.height} vs {gt.width}x{gt.height}"
        )
    if radius is None:
        radius = default_boundary_radius(pred.width, pred.height)
    if radius < 0:
        raise ValueError("radius must be non-negative")
    pb = _kernels.boundary_map(pred.decode())
    gb = _kernels.boundary_map(gt.decode())
    pred_matched, pred_total, gt_matched, gt_total = _kernels.boundary_match_counts(
        pb, gb, radius
    )
    if pred_total == 0 and gt_total == 0:
        return 1.0
    if pred_total == 0 or gt_total == 0:
        return 0.0
    precision = pred_matched / pred_total
    recall = gt_matched / gt_total
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def aggregate(pairs: Sequence[tuple]) -> MetricReport:
    """Aggregate (prediction, ground truth) pairs of masks or of boxes.

    For masks: gIoU is the per-pair mean, cIoU cumulative, J equals gIoU,
    and F is the mean boundary F-measure. For boxes the cumulative form
    uses areas, and J/F are not defined.
    """
    if not pairs:
        raise ValueError("cannot aggregate an empty pair list")
    first_pred = pairs[0][0]
    if isinstance(first_pred, BinaryMask):
        ious = []
        fs = []
        inter_sum = 0
        union_sum = 0
        for pred, gt in pairs:
            ious.append(mask_iou(pred, gt))
            fs.append(boundary_f(pred, gt))
            inter, union = _kernels.iou_counts(pred.decode(), gt.decode())
            inter_sum += inter
            union_sum += union
        giou = sum(ious) / len(ious)
        ciou = 1.0 if union_sum == 0 else inter_sum / union_sum
        return MetricReport(
            giou=giou,
            ciou=ciou,
            j_mean=giou,
            f_mean=sum(fs) / len(fs),
            per_sample=tuple(ious),
        )
    if isinstance(first_pred, BoundingBox):
        ious = []
        inter_sum = 0.0
        union_sum = 0.0
        for pred, gt in pairs:
            iou = bbox_iou(pred, gt)
            ious.append(iou)
            ix = min(pred.x_max, gt.x_max) - max(pred.x_min, gt.x_min)
            iy = min(pred.y_max, gt.y_max) - max(pred.y_min, gt.y_min)
            inter = ix * iy if (ix > 0 and iy > 0) else 0.0
            inter_sum += inter
            union_sum += pred.area + gt.area - inter
        return MetricReport(
            giou=sum(ious) / len(ious),
            ciou=1.0 if union_sum == 0 else inter_sum / union_sum,
            j_mean=None,
            f_mean=None,
            per_sample=tuple(ious),
        )
    raise TypeError("pairs must contain BinaryMask or BoundingBox values")
