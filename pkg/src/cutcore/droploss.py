"""Loss-dropping indicator: a predicted region keeps its loss only when it
overlaps some pseudo-ground-truth box by more than tau_iou, so regions
exploring unlabeled objects are never penalized."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .postprocess import BoundingBox

DEFAULT_TAU_IOU = 0.01

__all__ = ["RegionPrediction", "DropDecision", "box_iou", "drop_loss"]


@dataclass(frozen=True)
class RegionPrediction:
    """A predicted region with its externally supplied per-region loss."""

    bbox: BoundingBox
    loss_value: float

    def __post_init__(self):
        if self.loss_value < 0:
            raise ValueError("loss_value must be >= 0")


@dataclass
class DropDecision:
    keep: np.ndarray  # bool per region
    max_iou: np.ndarray  # float per region
    effective_loss: float


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; symmetric, in [0, 1]."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return float(inter / union)


def drop_loss(preds: list[RegionPrediction], gt: list[BoundingBox],
              tau_iou: float = DEFAULT_TAU_IOU,
              iou: np.ndarray | None = None) -> DropDecision:
    """Gate per-region losses by max overlap with the ground truth.

    keep_i is true iff max_j IoU(pred_i, gt_j) strictly exceeds tau_iou;
    with no ground truth every region is dropped. `iou` optionally
    supplies a precomputed (n_preds, n_gt) overlap matrix (e.g. mask IoU)
    in place of box IoU.
    """
    if not 0.0 <= tau_iou < 1.0:
        raise ValueError(f"tau_iou must be in [0, 1), got {tau_iou}")
    n = len(preds)
    if iou is None:
        iou = np.array([[box_iou(p.bbox, g) for g in gt] for p in preds],
                       dtype=np.float64).reshape(n, len(gt))
    else:
        iou = np.asarray(iou, dtype=np.float64)
        if iou.shape != (n, len(gt)):
            raise ValueError(f"iou matrix shape {iou.shape} != ({n}, {len(gt)})")
    max_iou = iou.max(axis=1) if len(gt) else np.zeros(n)
    keep = max_iou > tau_iou
    losses = np.array([p.loss_value for p in preds], dtype=np.float64)
    return DropDecision(keep=keep, max_iou=max_iou,
                        effective_loss=float(losses[keep].sum()))
