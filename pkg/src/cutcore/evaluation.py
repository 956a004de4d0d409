"""Class-agnostic detection/segmentation metrics over the 0.50:0.05:0.95
IoU grid: greedy highest-IoU matching, 101-point interpolated average
precision, and average recall at 100 detections per image."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .droploss import box_iou
from .postprocess import BoundingBox
from .pseudolabels import mask_iou
from .tensor_io import AnnotationSet, InstanceAnnotation

IOU_GRID = np.linspace(0.5, 0.95, 10)
RECALL_GRID = np.linspace(0.0, 1.0, 101)
MAX_DETS = 100
AREA_RANGES = {
    "all": (0.0, 1e10),
    "small": (0.0, 32.0 ** 2),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, 1e10),
}

__all__ = [
    "EvalResult",
    "match_greedy",
    "average_precision",
    "evaluate",
    "IOU_GRID",
    "RECALL_GRID",
]


@dataclass
class EvalResult:
    ap: float
    ap50: float
    ap75: float
    ar100: float
    ap_small: float
    ap_medium: float
    ap_large: float
    # per IoU threshold: precision sampled on RECALL_GRID (area=all)
    pr_curves: dict[float, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> dict:
        values = {
            "ap": self.ap, "ap50": self.ap50, "ap75": self.ap75,
            "ar100": self.ar100, "ap_small": self.ap_small,
            "ap_medium": self.ap_medium, "ap_large": self.ap_large,
        }
        # undefined metrics (no ground truth in range) become JSON null
        return {k: (None if not np.isfinite(v) else v) for k, v in values.items()}


def _pairwise_iou(dts: list[InstanceAnnotation], gts: list[InstanceAnnotation],
                  iou_kind: str) -> np.ndarray:
    if iou_kind == "box":
        return np.array(
            [[box_iou(BoundingBox(*d.bbox), BoundingBox(*g.bbox)) for g in gts]
             for d in dts], dtype=np.float64).reshape(len(dts), len(gts))
    if iou_kind == "mask":
        gt_masks = [g.mask for g in gts]
        return np.array(
            [[mask_iou(dm, gm) for gm in gt_masks]
             for dm in (d.mask for d in dts)],
            dtype=np.float64).reshape(len(dts), len(gts))
    raise ValueError(f"iou_kind must be 'box' or 'mask', got {iou_kind!r}")


def _sort_by_score(anns: list[InstanceAnnotation]) -> list[int]:
    scores = np.array([a.score for a in anns], dtype=np.float64)
    return list(np.argsort(-scores, kind="mergesort"))


def match_greedy(preds: list[InstanceAnnotation], gts: list[InstanceAnnotation],
                 iou_thresh: float, iou_kind: str = "box") -> np.ndarray:
    """One-to-one greedy matching in descending score order.

    Each prediction takes the still-unmatched ground truth of highest
    IoU >= iou_thresh (score ties broken stably by input index). Returns
    the matched gt index per prediction, aligned with the input order,
    -1 for unmatched.
    """
    order = _sort_by_score(preds)
    iou = _pairwise_iou(preds, gts, iou_kind)
    matches = np.full(len(preds), -1, dtype=np.int64)
    taken = np.zeros(len(gts), dtype=bool)
    for di in order:
        best = min(iou_thresh, 1.0 - 1e-10)
        best_gt = -1
        for gi in range(len(gts)):
            if taken[gi] or iou[di, gi] < best:
                continue
            best = iou[di, gi]
            best_gt = gi
        if best_gt >= 0:
            taken[best_gt] = True
            matches[di] = best_gt
    return matches


def average_precision(tp_flags, n_gt: int) -> float | None:
    """101-point interpolated AP from truth flags in descending-score order.

    Precision is monotonized right-to-left and sampled at the standard
    recall grid. Returns None when there is no ground truth (metric
    undefined, excluded from averages).
    """
    if n_gt < 0:
        raise ValueError("n_gt must be >= 0")
    if n_gt == 0:
        return None
    tp = np.asarray(tp_flags, dtype=bool)
    if tp.size == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum + np.spacing(1))
    for i in range(precision.size - 1, 0, -1):
        precision[i - 1] = max(precision[i - 1], precision[i])
    sampled = np.zeros(RECALL_GRID.size)
    inds = np.searchsorted(recall, RECALL_GRID, side="left")
    valid = inds < precision.size
    sampled[valid] = precision[inds[valid]]
    return float(sampled.mean())


def _match_image(dts, gts, iou, gt_ignore, area_lo, area_hi):
    """COCO-style per-image matching over the whole IoU grid.

    Returns (dt_matched, dt_ignored) arrays of shape (T, D): ignored
    detections are those matched to ignored gts, or unmatched with area
    outside the range.
    """
    n_t = IOU_GRID.size
    n_d = len(dts)
    n_g = len(gts)
    gt_order = list(np.argsort(gt_ignore, kind="mergesort"))
    dt_matched = np.zeros((n_t, n_d), dtype=bool)
    dt_ignored = np.zeros((n_t, n_d), dtype=bool)
    areas = np.array([d.area for d in dts], dtype=np.float64)
    outside = (areas < area_lo) | (areas > area_hi)
    for ti, thr in enumerate(IOU_GRID):
        taken = np.zeros(n_g, dtype=bool)
        for di in range(n_d):
            best = min(thr, 1.0 - 1e-10)
            best_gt = -1
            for gi in gt_order:
                if taken[gi]:
                    continue
                # past non-ignored gts, a real match cannot improve
                if best_gt >= 0 and not gt_ignore[best_gt] and gt_ignore[gi]:
                    break
                if iou[di, gi] < best:
                    continue
                best = iou[di, gi]
                best_gt = gi
            if best_gt >= 0:
                taken[best_gt] = True
                dt_matched[ti, di] = True
                dt_ignored[ti, di] = gt_ignore[best_gt]
        dt_ignored[ti] |= ~dt_matched[ti] & outside
    return dt_matched, dt_ignored


def evaluate(preds: list[AnnotationSet], gts: list[AnnotationSet],
             iou_kind: str = "box") -> EvalResult:
    """Class-agnostic evaluation of prediction sets against ground truth."""
    gt_by_id: dict[str, AnnotationSet] = {}
    for s in gts:
        if s.image_id in gt_by_id:
            raise ValueError(f"duplicate gt image_id {s.image_id!r}")
        gt_by_id[s.image_id] = s
    pred_by_id: dict[str, AnnotationSet] = {}
    for s in preds:
        if s.image_id in pred_by_id:
            raise ValueError(f"duplicate pred image_id {s.image_id!r}")
        if s.image_id not in gt_by_id:
            raise ValueError(f"prediction for unknown image_id {s.image_id!r}")
        pred_by_id[s.image_id] = s

    per_image = []  # (dt scores desc, per-range match data, gt areas)
    for image_id in sorted(gt_by_id):
        gt_anns = gt_by_id[image_id].annotations
        dt_set = pred_by_id.get(image_id)
        dt_anns = dt_set.annotations if dt_set else []
        order = _sort_by_score(dt_anns)[:MAX_DETS]
        dt_sorted = [dt_anns[i] for i in order]
        iou = _pairwise_iou(dt_sorted, gt_anns, iou_kind)
        gt_areas = np.array([g.area for g in gt_anns], dtype=np.float64)
        scores = np.array([d.score for d in dt_sorted], dtype=np.float64)
        ranges = {}
        for name, (lo, hi) in AREA_RANGES.items():
            gt_ignore = (gt_areas < lo) | (gt_areas > hi)
            matched, ignored = _match_image(dt_sorted, gt_anns, iou,
                                            gt_ignore, lo, hi)
            ranges[name] = (matched, ignored, int((~gt_ignore).sum()))
        per_image.append((scores, ranges))

    def accumulate(range_name: str):
        """Per-IoU (AP, final recall, PR curve) for one area range."""
        all_scores = np.concatenate([s for s, _ in per_image]) if per_image \
            else np.zeros(0)
        order = np.argsort(-all_scores, kind="mergesort")
        aps, recalls, curves = [], [], []
        npig = sum(r[range_name][2] for _, r in per_image)
        for ti in range(IOU_GRID.size):
            matched = np.concatenate(
                [r[range_name][0][ti] for _, r in per_image]) if per_image \
                else np.zeros(0, dtype=bool)
            ignored = np.concatenate(
                [r[range_name][1][ti] for _, r in per_image]) if per_image \
                else np.zeros(0, dtype=bool)
            matched = matched[order]
            ignored = ignored[order]
            keep = ~ignored
            tp_cum = np.cumsum(matched[keep])
            fp_cum = np.cumsum(~matched[keep])
            if npig == 0:
                aps.append(None)
                recalls.append(None)
                curves.append(np.zeros(RECALL_GRID.size))
                continue
            recall = tp_cum / npig
            precision = tp_cum / (tp_cum + fp_cum + np.spacing(1))
            for i in range(precision.size - 1, 0, -1):
                precision[i - 1] = max(precision[i - 1], precision[i])
            sampled = np.zeros(RECALL_GRID.size)
            inds = np.searchsorted(recall, RECALL_GRID, side="left")
            valid = inds < precision.size
            sampled[valid] = precision[inds[valid]]
            aps.append(float(sampled.mean()))
            recalls.append(float(recall[-1]) if recall.size else 0.0)
            curves.append(sampled)
        return aps, recalls, curves

    def mean_defined(values) -> float:
        defined = [v for v in values if v is not None]
        return float(np.mean(defined)) if defined else float("nan")

    aps_all, recalls_all, curves_all = accumulate("all")
    result = EvalResult(
        ap=mean_defined(aps_all),
        ap50=aps_all[0] if aps_all[0] is not None else float("nan"),
        ap75=aps_all[5] if aps_all[5] is not None else float("nan"),
        ar100=mean_defined(recalls_all),
        ap_small=mean_defined(accumulate("small")[0]),
        ap_medium=mean_defined(accumulate("medium")[0]),
        ap_large=mean_defined(accumulate("large")[0]),
        pr_curves={float(t): c for t, c in zip(IOU_GRID, curves_all)},
    )
    return result
