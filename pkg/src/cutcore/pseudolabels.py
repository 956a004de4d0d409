"""Self-training round bookkeeping and copy-paste sample synthesis.

Round t predictions above the confidence schedule become extra pseudo
ground truth for round t+1; existing ground truth that a retained
prediction duplicates (mask IoU > 0.5) is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .postprocess import bilinear_resize, mask_to_bbox
from .tensor_io import AnnotationSet, InstanceAnnotation

IOU_DEDUP = 0.5

__all__ = [
    "PasteSkippedError",
    "MergeReport",
    "mask_iou",
    "confidence_threshold",
    "merge_round",
    "copy_paste",
]


class PasteSkippedError(RuntimeError):
    """No valid placement found for the scaled instance."""


@dataclass
class MergeReport:
    n_kept_gt: int
    n_dropped_gt: int
    n_added_pred: int
    threshold_used: float


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks of equal shape."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def confidence_threshold(t: int) -> float:
    """Score cutoff for keeping round-t predictions: max(0.75 - 0.5 t, 0)."""
    if not isinstance(t, (int, np.integer)) or isinstance(t, bool):
        raise ValueError(f"round index must be an integer, got {t!r}")
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")
    return max(0.75 - 0.5 * t, 0.0)


def merge_round(gt: AnnotationSet, preds: AnnotationSet, t: int
                ) -> tuple[AnnotationSet, MergeReport]:
    """Merge round-t predictions into the pseudo ground truth.

    Predictions scoring strictly above the schedule are retained; a GT
    annotation is dropped iff its mask IoU with any retained prediction
    exceeds 0.5. The merged set carries round t+1.
    """
    if gt.image_id != preds.image_id:
        raise ValueError(f"image_id mismatch: {gt.image_id} vs {preds.image_id}")
    if (gt.width, gt.height) != (preds.width, preds.height):
        raise ValueError("image size mismatch between gt and preds")
    threshold = confidence_threshold(t)
    retained = [p for p in preds.annotations if p.score > threshold]
    retained_masks = [p.mask for p in retained]
    kept, dropped = [], 0
    for ann in gt.annotations:
        m = ann.mask
        if any(mask_iou(m, pm) > IOU_DEDUP for pm in retained_masks):
            dropped += 1
        else:
            kept.append(ann)
    merged = [
        InstanceAnnotation(list(a.counts), a.size, a.bbox, a.score,
                           source=a.source, round=t + 1)
        for a in kept
    ] + [
        InstanceAnnotation(list(p.counts), p.size, p.bbox, p.score,
                           source=f"round_{t}_prediction", round=t + 1)
        for p in retained
    ]
    out = AnnotationSet(image_id=gt.image_id, width=gt.width, height=gt.height,
                        annotations=merged, round=t + 1)
    report = MergeReport(n_kept_gt=len(kept), n_dropped_gt=dropped,
                         n_added_pred=len(retained), threshold_used=threshold)
    return out, report


def _scale_instance(crop: np.ndarray, mask: np.ndarray, scale: float
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Resize an instance crop and its mask; extents floor to at least 1."""
    h, w = mask.shape
    out_h = max(1, int(h * scale))
    out_w = max(1, int(w * scale))
    if crop.ndim == 2:
        scaled = np.clip(np.rint(bilinear_resize(crop, out_h, out_w)), 0, 255)
        scaled = scaled.astype(np.uint8)
    else:
        planes = [
            np.clip(np.rint(bilinear_resize(crop[:, :, c], out_h, out_w)), 0, 255)
            for c in range(crop.shape[2])
        ]
        scaled = np.stack(planes, axis=2).astype(np.uint8)
    scaled_mask = bilinear_resize(mask.astype(np.float64), out_h, out_w) >= 0.5
    return scaled, scaled_mask


def copy_paste(donor: tuple[np.ndarray, AnnotationSet], host: np.ndarray,
               rng_seed: int, scale: float | None = None,
               position: tuple[int, int] | None = None,
               max_attempts: int = 10
               ) -> tuple[np.ndarray, InstanceAnnotation]:
    """Paste one donor instance into the host image.

    One annotation is chosen uniformly, its crop and mask are shrunk by a
    scalar drawn uniformly from [0.3, 1.0], and the result lands at a
    uniform position fully inside the host. Deterministic for a fixed
    seed; `scale` and `position` pin the draws for tests. Placements that
    cannot fit are resampled up to max_attempts times.
    """
    donor_img, donor_anns = donor
    if not donor_anns.annotations:
        raise ValueError("donor has no annotations")
    if donor_img.shape[:2] != (donor_anns.height, donor_anns.width):
        raise ValueError("donor image does not match its annotation set")
    rng = np.random.default_rng(rng_seed)
    ann = donor_anns.annotations[int(rng.integers(len(donor_anns.annotations)))]
    mask = ann.mask
    x0, y0, bw, bh = (int(round(v)) for v in ann.bbox)
    crop = donor_img[y0:y0 + bh, x0:x0 + bw]
    crop_mask = mask[y0:y0 + bh, x0:x0 + bw]
    host_h, host_w = host.shape[:2]
    for _ in range(max_attempts):
        s = float(rng.uniform(0.3, 1.0)) if scale is None else float(scale)
        scaled, scaled_mask = _scale_instance(crop, crop_mask, s)
        sh, sw = scaled_mask.shape
        if sh > host_h or sw > host_w or not scaled_mask.any():
            if scale is not None:
                break
            continue
        if position is None:
            px = int(rng.integers(0, host_w - sw + 1))
            py = int(rng.integers(0, host_h - sh + 1))
        else:
            px, py = position
            if px < 0 or py < 0 or px + sw > host_w or py + sh > host_h:
                raise ValueError("pinned position places the instance outside the host")
        out = host.copy()
        region = out[py:py + sh, px:px + sw]
        region[scaled_mask] = scaled[scaled_mask]
        full_mask = np.zeros((host_h, host_w), dtype=bool)
        full_mask[py:py + sh, px:px + sw] = scaled_mask
        bbox = mask_to_bbox(full_mask)
        pasted = InstanceAnnotation.from_mask(full_mask, bbox.as_tuple(),
                                              ann.score, source=ann.source,
                                              round=ann.round)
        return out, pasted
    raise PasteSkippedError(
        f"instance does not fit the {host_w}x{host_h} host after {max_attempts} attempts")
