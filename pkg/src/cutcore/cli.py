"""Batch front-end wiring the pipeline stages over directories of images,
feature tensors and annotation files."""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import droploss as dl
from . import evaluation, maskcut, postprocess, pseudolabels, report, tensor_io

JOBS_ENV = "CUTLER_CORE_JOBS"
IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm")

# fixed overlay palette, cycled per instance
PALETTE = [
    (230, 60, 60), (60, 160, 230), (60, 200, 90), (240, 180, 40),
    (170, 90, 220), (250, 120, 40), (70, 210, 210), (230, 100, 180),
]

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


@dataclass
class PipelineConfig:
    tau_ncut: float = 0.15
    n_masks: int = 3
    image_size: int = 480
    tau_iou: float = 0.01
    rounds: int = 3
    rng_seed: int = 0
    crf: postprocess.CrfParams = field(default_factory=postprocess.CrfParams)


def load_config_file(path) -> dict:
    """Parse `key = value` lines; '#' starts a comment."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def build_config(config_path=None, **overrides) -> PipelineConfig:
    """Defaults, overridden by the config file, overridden by flags."""
    cfg = PipelineConfig()
    if config_path:
        raw = load_config_file(config_path)
        scalar_fields = {f.name: f.type for f in dataclasses.fields(PipelineConfig)
                         if f.name != "crf"}
        crf_fields = {f.name for f in dataclasses.fields(postprocess.CrfParams)}
        for key, text in raw.items():
            if key in scalar_fields:
                kind = type(getattr(cfg, key))
                setattr(cfg, key, kind(float(text)) if kind is int else kind(text))
            elif key.startswith("crf_") and key[4:] in crf_fields:
                name = key[4:]
                kind = type(getattr(cfg.crf, name))
                setattr(cfg.crf, name, kind(float(text)) if kind is int else kind(text))
            else:
                raise ValueError(f"unknown config key {key!r}")
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    cfg.crf.validate()
    return cfg


def _resolve_jobs(jobs: int | None) -> int:
    if jobs is not None:
        return max(1, jobs)
    env = os.environ.get(JOBS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _discover_pairs(features_dir: Path, images_dir: Path):
    """Pair feature tensors and images by stem; report one-sided stems."""
    feats = {p.stem: p for p in sorted(features_dir.glob("*.ctf"))}
    images = {p.stem: p
              for suffix in IMAGE_SUFFIXES
              for p in sorted(images_dir.glob(f"*{suffix}"))}
    pairs, errors = [], {}
    for stem in sorted(set(feats) | set(images)):
        if stem not in feats:
            errors[stem] = "missing feature tensor"
        elif stem not in images:
            errors[stem] = "missing image"
        else:
            pairs.append((stem, feats[stem], images[stem]))
    return pairs, errors


def _maskcut_one(task) -> tuple[str, dict | None, str | None, int]:
    """Worker: run discovery on one (image_id, feature path, image path);
    returns (image_id, document, error, overlapping pixel count)."""
    stem, feat_path, img_path, tau_ncut, n_masks, use_crf, crf_params = task
    try:
        with open(feat_path, "rb") as fh:
            features = tensor_io.read_tensor(fh)
        if features.ndim != 3:
            raise ValueError(f"feature tensor must be rank 3, got {features.ndim}")
        with open(img_path, "rb") as fh:
            image = tensor_io.read_image(fh)
        height, width = image.shape[:2]
        result = maskcut.maskcut(features, n_masks=n_masks, tau_ncut=tau_ncut)
        annotations = []
        coverage = np.zeros((height, width), dtype=np.uint16)
        for patch_mask, eigen in zip(result.masks, result.eigen):
            score = postprocess.score_mask(eigen, patch_mask)
            pixel_mask = postprocess.upsample_mask(patch_mask, width, height)
            if use_crf:
                pixel_mask = postprocess.crf_refine(image, pixel_mask, crf_params)
            if not pixel_mask.any():
                continue
            coverage += pixel_mask
            bbox = postprocess.mask_to_bbox(pixel_mask)
            annotations.append(tensor_io.InstanceAnnotation.from_mask(
                pixel_mask, bbox.as_tuple(), score, source="maskcut", round=0))
        doc = tensor_io.AnnotationSet(image_id=stem, width=width, height=height,
                                      annotations=annotations, round=0)
        doc.validate()
        # masks are refined independently; overlaps are reported, not resolved
        overlap_px = int((coverage >= 2).sum())
        return stem, doc.to_dict(), None, overlap_px
    except Exception as exc:  # per-image failures must not kill the batch
        return stem, None, f"{type(exc).__name__}: {exc}", 0


def cmd_maskcut(args) -> int:
    try:
        cfg = build_config(args.config, tau_ncut=args.tau_ncut,
                           n_masks=args.num_masks)
        features_dir = Path(args.features)
        images_dir = Path(args.images)
        if not features_dir.is_dir() or not images_dir.is_dir():
            raise FileNotFoundError("features/images directory not found")
        pairs, errors = _discover_pairs(features_dir, images_dir)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    tasks = [(stem, feat, img, cfg.tau_ncut, cfg.n_masks,
              not args.no_crf, cfg.crf) for stem, feat, img in pairs]
    jobs = _resolve_jobs(args.jobs)
    docs = {}
    overlap_px = 0
    if jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_maskcut_one, tasks))
    else:
        outcomes = [_maskcut_one(t) for t in tasks]
    for stem, doc, err, overlap in outcomes:
        if err is None:
            docs[stem] = doc
            overlap_px += overlap
        else:
            errors[stem] = err
    for stem in sorted(errors):
        print(f"error: {stem}: {errors[stem]}", file=sys.stderr)

    ordered = [docs[stem] for stem in sorted(docs)]
    with open(args.out, "w", encoding="ascii") as fh:
        json.dump(ordered, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    print(json.dumps({"images": len(ordered), "failed": len(errors),
                      "annotations": sum(len(d["annotations"]) for d in ordered),
                      "overlap_pixels": overlap_px}))
    return EXIT_PARTIAL if errors else EXIT_OK


def cmd_merge(args) -> int:
    try:
        gt_sets = {s.image_id: s for s in tensor_io.load_annotation_sets(args.gt)}
        pred_sets = {s.image_id: s
                     for s in tensor_io.load_annotation_sets(args.preds)}
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    merged_sets = []
    totals = {"n_kept_gt": 0, "n_dropped_gt": 0, "n_added_pred": 0}
    try:
        for image_id in sorted(set(gt_sets) | set(pred_sets)):
            gt = gt_sets.get(image_id)
            preds = pred_sets.get(image_id)
            if gt is None:
                gt = tensor_io.AnnotationSet(image_id, preds.width, preds.height,
                                             [], preds.round)
            if preds is None:
                preds = tensor_io.AnnotationSet(image_id, gt.width, gt.height,
                                                [], gt.round)
            merged, rep = pseudolabels.merge_round(gt, preds, args.round)
            merged_sets.append(merged)
            totals["n_kept_gt"] += rep.n_kept_gt
            totals["n_dropped_gt"] += rep.n_dropped_gt
            totals["n_added_pred"] += rep.n_added_pred
            print(json.dumps({"image_id": image_id, "n_kept_gt": rep.n_kept_gt,
                              "n_dropped_gt": rep.n_dropped_gt,
                              "n_added_pred": rep.n_added_pred,
                              "threshold_used": rep.threshold_used}))
        threshold = pseudolabels.confidence_threshold(args.round)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    tensor_io.save_annotation_sets(merged_sets, args.out)
    print(json.dumps({"total": totals, "threshold_used": threshold}))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        preds = tensor_io.load_annotation_sets(args.preds)
        gts = tensor_io.load_annotation_sets(args.gt)
        result = evaluation.evaluate(preds, gts, iou_kind=args.iou_kind)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(result.to_dict(), sort_keys=True))
    if args.pr_csv:
        report.write_pr_csv(result, args.pr_csv)
    if args.report_dir:
        report.write_report(result, args.report_dir)
    return EXIT_OK


def _overlay(image: np.ndarray, doc: tensor_io.AnnotationSet) -> np.ndarray:
    if image.ndim == 2:
        image = np.stack([image] * 3, axis=2)
    out = image.copy()
    for k, ann in enumerate(doc.annotations):
        color = np.array(PALETTE[k % len(PALETTE)], dtype=np.uint16)
        mask = ann.mask
        out[mask] = ((out[mask].astype(np.uint16) + color) // 2).astype(np.uint8)
        x, y, w, h = (int(round(v)) for v in ann.bbox)
        if w < 1 or h < 1:
            continue
        x1, y1 = x + w - 1, y + h - 1
        out[y, x:x1 + 1] = color.astype(np.uint8)
        out[y1, x:x1 + 1] = color.astype(np.uint8)
        out[y:y1 + 1, x] = color.astype(np.uint8)
        out[y:y1 + 1, x1] = color.astype(np.uint8)
    return out


def cmd_visualize(args) -> int:
    try:
        with open(args.image, "rb") as fh:
            image = tensor_io.read_image(fh)
        sets = tensor_io.load_annotation_sets(args.annotations)
        stem = Path(args.image).stem
        by_id = {s.image_id: s for s in sets}
        if stem in by_id:
            doc = by_id[stem]
        elif len(sets) == 1:
            doc = sets[0]
        else:
            raise ValueError(f"no annotation document for image_id {stem!r}")
        out = _overlay(image, doc)
        with open(args.out, "wb") as fh:
            tensor_io.write_image(out, fh)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def cmd_droploss_audit(args) -> int:
    try:
        pred_sets = {s.image_id: s
                     for s in tensor_io.load_annotation_sets(args.preds)}
        gt_sets = {s.image_id: s for s in tensor_io.load_annotation_sets(args.gt)}
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    totals = {"kept": 0, "dropped": 0}
    try:
        for image_id in sorted(gt_sets):
            gt = gt_sets[image_id]
            preds = pred_sets.get(image_id)
            anns = preds.annotations if preds else []
            regions = [dl.RegionPrediction(postprocess.BoundingBox(*a.bbox), 1.0)
                       for a in anns]
            gt_boxes = [postprocess.BoundingBox(*a.bbox) for a in gt.annotations]
            if args.iou_kind == "mask":
                gt_masks = [a.mask for a in gt.annotations]
                iou = np.array(
                    [[pseudolabels.mask_iou(am, gm) for gm in gt_masks]
                     for am in (a.mask for a in anns)],
                    dtype=np.float64).reshape(len(anns), len(gt_boxes))
                decision = dl.drop_loss(regions, gt_boxes, args.tau_iou, iou=iou)
            else:
                decision = dl.drop_loss(regions, gt_boxes, args.tau_iou)
            kept = int(decision.keep.sum())
            dropped = len(regions) - kept
            totals["kept"] += kept
            totals["dropped"] += dropped
            print(json.dumps({"image_id": image_id, "kept": kept,
                              "dropped": dropped}))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({"total": totals, "tau_iou": args.tau_iou}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cutcore",
        description="Unsupervised multi-object mask discovery pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("maskcut", help="discover masks from feature tensors")
    p.add_argument("--features", required=True, help="directory of CTF1 tensors")
    p.add_argument("--images", required=True, help="directory of P5/P6 pixmaps")
    p.add_argument("--out", required=True, help="output annotation JSON file")
    p.add_argument("--tau-ncut", type=float, default=None)
    p.add_argument("--num-masks", type=int, default=None)
    p.add_argument("--no-crf", action="store_true")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--jobs", type=int, default=None,
                   help=f"worker processes (default: {JOBS_ENV} or CPU count)")
    p.set_defaults(func=cmd_maskcut)

    p = sub.add_parser("merge", help="merge round-t predictions into pseudo GT")
    p.add_argument("--gt", required=True)
    p.add_argument("--preds", required=True)
    p.add_argument("--round", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("eval", help="class-agnostic detection metrics")
    p.add_argument("--preds", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou-kind", choices=("box", "mask"), default="box")
    p.add_argument("--pr-csv", default=None, help="write PR curves as CSV")
    p.add_argument("--report-dir", default=None,
                   help="write metrics.json, pr_curves.csv and pr_curves.png")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("visualize", help="render mask overlays as P6")
    p.add_argument("--image", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("droploss-audit", help="kept/dropped region counts")
    p.add_argument("--preds", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--tau-iou", type=float, default=dl.DEFAULT_TAU_IOU)
    p.add_argument("--iou-kind", choices=("box", "mask"), default="box")
    p.set_defaults(func=cmd_droploss_audit)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
