import itertools

import numpy as np
import pytest

from cutcore import evaluation as ev
from cutcore.tensor_io import AnnotationSet, InstanceAnnotation

from coco_reference import reference_metrics


def rect_mask(h, w, r0, c0, rh, rw):
    m = np.zeros((h, w), dtype=bool)
    m[r0:r0 + rh, c0:c0 + rw] = True
    return m


def ann(mask, score=1.0):
    ys, xs = np.nonzero(mask)
    bbox = (int(xs.min()), int(ys.min()),
            int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
    return InstanceAnnotation.from_mask(mask, bbox, score)


def fixture_images():
    """Three images with mixed hits, misses, duplicates and score ties
    broken only by rank; masks are axis-aligned rectangles."""
    h = w = 48
    images = []
    # image 0: two gts, one exact hit, one duplicate, one miss
    gts0 = [rect_mask(h, w, 2, 2, 10, 12), rect_mask(h, w, 20, 20, 14, 8)]
    dets0 = [
        (rect_mask(h, w, 2, 2, 10, 12), 0.95),   # exact hit
        (rect_mask(h, w, 3, 3, 10, 12), 0.90),   # duplicate of gt0
        (rect_mask(h, w, 34, 4, 8, 8), 0.85),    # pure false positive
        (rect_mask(h, w, 21, 20, 14, 8), 0.80),  # near hit of gt1
    ]
    images.append((dets0, gts0))
    # image 1: one gt, overlapping det below/above threshold boundary
    gts1 = [rect_mask(h, w, 10, 10, 16, 16)]
    dets1 = [
        (rect_mask(h, w, 12, 12, 16, 16), 0.70),  # IoU ~ 0.58
        (rect_mask(h, w, 30, 30, 6, 6), 0.60),
    ]
    images.append((dets1, gts1))
    # image 2: two gts, no detections at all
    gts2 = [rect_mask(h, w, 5, 30, 8, 8), rect_mask(h, w, 30, 5, 6, 14)]
    images.append(([], gts2))
    return h, w, images


def to_annotation_sets(h, w, images):
    preds, gts = [], []
    for idx, (dets, gt_masks) in enumerate(images):
        image_id = f"img{idx}"
        preds.append(AnnotationSet(image_id, w, h,
                                   [ann(m, s) for m, s in dets]))
        gts.append(AnnotationSet(image_id, w, h, [ann(m) for m in gt_masks]))
    return preds, gts


def to_reference_docs(images):
    docs = []
    for dets, gt_masks in images:
        docs.append({
            "dets": [
                {"score": s,
                 "bbox": bbox_of(m),
                 "mask": m.astype(int).tolist()}
                for m, s in dets
            ],
            "gts": [
                {"bbox": bbox_of(m), "mask": m.astype(int).tolist()}
                for m in gt_masks
            ],
        })
    return docs


def bbox_of(mask):
    ys, xs = np.nonzero(mask)
    return (int(xs.min()), int(ys.min()),
            int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


class TestMatchGreedy:
    def test_single_pair(self):
        h = w = 16
        gt = [ann(rect_mask(h, w, 2, 2, 6, 6))]
        pred = [ann(rect_mask(h, w, 2, 2, 6, 6), 0.9)]
        assert ev.match_greedy(pred, gt, 0.5).tolist() == [0]

    def test_one_to_one_rule(self):
        h = w = 16
        gt = [ann(rect_mask(h, w, 2, 2, 6, 6))]
        preds = [ann(rect_mask(h, w, 2, 2, 6, 6), 0.6),
                 ann(rect_mask(h, w, 3, 3, 6, 6), 0.9)]
        # higher-scored duplicate wins the gt, the other goes unmatched
        assert ev.match_greedy(preds, gt, 0.5).tolist() == [-1, 0]

    def test_matches_exhaustive_optimum_on_grid(self):
        # overlap grid where greedy-by-score equals the best assignment
        h = w = 32
        gts = [rect_mask(h, w, 0, 0, 8, 8), rect_mask(h, w, 0, 10, 8, 8),
               rect_mask(h, w, 10, 0, 8, 8)]
        preds = [rect_mask(h, w, 1, 1, 8, 8), rect_mask(h, w, 1, 11, 8, 8),
                 rect_mask(h, w, 11, 1, 8, 8)]
        gt_anns = [ann(g) for g in gts]
        pred_anns = [ann(p, s) for p, s in zip(preds, (0.9, 0.8, 0.7))]
        got = ev.match_greedy(pred_anns, gt_anns, 0.5)
        # brute force over one-to-one assignments, maximize matched count
        # then total IoU
        iou = ev._pairwise_iou(pred_anns, gt_anns, "box")
        best_count, best_total = -1, -1.0
        for perm in itertools.permutations(range(3)):
            pairs = [(d, g) for d, g in enumerate(perm) if iou[d, g] >= 0.5]
            total = sum(iou[d, g] for d, g in pairs)
            if (len(pairs), total) > (best_count, best_total):
                best_count, best_total = len(pairs), total
        assert (got >= 0).sum() == best_count
        assert sum(iou[d, g] for d, g in enumerate(got) if g >= 0) == \
            pytest.approx(best_total)

    def test_score_tie_broken_by_input_index(self):
        h = w = 16
        gt = [ann(rect_mask(h, w, 2, 2, 6, 6))]
        preds = [ann(rect_mask(h, w, 2, 2, 6, 6), 0.5),
                 ann(rect_mask(h, w, 2, 2, 6, 6), 0.5)]
        assert ev.match_greedy(preds, gt, 0.5).tolist() == [0, -1]


class TestAveragePrecision:
    def test_all_true_positives(self):
        assert ev.average_precision([True, True], 2) == pytest.approx(1.0)

    def test_no_true_positives(self):
        assert ev.average_precision([False, False], 3) == 0.0

    def test_hand_computed_tp_fp_tp(self):
        # 2 gt, flags [TP, FP, TP]: envelope precision 1 up to recall 0.5,
        # then 2/3; 101-point mean = (51*1 + 50*(2/3)) / 101 = 253/303
        value = ev.average_precision([True, False, True], 2)
        assert value == pytest.approx(253.0 / 303.0, abs=1e-12)

    def test_no_gt_undefined(self):
        assert ev.average_precision([], 0) is None

    def test_negative_gt_rejected(self):
        with pytest.raises(ValueError):
            ev.average_precision([], -1)


class TestEvaluate:
    def test_perfect_predictions(self):
        h, w, images = fixture_images()
        _, gts = to_annotation_sets(h, w, images)
        preds = [AnnotationSet(g.image_id, g.width, g.height,
                               [InstanceAnnotation(list(a.counts), a.size,
                                                   a.bbox, 0.9 - 0.01 * i)
                                for i, a in enumerate(g.annotations)])
                 for g in gts]
        for kind in ("box", "mask"):
            result = ev.evaluate(preds, gts, iou_kind=kind)
            assert result.ap == pytest.approx(1.0)
            assert result.ap50 == pytest.approx(1.0)
            assert result.ar100 == pytest.approx(1.0)

    def test_empty_predictions_all_zero(self):
        h, w, images = fixture_images()
        _, gts = to_annotation_sets(h, w, images)
        empty = [AnnotationSet(g.image_id, g.width, g.height, []) for g in gts]
        result = ev.evaluate(empty, gts)
        assert result.ap == 0.0 and result.ap50 == 0.0 and result.ar100 == 0.0

    @pytest.mark.parametrize("kind", ["box", "mask"])
    def test_matches_reference_protocol(self, kind):
        h, w, images = fixture_images()
        preds, gts = to_annotation_sets(h, w, images)
        result = ev.evaluate(preds, gts, iou_kind=kind)
        expected = reference_metrics(to_reference_docs(images), iou_kind=kind)
        assert result.ap == pytest.approx(expected["ap"], abs=1e-6)
        assert result.ap50 == pytest.approx(expected["ap50"], abs=1e-6)
        assert result.ap75 == pytest.approx(expected["ap75"], abs=1e-6)
        assert result.ar100 == pytest.approx(expected["ar100"], abs=1e-6)

    def test_ap_bounded_by_ap50(self):
        h, w, images = fixture_images()
        preds, gts = to_annotation_sets(h, w, images)
        result = ev.evaluate(preds, gts)
        assert result.ap <= result.ap50 + 1e-12
        assert 0.0 <= result.ap <= 1.0

    def test_score_rescaling_preserves_metrics(self):
        h, w, images = fixture_images()
        preds, gts = to_annotation_sets(h, w, images)
        base = ev.evaluate(preds, gts)
        for s in preds:
            for a in s.annotations:
                a.score = a.score * 0.5 + 0.1  # monotone transform
        rescaled = ev.evaluate(preds, gts)
        assert rescaled.ar100 == pytest.approx(base.ar100)
        assert rescaled.ap == pytest.approx(base.ap)

    def test_lowest_score_fp_never_raises_ap(self):
        h, w, images = fixture_images()
        preds, gts = to_annotation_sets(h, w, images)
        base = ev.evaluate(preds, gts)
        junk = rect_mask(h, w, 40, 40, 4, 4)
        preds[0].annotations.append(ann(junk, 0.01))
        worse = ev.evaluate(preds, gts)
        assert worse.ap <= base.ap + 1e-12
        assert worse.ap50 <= base.ap50 + 1e-12

    def test_added_true_positive_never_lowers_ar(self):
        h, w, images = fixture_images()
        preds, gts = to_annotation_sets(h, w, images)
        base = ev.evaluate(preds, gts)
        hit = gts[2].annotations[0]
        preds[2].annotations.append(
            InstanceAnnotation(list(hit.counts), hit.size, hit.bbox, 0.5))
        better = ev.evaluate(preds, gts)
        assert better.ar100 >= base.ar100 - 1e-12

    def test_duplicate_image_ids_rejected(self):
        h, w, images = fixture_images()
        preds, gts = to_annotation_sets(h, w, images)
        with pytest.raises(ValueError):
            ev.evaluate(preds, gts + [gts[0]])

    def test_unknown_pred_image_rejected(self):
        h, w, images = fixture_images()
        preds, gts = to_annotation_sets(h, w, images)
        preds.append(AnnotationSet("mystery", w, h, []))
        with pytest.raises(ValueError):
            ev.evaluate(preds, gts)

    def test_area_range_metrics_present(self):
        h, w, images = fixture_images()
        preds, gts = to_annotation_sets(h, w, images)
        result = ev.evaluate(preds, gts)
        for value in (result.ap_small, result.ap_medium, result.ap_large):
            assert np.isnan(value) or 0.0 <= value <= 1.0

    def test_pr_curves_shape(self):
        h, w, images = fixture_images()
        preds, gts = to_annotation_sets(h, w, images)
        result = ev.evaluate(preds, gts)
        assert len(result.pr_curves) == ev.IOU_GRID.size
        for curve in result.pr_curves.values():
            assert curve.shape == (101,)
            assert (np.diff(curve) <= 1e-12).all()  # non-increasing in recall
