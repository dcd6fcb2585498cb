import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_ap, exhaustive_nms

from ghostdet.losses import Box
from ghostdet.metrics import (
    Detection, Difficulty, GroundTruth, average_precision, decode_boxes, decode_head, encode_box, evaluate,
    evaluate_by_difficulty, format_detections, mean_ap, nms, parse_detections, precision_recall,
)


def det(x1, y1, x2, y2, conf, cls=0, img=0):
    return Detection(Box(x1, y1, x2, y2), cls, conf, img)


def gt(x1, y1, x2, y2, cls=0, img=0, **kw):
    return GroundTruth(Box(x1, y1, x2, y2), cls, image_id=img, **kw)


def random_instance(rng, max_dets, max_gts, classes):
    def box():
        x, y = rng.uniform(0, 10, 2)
        w, h = rng.uniform(1, 6, 2)
        return Box(x, y, x + w, y + h)

    # a coarse confidence grid makes ties common
    dets = [Detection(box(), int(rng.integers(classes)), float(rng.integers(1, 6)) / 5, int(rng.integers(2)))
            for _ in range(rng.integers(0, max_dets + 1))]
    gts = [GroundTruth(box(), int(rng.integers(classes)), image_id=int(rng.integers(2)))
           for _ in range(rng.integers(0, max_gts + 1))]
    return dets, gts


class TestNMS:
    def test_suppresses_heavy_overlap(self):
        a, b = det(0, 0, 10, 10, 0.9), det(0, 0, 10, 8, 0.7)
        assert nms([b, a], 0.5) == [a]

    def test_keeps_light_overlap(self):
        a, b = det(0, 0, 10, 10, 0.9), det(7, 0, 17, 10, 0.7)
        assert nms([a, b], 0.5) == [a, b]

    def test_per_class(self):
        a, b = det(0, 0, 10, 10, 0.9, cls=0), det(0, 0, 10, 10, 0.7, cls=1)
        assert nms([a, b], 0.5) == [a, b]

    def test_tie_broken_by_index(self):
        a, b = det(0, 0, 10, 10, 0.5), det(0, 0, 10, 10, 0.5)
        assert nms([a, b], 0.5)[0] is a
        assert nms([b, a], 0.5)[0] is b

    def test_threshold_validated(self):
        with pytest.raises(ValueError):
            nms([], 0.0)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(150):
            dets, _ = random_instance(rng, 8, 0, 2)
            dets = [Detection(d.box, d.class_id, d.confidence) for d in dets]
            thr = float(rng.choice([0.3, 0.5, 0.7]))
            kept = nms(dets, thr)
            found = exhaustive_nms([(d.box.as_array(), d.class_id, d.confidence) for d in dets], thr)
            assert len(found) == 1
            assert sorted(dets.index(d) for d in kept) == found[0]

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_idempotent(self, seed):
        dets, _ = random_instance(np.random.default_rng(seed), 8, 0, 2)
        once = nms(dets, 0.5)
        assert nms(once, 0.5) == once


class TestPrecisionRecall:
    def test_single_match(self):
        curve = precision_recall([det(0, 0, 4, 4, 0.9)], [gt(0, 0, 4, 4)])
        assert curve.points == [(1.0, 1.0)]
        assert average_precision(curve) == 1.0

    def test_two_gts_tp_then_fp(self):
        gts = [gt(0, 0, 4, 4), gt(10, 10, 14, 14)]
        curve = precision_recall([det(0, 0, 4, 4, 0.9), det(20, 20, 24, 24, 0.8)], gts)
        assert curve.points == [(0.5, 1.0), (0.5, 0.5)]
        assert average_precision(curve) == 0.5

    def test_duplicate_is_false_positive(self):
        curve = precision_recall([det(0, 0, 4, 4, 0.9), det(0, 0, 4, 4, 0.8)], [gt(0, 0, 4, 4)])
        assert curve.tp == [True, False]

    def test_ignored_gt_neither_tp_nor_fn(self):
        gts = [gt(0, 0, 4, 4), gt(10, 10, 14, 14, ignore=True)]
        curve = precision_recall([det(10, 10, 14, 14, 0.95), det(0, 0, 4, 4, 0.9)], gts)
        assert curve.num_gt == 1
        assert curve.points == [(1.0, 1.0)]

    def test_no_detections(self):
        assert average_precision(precision_recall([], [gt(0, 0, 1, 1)])) == 0.0

    def test_no_ground_truth_is_undefined(self):
        assert average_precision(precision_recall([det(0, 0, 1, 1, 0.5)], [])) is None

    def test_relabel_fp_to_tp_never_lowers_ap(self):
        # same sweep, one FP turned into a TP
        before = average_precision([(0.5, 1.0), (0.5, 0.5), (1.0, 2 / 3)])
        after = average_precision([(0.5, 1.0), (1.0, 1.0), (1.0, 2 / 3)])
        assert after >= before

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            dets, gts = random_instance(rng, 6, 4, 3)
            res = evaluate(dets, gts, 0.5, classes=range(3))
            for c in range(3):
                want = brute_force_ap([(d.box.as_array(), d.confidence, d.image_id) for d in dets if d.class_id == c],
                                      [(g.box.as_array(), g.image_id) for g in gts if g.class_id == c], 0.5)
                got = res.per_class_ap[c]
                assert (got is None) == (want is None)
                if want is not None:
                    assert abs(got - want) < 1e-9
                    assert 0.0 <= got <= 1.0

    def test_gt_order_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            dets, gts = random_instance(rng, 6, 4, 2)
            a = evaluate(dets, gts, 0.5, classes=range(2)).per_class_ap
            b = evaluate(dets, gts[::-1], 0.5, classes=range(2)).per_class_ap
            for c in a:
                assert (a[c] is None and b[c] is None) or abs(a[c] - b[c]) < 1e-12


class TestMeanAP:
    def test_examples(self):
        assert mean_ap([0.8]) == 0.8
        assert mean_ap({0: 1.0, 1: 0.5, 2: 0.0}) == 0.5
        assert mean_ap({0: 0.7, 1: None, 2: 0.7}) == pytest.approx(0.7)

    def test_all_undefined(self):
        with pytest.raises(ValueError):
            mean_ap({0: None})

    def test_five_class_random(self):
        aps = np.random.default_rng(3).random(5)
        assert abs(mean_ap(list(aps)) - aps.sum() / 5) < 1e-12


class TestDifficulty:
    def test_tiers_ignore_harder_ground_truths(self):
        gts = [
            GroundTruth(Box(0, 0, 10, 50), 0, Difficulty.EASY),
            GroundTruth(Box(20, 0, 30, 30), 0, Difficulty.MODERATE),
            GroundTruth(Box(40, 0, 50, 30), 0, Difficulty.HARD),
        ]
        dets = [det(0, 0, 10, 50, 0.9), det(20, 0, 30, 30, 0.8)]
        res = evaluate_by_difficulty(dets, gts)
        assert res["easy"].map == 1.0
        assert res["moderate"].map == 1.0
        assert res["hard"].map == pytest.approx(2 / 3)


class TestDecode:
    def test_zero_maps_below_threshold(self):
        z = np.zeros
        assert decode_head(z((1, 3, 4, 4)), z((1, 4, 4, 4)), z((1, 1, 4, 4)), 8, conf_threshold=0.3) == []
        assert len(decode_head(z((1, 3, 4, 4)), z((1, 4, 4, 4)), z((1, 1, 4, 4)), 8, conf_threshold=0.25)) == 16

    def test_single_hot_cell(self):
        cls, reg, obj = np.full((2, 3, 4, 5), -20.0), np.zeros((2, 4, 4, 5)), np.full((2, 1, 4, 5), -20.0)
        obj[1, 0, 2, 3] = 20.0
        cls[1, 2, 2, 3] = 20.0
        out = decode_head(cls, reg, obj, 8, 0.25)
        assert len(out) == 1
        d = out[0]
        assert (d.image_id, d.class_id) == (1, 2)
        assert d.confidence > 0.99
        assert (d.box.x1 + d.box.x2) / 2 == pytest.approx((3 + 0.5) * 8)
        assert (d.box.y1 + d.box.y2) / 2 == pytest.approx((2 + 0.5) * 8)

    @settings(max_examples=100, deadline=None)
    @given(cx=st.floats(0.5, 63.5), cy=st.floats(0.5, 63.5), w=st.floats(2, 60), h=st.floats(2, 60),
           stride=st.sampled_from([8, 16, 32]))
    def test_encode_decode_round_trip(self, cx, cy, w, h, stride):
        box = Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        row, col, t = encode_box(box, stride)
        size = 64 // stride
        assert 0 <= row < size and 0 <= col < size
        reg = np.zeros((1, 4, size, size))
        reg[0, :, row, col] = t
        out = decode_boxes(reg, stride)[0, row, col]
        np.testing.assert_allclose(out, box.as_array(), atol=1e-6)

    def test_stride_validated(self):
        with pytest.raises(ValueError):
            decode_head(np.zeros((1, 1, 1, 1)), np.zeros((1, 4, 1, 1)), np.zeros((1, 1, 1, 1)), 0.5)


class TestDumpFormat:
    def test_round_trip(self):
        dets = [det(1.5, 2.25, 10, 20, 0.875, cls=2), det(0, 0, 3, 4, 0.125)]
        text = format_detections(dets)
        assert text.splitlines()[0] == "2 0.875000 1.5000 2.2500 10.0000 20.0000"
        assert parse_detections(text) == dets

    def test_bad_lines(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_detections("0 0.5 0 0 1 1\n0 0.5 0 0 1\n")
        with pytest.raises(ValueError, match="line 1"):
            parse_detections("car 0.5 0 0 1 1\n")

    def test_detection_validation(self):
        with pytest.raises(ValueError):
            det(0, 0, 1, 1, 1.5)
        with pytest.raises(ValueError):
            det(0, 0, 1, 1, 0.5, cls=-1)

    def test_result_serialization(self):
        res = evaluate([det(0, 0, 4, 4, 0.9)], [gt(0, 0, 4, 4)])
        d = res.to_dict()
        assert d["mAP"] == 1.0 and d["per_class_ap"] == {"0": 1.0}
        assert math.isclose(d["iou_threshold"], 0.5)
