"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through ``conftest.criterion``; the lines
are printed in the terminal summary of every pytest run.
"""

import dataclasses
import io
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from conftest import criterion
from oracles import brute_force_ap, exhaustive_nms

from ghostdet.bifpn import EPSILON, FusionNode, GhostBiFPN
from ghostdet.blocks import Conv, GhostConv, ghost_cost, standard_cost, ConvSpec, GhostSpec
from ghostdet.checks import SUITES
from ghostdet.data import (
    AnnotationError, format_kitti_objects, parse_kitti_label, parse_kitti_objects, parse_voc_xml, read_weights,
    to_voc_xml, write_weights,
)
from ghostdet.losses import Box, focusing_coefficient
from ghostdet.metrics import Detection, GroundTruth, evaluate, nms
from ghostdet.model import PRESETS, build_model, compare_reports, count_flops, count_params
from ghostdet.nn import profiling
from ghostdet.tensor import Tensor, no_grad
from ghostdet.train import TrainConfig, train_demo

FIXTURES = Path(__file__).parent / "fixtures"


def _profiled_macs(module, c_in, hw):
    module.initialize(np.random.default_rng(0))
    with profiling() as prof, no_grad():
        module(Tensor(np.zeros((0, c_in, hw, hw))))
    return sum(e.macs for e in prof.entries)


@criterion(1, "ghost/standard mult-add ratio is exact and near 1/s")
def test_criterion_1_ghost_ratio():
    start = time.perf_counter()
    ratios = {}
    for c in (16, 64, 256, 512):
        standard = _profiled_macs(Conv(c, c, 3), c, 8)
        ghost = _profiled_macs(GhostConv(c, c, 3, s=2, l=3), c, 8)
        got = Fraction(ghost, standard)
        assert got == Fraction(c * 9 + 9, 2 * c * 9), c
        if c >= 64:
            assert abs(float(got) - 0.5) <= 0.02 * 0.5, c
        ratios[c] = float(got)
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    return ", ".join(f"c={c}: {r:.5f}" for c, r in ratios.items()) + f"; {elapsed:.2f}s"


@criterion(2, "worked mult-add counts 115,605,504 and 58,705,920")
def test_criterion_2_worked_numbers():
    assert standard_cost(ConvSpec(64, 64, 3), 56, 56) == 115_605_504
    assert ghost_cost(GhostSpec(64, 64, 2, 3, 3), 56, 56) == 58_705_920
    assert _profiled_macs(Conv(64, 64, 3), 64, 56) == 115_605_504
    assert _profiled_macs(GhostConv(64, 64, 3), 64, 56) == 58_705_920


@criterion(3, "width-0.5 parameter ratio in [0.24, 0.28]")
def test_criterion_3_width_ratio():
    base = count_params(build_model(PRESETS["baseline"])).total_params
    half = count_params(build_model(PRESETS["model1"])).total_params
    ratio = half / base
    assert 0.24 <= ratio <= 0.28
    return f"ratio {ratio:.4f}"


@criterion(4, "model6 reductions within 5pp of 37.3% params and 29.8% mult-adds")
def test_criterion_4_model6_reductions():
    base = count_flops(build_model(PRESETS["baseline"], input_size=(640, 640)))
    m6 = count_flops(build_model(PRESETS["model6"], input_size=(640, 640)))
    red = compare_reports(base, m6)
    assert abs(red["params"] - 37.3) <= 5.0
    assert abs(red["macs"] - 29.8) <= 5.0
    return f"params -{red['params']}%, mult-adds -{red['macs']}%"


@criterion(5, "every gradient suite under 1e-5 relative error with at least 100 points")
def test_criterion_5_gradient_suites():
    start = time.perf_counter()
    worst = 0.0
    for name, suite in SUITES.items():
        rep = suite(points=100, seed=0)
        assert rep.checked >= 100, name
        assert not rep.aborted, name
        assert rep.max_rel_error < 1e-5, (name, rep.max_rel_error)
        worst = max(worst, rep.max_rel_error)
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0
    return f"{len(SUITES)} suites, worst {worst:.2e}, {elapsed:.1f}s"


@criterion(6, "WIoU focusing coefficient values and single interior maximum")
def test_criterion_6_wiou_gain():
    assert focusing_coefficient(3.0) == 1.0
    assert abs(focusing_coefficient(1.0) - 1.9**2 / 3) <= 1e-9
    beta = np.arange(0, 2001) * 0.01
    r = focusing_coefficient(beta)
    steps = np.sign(np.diff(r))
    changes = np.count_nonzero(steps[1:] != steps[:-1])
    peak = int(np.argmax(r))
    assert changes == 1 and steps[0] > 0 and steps[-1] < 0
    assert 0 < peak < len(beta) - 1
    return f"peak at beta={beta[peak]:.2f}"


@criterion(7, "fusion weights normalize to sum/(eps+sum) and preserve constants")
def test_criterion_7_fusion():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(1, 6))
        node = FusionNode(k, post=None)
        node.initialize(rng)
        raw = rng.normal(size=k)
        node.set_param("w", Tensor(raw))
        w = node.normalized_weights().data
        pos = np.maximum(raw, 0).sum()
        assert np.all(w >= 0)
        assert abs(w.sum() - pos / (EPSILON + pos)) <= 1e-12
    net = GhostBiFPN([4, 4, 4], [4, 4, 4], post=None)
    net.initialize(rng)
    c = 2.5
    levels = [Tensor(np.full((1, 4, s, s), c)) for s in (8, 4, 2)]
    with no_grad():
        outs = net(levels)
    worst = max(float(np.max(np.abs(o.data - c))) for o in outs)
    assert worst <= EPSILON * abs(c)
    return f"max constant drift {worst / c:.2e} of |c|"


def _random_instance(rng):
    def box():
        x, y = rng.uniform(0, 10, 2)
        w, h = rng.uniform(1, 6, 2)
        return Box(x, y, x + w, y + h)

    dets = [Detection(box(), int(rng.integers(3)), float(rng.integers(1, 6)) / 5, int(rng.integers(2)))
            for _ in range(rng.integers(0, 7))]
    gts = [GroundTruth(box(), int(rng.integers(3)), image_id=int(rng.integers(2)))
           for _ in range(rng.integers(0, 5))]
    return dets, gts


@criterion(8, "AP matches brute force on 1000 instances; NMS matches exhaustive search")
def test_criterion_8_ap_and_nms():
    rng = np.random.default_rng(8)
    compared = 0
    for _ in range(1000):
        dets, gts = _random_instance(rng)
        res = evaluate(dets, gts, 0.5, classes=range(3))
        for c in range(3):
            want = brute_force_ap([(d.box.as_array(), d.confidence, d.image_id) for d in dets if d.class_id == c],
                                  [(g.box.as_array(), g.image_id) for g in gts if g.class_id == c], 0.5)
            got = res.per_class_ap[c]
            assert (got is None) == (want is None)
            if want is not None:
                assert abs(got - want) <= 1e-9
                compared += 1
    for _ in range(200):
        dets = [Detection(d.box, d.class_id, d.confidence) for d in _random_instance(rng)[0]]
        dets += [Detection(d.box, d.class_id, d.confidence) for d in _random_instance(rng)[0]]
        dets = dets[:8]
        kept = nms(dets, 0.5)
        found = exhaustive_nms([(d.box.as_array(), d.class_id, d.confidence) for d in dets], 0.5)
        assert found == [sorted(dets.index(d) for d in kept)]
    return f"{compared} class APs compared"


# Recorded from seed-7 runs; a drift here means the training path changed.
GOLDEN = {
    "ciou": (21.601522924908906, 4.455255033385164, 0.8480311510861771),
    "wiou": (21.683326852782592, 4.267285539312558, 0.9459338538500095),
}


@pytest.mark.slow
@criterion(9, "toy training halves the loss and reaches mAP@0.5 >= 0.5 for ciou and wiou")
def test_criterion_9_toy_training():
    parts = []
    for loss in ("ciou", "wiou"):
        start = time.perf_counter()
        res = train_demo(TrainConfig(box_loss=loss, width=0.125, num_images=64, steps=200))
        elapsed = time.perf_counter() - start
        assert res.final_loss <= 0.5 * res.initial_loss, loss
        assert res.final_map >= 0.5, loss
        assert elapsed < 600.0, loss
        np.testing.assert_allclose((res.initial_loss, res.final_loss, res.final_map), GOLDEN[loss], rtol=1e-6)
        parts.append(f"{loss}: loss x{res.final_loss / res.initial_loss:.3f}, mAP {res.final_map:.3f}, "
                     f"{elapsed:.0f}s")
    return "; ".join(parts)


MALFORMED_VOC = [
    "<annotation>\n<size>\n</annotation>",
    "<annotation>\n<size><width>5</width><height>5</height></size>\n<object>\n<name>car</name>\n</object>\n"
    "</annotation>",
    "<annotation><size><width>9</width><height>9</height></size><object><name>car</name><bndbox><xmin>5</xmin>"
    "<ymin>1</ymin><xmax>2</xmax><ymax>4</ymax></bndbox></object></annotation>",
    "<annotation><filename>a</filename></annotation>",
]
MALFORMED_KITTI = ["Car 0 0 0 1 1 50\n", "Car x 0 0 1 1 50 50 1 1 1 0 0 0 0\n"]


@criterion(10, "annotation and weight round trips are exact; malformed input is diagnosed")
def test_criterion_10_round_trips():
    for name in ("000007.xml", "000012.xml"):
        first = parse_voc_xml((FIXTURES / "voc" / name).read_text())
        again = parse_voc_xml(to_voc_xml(first))
        assert dataclasses.replace(again, dropped=first.dropped) == first
    text = (FIXTURES / "kitti" / "000003.txt").read_text()
    assert format_kitti_objects(parse_kitti_objects(text)) == text
    for doc in MALFORMED_VOC:
        with pytest.raises(AnnotationError) as info:
            parse_voc_xml(doc)
        assert info.value.line is not None or info.value.field is not None
    for doc in MALFORMED_KITTI:
        with pytest.raises(AnnotationError) as info:
            parse_kitti_label(doc, 375)
        assert info.value.line == 1
    model = build_model(dataclasses.replace(PRESETS["model6"], width=0.125), num_classes=3, input_size=(64, 64))
    model.initialize(np.random.default_rng(10))
    state = model.state_dict()
    buf = io.BytesIO()
    write_weights(buf, state)
    back = read_weights(buf.getvalue())
    assert list(back) == list(state)
    assert all(back[k].shape == state[k].shape and back[k].tobytes() == state[k].tobytes() for k in state)
    return f"{len(state)} tensors bit-exact"
