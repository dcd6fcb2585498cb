import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghostdet.blocks import (
    ELAN, BlockSpec, Bottleneck, C2f, Conv, ConvSpec, DecoupledLevel, DownSample, GhostConv, GhostSpec, build_block,
    check_block, conv_params, decoupled_head_forward, ghost_cost, ghost_forward, ghost_params, ghost_saving_ratio,
    standard_cost,
)
from ghostdet.nn import profiling
from ghostdet.tensor import ShapeError, Tensor, conv2d


def macs_of(module, shape):
    with profiling() as prof:
        module(Tensor(np.zeros((0,) + tuple(shape))))
    return prof.entries


class TestCosts:
    def test_standard_examples(self):
        assert standard_cost(ConvSpec(3, 16, 3), 32, 32) == 442_368
        assert standard_cost(ConvSpec(1, 1, 1), 1, 1) == 1
        assert standard_cost(ConvSpec(64, 64, 3), 56, 56) == 115_605_504

    def test_ghost_examples(self):
        g = GhostSpec(64, 64, s=2, k=3, l=3)
        assert ghost_cost(g, 56, 56) == 58_705_920
        assert ghost_cost(g, 56, 56) / standard_cost(ConvSpec(64, 64, 3), 56, 56) == 0.5078125

    def test_ghost_cost_by_hand(self):
        # (m/s)h'w'ck^2 + (s-1)(m/s)h'w'l^2 written out term by term
        c, m, s, k, l, h, w = 24, 36, 3, 3, 5, 7, 9
        n = m // s
        assert ghost_cost(GhostSpec(c, m, s, k, l), h, w) == n * h * w * c * k * k + (s - 1) * n * h * w * l * l

    def test_s1_degenerates_to_standard(self):
        for c, m, k in [(8, 16, 3), (3, 5, 1)]:
            assert ghost_cost(GhostSpec(c, m, s=1, k=k), 10, 10) == standard_cost(ConvSpec(c, m, k), 10, 10)

    def test_ratio_monotone_and_limit(self):
        ratios = [ghost_saving_ratio(c, 2, 3, 3) for c in range(1, 513)]
        assert all(b < a for a, b in zip(ratios, ratios[1:]))
        assert abs(ratios[-1] - 0.5) / 0.5 < 0.01

    def test_param_counts(self):
        assert conv_params(ConvSpec(3, 16, 3, bias=True)) == 448
        assert ghost_params(GhostSpec(64, 64, 2, 3, 3, bias=False)) == 32 * 64 * 9 + 32 * 9 == 18_720
        assert conv_params(ConvSpec(64, 64, 3, bias=False)) == 36_864

    def test_spec_validation(self):
        with pytest.raises(ValueError, match="divisible"):
            GhostSpec(8, 9, s=2)
        with pytest.raises(ValueError):
            GhostSpec(8, 8, s=0)
        with pytest.raises(ValueError):
            ConvSpec(3, 4, padding=-1)

    def test_module_costs_match_closed_form(self):
        conv = Conv(3, 16, 3)
        e = macs_of(conv, (3, 32, 32))
        assert [x.macs for x in e] == [442_368]
        assert conv.num_params() == 448
        ghost = GhostConv(64, 64, 3, bias=False)
        e = macs_of(ghost, (64, 56, 56))
        assert [x.macs for x in e] == [58_705_920]
        assert ghost.num_params() == 18_720


def _depthwise_oracle(y, w, b):
    """Per-channel 'same' cross-correlation written with explicit loops."""
    n, c, h, wd = y.shape
    k = w.shape[-1]
    p = k // 2
    yp = np.pad(y, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros_like(y)
    for ch in range(c):
        for i in range(h):
            for j in range(wd):
                out[:, ch, i, j] = np.sum(yp[:, ch, i:i + k, j:j + k] * w[ch, 0], axis=(1, 2)) + b[ch]
    return out


class TestGhostForward:
    def test_concat_structure(self):
        rng = np.random.default_rng(0)
        spec = GhostSpec(4, 8, s=2, k=1, l=3)
        x = rng.normal(size=(2, 4, 5, 5))
        pw, pb = rng.normal(size=(4, 4, 1, 1)), rng.normal(size=4)
        cw, cb = rng.normal(size=(4, 1, 3, 3)), rng.normal(size=4)
        y = ghost_forward(Tensor(x), spec, Tensor(pw), Tensor(cw), Tensor(pb), Tensor(cb)).data
        assert y.shape == (2, 8, 5, 5)
        primary = np.einsum("nchw,mc->nmhw", x, pw[:, :, 0, 0]) + pb[None, :, None, None]
        np.testing.assert_allclose(y[:, :4], primary, rtol=1e-12)
        np.testing.assert_allclose(y[:, 4:], _depthwise_oracle(primary, cw, cb), rtol=1e-12, atol=1e-12)

    def test_s1_equals_conv(self):
        rng = np.random.default_rng(1)
        x, w = rng.normal(size=(1, 3, 6, 6)), rng.normal(size=(5, 3, 3, 3))
        y = ghost_forward(Tensor(x), GhostSpec(3, 5, s=1, k=3), Tensor(w))
        np.testing.assert_array_equal(y.data, conv2d(Tensor(x), Tensor(w), padding=1).data)

    @settings(max_examples=30, deadline=None)
    @given(c=st.integers(1, 6), n=st.integers(1, 4), s=st.integers(1, 3), k=st.sampled_from([1, 3]),
           stride=st.integers(1, 2))
    def test_channel_count_property(self, c, n, s, k, stride):
        m = n * s
        mod = GhostConv(c, m, k, stride, s=s)
        out = mod(Tensor(np.zeros((1, c, 6, 6))))
        assert out.shape[1] == m
        assert mod.num_params() == ghost_params(mod.spec)

    def test_wrong_channels(self):
        with pytest.raises(ShapeError, match="4 input channels"):
            ghost_forward(Tensor(np.zeros((1, 3, 4, 4))), GhostSpec(4, 8), Tensor(np.zeros((4, 4, 1, 1))),
                          Tensor(np.zeros((4, 1, 3, 3))))


class TestBlocks:
    def test_downsample_halves(self):
        blk = build_block(BlockSpec("DownSample", 8, 16), (1, 8, 64, 64))
        assert blk(Tensor(np.zeros((1, 8, 64, 64)))).shape == (1, 16, 32, 32)

    def test_downsample_odd_input_rejected(self):
        with pytest.raises(ShapeError, match="DownSample"):
            build_block(BlockSpec("DownSample", 8, 16), (1, 8, 7, 8))

    @settings(max_examples=20, deadline=None)
    @given(c_in=st.integers(1, 8), hidden=st.integers(1, 8), half=st.integers(1, 8), ghost=st.booleans())
    def test_elan_declared_channels(self, c_in, hidden, half, ghost):
        c_out = 2 * half
        blk = ELAN(c_in, 2 * hidden, c_out, ghost=ghost)
        assert check_block(blk, (1, c_in, 8, 8)) == (0, c_out, 8, 8)

    def test_bottleneck_zero_weights_is_identity(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 6, 5, 5))
        for ghost in (False, True):
            blk = Bottleneck(6, 6, shortcut=True, ghost=ghost)
            np.testing.assert_array_equal(blk(Tensor(x)).data, x)

    def test_c2f_shapes(self):
        blk = C2f(6, 10, n=2, shortcut=True)
        assert check_block(blk, (1, 6, 8, 8)) == (0, 10, 8, 8)

    def test_build_block_names_failing_edge(self):
        blk = build_block(BlockSpec("GhostELAN", 8, 16, hidden=8))
        with pytest.raises(ShapeError, match="GhostELAN: cv1"):
            check_block(blk, (1, 5, 8, 8), "GhostELAN")

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown block kind"):
            build_block(BlockSpec("Transformer", 4, 4))

    def test_sppcspc_keeps_spatial(self):
        blk = build_block(BlockSpec("SPPCSPC", 8, 8, hidden=4), (1, 8, 10, 10))
        assert blk(Tensor(np.ones((1, 8, 10, 10)))).shape == (1, 8, 10, 10)


class TestDecoupledHead:
    def test_shape_contract(self):
        rng = np.random.default_rng(3)
        level = DecoupledLevel(64, 5)
        level.initialize(rng)
        cls, reg, obj = level(Tensor(rng.normal(size=(1, 64, 20, 20))))
        assert (cls.shape, reg.shape, obj.shape) == ((1, 5, 20, 20), (1, 4, 20, 20), (1, 1, 20, 20))

    def test_zero_weights_give_zero_maps(self):
        outs = decoupled_head_forward(Tensor(np.random.default_rng(4).normal(size=(1, 16, 6, 6))), 3)
        for o in outs:
            np.testing.assert_array_equal(o.data, 0.0)

    def test_num_classes_validated(self):
        with pytest.raises(ValueError):
            DecoupledLevel(8, 0)

    def test_one_ghost_conv_per_branch(self):
        level = DecoupledLevel(32, 5, ghost=True)
        ghost_children = [k for k, v in level._children.items() if isinstance(v, GhostConv)]
        assert sorted(ghost_children) == ["cls_conv", "reg_conv"]

    def test_ghost_branches_cheaper_by_eq5(self):
        c = 64
        ghost = {e.path: e.macs for e in macs_of(DecoupledLevel(c, 5, ghost=True), (c, 20, 20))}
        plain = {e.path: e.macs for e in macs_of(DecoupledLevel(c, 5, ghost=False), (c, 20, 20))}
        assert sum(ghost.values()) < sum(plain.values())
        expected = ghost_saving_ratio(c, 2, 3, 3)
        for branch in ("cls_conv", "reg_conv"):
            ratio = ghost[branch] / plain[branch]
            assert ratio == pytest.approx(expected, rel=1e-12)
            assert abs(ratio - 0.5) / 0.5 < 0.02
