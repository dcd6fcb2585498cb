"""Seeded finite-difference suites over every differentiable component.

Each suite draws random instances until at least ``points`` coordinates have
been checked.  Scalar objectives are ``sum(output * R)`` for a fixed random
``R`` so that every output element contributes to the gradient.
"""

from __future__ import annotations

import contextlib
import dataclasses
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .attention import CoordAttention
from .bifpn import FusionNode
from .blocks import (ELAN, SPPCSPC, Bottleneck, C2f, Conv, CoupledHead, DecoupledLevel, DownSample, GhostConv)
from .gradcheck import GradCheckReport, grad_check
from .losses import GridAssignment, WIoUState, ciou_loss, obj_cls_loss, wiou_detached_terms, wiou_loss
from .nn import Module
from .tensor import Tensor

STEP = 1e-6
TOLERANCE = 1e-5


def _projection(out, rng) -> list[np.ndarray]:
    """Freeze a random weighting for every tensor in a (nested) output."""
    return [rng.standard_normal(t.shape) for t in _flatten(out)]


def _flatten(out) -> Iterator[Tensor]:
    if isinstance(out, Tensor):
        yield out
    else:
        for o in out:
            yield from _flatten(o)


def _objective(fn: Callable[[], object], rng) -> Callable[[], Tensor]:
    weights = _projection(fn(), rng)

    def scalar():
        total = None
        for t, w in zip(_flatten(fn()), weights):
            term = (t * Tensor(w)).sum()
            total = term if total is None else total + term
        return total

    return scalar


def _randomize(mod: Module, rng, scale: float = 0.5) -> list[Tensor]:
    mod.initialize(rng, requires_grad=True)
    params = mod.parameters()
    for t in params:
        t.data[...] = rng.standard_normal(t.shape) * scale
    return params


def _module_check(build: Callable[[np.random.Generator], tuple[Module, tuple]], points: int, seed: int,
                  per_tensor: int = 6) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=TOLERANCE)
    while report.checked < points:
        mod, shapes = build(rng)
        params = _randomize(mod, rng)
        inputs = [Tensor(rng.standard_normal(s), requires_grad=True) for s in shapes]
        call = (lambda: mod(inputs)) if getattr(mod, "_takes_list", False) else (lambda: mod(*inputs))
        fn = _objective(call, rng)
        report.merge(grad_check(fn, inputs + params, STEP, TOLERANCE, per_tensor, rng))
    return report


# ---------------------------------------------------------------------------
# loss suites
# ---------------------------------------------------------------------------


def _random_boxes(rng, n: int, lo: float = 0.5) -> np.ndarray:
    xy = rng.uniform(0, 20, size=(n, 2))
    wh = rng.uniform(lo, 12, size=(n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def _box_pairs(rng, n: int) -> tuple[np.ndarray, np.ndarray]:
    gt = _random_boxes(rng, n)
    # predictions jittered around their targets so most pairs overlap
    jitter = rng.normal(0, 2.0, size=(n, 4))
    pred = gt + jitter
    pred[:, 2:] = np.maximum(pred[:, 2:], pred[:, :2] + 0.5)
    return pred, gt


def check_ciou(points: int = 100, seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=TOLERANCE)
    while report.checked < points:
        pred_np, gt = _box_pairs(rng, 8)
        pred = Tensor(pred_np, requires_grad=True)
        report.merge(grad_check(lambda: ciou_loss(pred, gt).sum(), [pred], STEP, TOLERANCE))
    return report


def check_wiou(points: int = 100, seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=TOLERANCE)
    while report.checked < points:
        pred_np, gt = _box_pairs(rng, 8)
        state = WIoUState(running_mean=float(rng.uniform(0.2, 1.0)))
        gain, d2 = wiou_detached_terms(pred_np, gt, state)
        pred = Tensor(pred_np, requires_grad=True)
        fn = lambda: wiou_loss(pred, gt, state, update=False, gain=gain, enclose_d2=d2).sum()  # noqa: E731
        report.merge(grad_check(fn, [pred], STEP, TOLERANCE))
    return report


def check_obj_cls(points: int = 100, seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=TOLERANCE)
    nc = 3
    while report.checked < points:
        grids = [(4, 4), (2, 2)]
        obj = [Tensor(rng.normal(0, 2, size=(2, 1, h, w)), requires_grad=True) for h, w in grids]
        cls = [Tensor(rng.normal(0, 2, size=(2, nc, h, w)), requires_grad=True) for h, w in grids]
        masks, cells, classes = [], [], []
        for h, w in grids:
            m = rng.random((2, h, w)) < 0.3
            masks.append(m)
            idx = np.nonzero(m)
            cells.append(idx)
            classes.append(rng.integers(0, nc, size=len(idx[0])))
        assign = GridAssignment(masks, cells, classes, [np.zeros((len(c), 4)) for c in classes])

        def fn():
            l_obj, l_cls = obj_cls_loss(obj, cls, assign)
            return l_obj + l_cls * 0.7

        report.merge(grad_check(fn, obj + cls, STEP, TOLERANCE, 8, rng))
    return report


# ---------------------------------------------------------------------------
# module suites
# ---------------------------------------------------------------------------


class _Fusion(Module):
    _takes_list = True

    def __init__(self, k: int, c: int, post):
        super().__init__()
        self.node = self.add_child("node", FusionNode(k, c, post))

    def forward(self, xs):
        return self.node(xs)


def _fusion_builder(rng):
    k, c = int(rng.integers(2, 4)), 4
    mod = _Fusion(k, c, None if rng.random() < 0.5 else "ghost")
    return mod, tuple((1, c, 4, 4) for _ in range(k))


def check_fusion(points: int = 100, seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=TOLERANCE)
    while report.checked < points:
        mod, shapes = _fusion_builder(rng)
        params = _randomize(mod, rng)
        w = mod.node.p("w")
        w.data[...] = rng.uniform(0.1, 2.0, size=w.shape)  # keep clear of the ReLU kink
        inputs = [Tensor(rng.standard_normal(s), requires_grad=True) for s in shapes]
        fn = _objective(lambda: mod(inputs), rng)
        report.merge(grad_check(fn, inputs + params, STEP, TOLERANCE, 6, rng))
    return report


def check_attention(points: int = 100, seed: int = 0) -> GradCheckReport:
    def build(rng):
        c = int(rng.choice([4, 8]))
        return CoordAttention(c, reduction=int(rng.choice([2, 4, 32]))), ((2, c, 5, 4),)

    return _module_check(build, points, seed)


BLOCK_BUILDERS: dict[str, Callable] = {
    "conv": lambda rng: (Conv(4, 6, 3, stride=int(rng.integers(1, 3))), ((1, 4, 6, 6),)),
    "ghost": lambda rng: (GhostConv(4, 6, 3, stride=int(rng.integers(1, 3))), ((1, 4, 6, 6),)),
    "elan": lambda rng: (ELAN(4, 4, 8, ghost=bool(rng.integers(0, 2))), ((1, 4, 5, 5),)),
    "downsample": lambda rng: (DownSample(4, 8, ghost=bool(rng.integers(0, 2))), ((1, 4, 6, 6),)),
    "bottleneck": lambda rng: (Bottleneck(4, 4, shortcut=True, ghost=bool(rng.integers(0, 2))), ((1, 4, 5, 5),)),
    "c2f": lambda rng: (C2f(4, 8, 1, shortcut=True, ghost=bool(rng.integers(0, 2))), ((1, 4, 5, 5),)),
    "sppcspc": lambda rng: (SPPCSPC(4, 4, ghost=bool(rng.integers(0, 2))), ((1, 4, 6, 6),)),
    "decoupled_head": lambda rng: (DecoupledLevel(4, 3, ghost=bool(rng.integers(0, 2))), ((1, 4, 4, 4),)),
    "coupled_head": lambda rng: (_ListHead(CoupledHead([4, 6], 3)), ((1, 4, 4, 4), (1, 6, 2, 2))),
}


class _ListHead(Module):
    _takes_list = True

    def __init__(self, head):
        super().__init__()
        self.head = self.add_child("head", head)

    def forward(self, xs):
        return self.head(xs)


def _block_suite(name: str):
    def run(points: int = 100, seed: int = 0) -> GradCheckReport:
        return _module_check(BLOCK_BUILDERS[name], points, seed)

    run.__name__ = f"check_block_{name}"
    return run


SUITES: dict[str, Callable[..., GradCheckReport]] = {
    "ciou": check_ciou,
    "wiou": check_wiou,
    "objcls": check_obj_cls,
    "fusion": check_fusion,
    "attention": check_attention,
    **{f"block:{k}": _block_suite(k) for k in BLOCK_BUILDERS},
}


def select_suites(only: list[str] | None) -> list[str]:
    if not only:
        return list(SUITES)
    out = []
    for pat in only:
        hits = [k for k in SUITES if k == pat or k.startswith(pat + ":")]
        if not hits:
            raise KeyError(f"unknown gradcheck suite {pat!r}; choose from {', '.join(SUITES)}")
        out += [h for h in hits if h not in out]
    return out


@contextlib.contextmanager
def faulty_gradient(kind: str = "mul", factor: float = 1.01):
    """Test hook: scale the vector-Jacobian product of one primitive."""
    orig = T.PRIMITIVES[kind]

    def vjp(*args, **kw):
        return tuple(None if g is None else g * factor for g in orig.vjp(*args, **kw))

    T.PRIMITIVES[kind] = dataclasses.replace(orig, vjp=vjp)
    try:
        yield
    finally:
        T.PRIMITIVES[kind] = orig
