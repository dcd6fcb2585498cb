"""Convolutional building blocks: standard and Ghost convolutions, ELAN,
DownSample, Bottleneck/C2f, SPPCSPC and the two detection heads.

Every block runs on :mod:`ghostdet.tensor` and reports its mult-adds to an
active profiler, so one forward pass at batch size 0 yields exact per-layer
costs without touching any pixel data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Module, elements, record, scope
from .tensor import ShapeError, Tensor, concat, conv2d, maxpool2d

ACTIVATIONS = {
    None: lambda x: x,
    "silu": lambda x: x.silu(),
    "relu": lambda x: x.relu(),
    "sigmoid": lambda x: x.sigmoid(),
}


# ---------------------------------------------------------------------------
# specs and closed-form costs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    c_in: int
    c_out: int
    k: int = 1
    stride: int = 1
    padding: int | None = None
    bias: bool = True
    groups: int = 1

    def __post_init__(self):
        if min(self.c_in, self.c_out, self.k, self.stride, self.groups) < 1:
            raise ValueError(f"invalid conv spec {self}")
        if self.padding is not None and self.padding < 0:
            raise ValueError("padding must be >= 0")
        if self.c_in % self.groups or self.c_out % self.groups:
            raise ValueError(f"groups {self.groups} must divide c_in {self.c_in} and c_out {self.c_out}")

    @property
    def pad(self) -> int:
        return self.k // 2 if self.padding is None else self.padding


@dataclass(frozen=True)
class GhostSpec:
    """``m`` output maps: ``m/s`` from a k x k conv, the rest from l x l depthwise ops."""

    c_in: int
    m: int
    s: int = 2
    k: int = 1
    l: int = 3
    stride: int = 1
    bias: bool = True

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("redundancy ratio s must be >= 1")
        if min(self.c_in, self.m, self.k, self.l, self.stride) < 1:
            raise ValueError(f"invalid ghost spec {self}")
        if self.m % self.s:
            raise ValueError(f"m={self.m} is not divisible by s={self.s}")

    @property
    def primary(self) -> int:
        return self.m // self.s

    @property
    def cheap(self) -> int:
        return self.m - self.m // self.s


def standard_cost(spec: ConvSpec, out_h: int, out_w: int) -> int:
    return spec.c_out * out_w * out_h * (spec.c_in // spec.groups) * spec.k * spec.k


def ghost_cost(spec: GhostSpec, out_h: int, out_w: int) -> int:
    n = spec.primary
    return n * out_h * out_w * spec.c_in * spec.k**2 + (spec.s - 1) * n * out_h * out_w * spec.l**2


def ghost_saving_ratio(c: int, s: int, k: int, l: int) -> float:
    """Closed-form ghost/standard mult-add ratio for matching shapes."""
    return (c * k * k / s + (s - 1) * l * l / s) / (c * k * k)


def conv_params(spec: ConvSpec) -> int:
    return spec.c_in * spec.c_out * spec.k**2 // spec.groups + (spec.c_out if spec.bias else 0)


def ghost_params(spec: GhostSpec) -> int:
    n = spec.primary
    total = n * spec.c_in * spec.k**2 + spec.cheap * spec.l**2
    return total + (spec.m if spec.bias else 0)


# ---------------------------------------------------------------------------
# functional forms
# ---------------------------------------------------------------------------


def ghost_forward(x: Tensor, spec: GhostSpec, primary_w: Tensor, cheap_w: Tensor | None = None,
                  primary_b: Tensor | None = None, cheap_b: Tensor | None = None, act=None) -> Tensor:
    if x.shape[1] != spec.c_in:
        raise ShapeError(f"ghost conv expects {spec.c_in} input channels, got {x.shape[1]}")
    act = ACTIVATIONS[act] if not callable(act) else act
    y = act(conv2d(x, primary_w, primary_b, stride=spec.stride, padding=spec.k // 2))
    if spec.s == 1:
        return y
    z = act(conv2d(y, cheap_w, cheap_b, stride=1, padding=spec.l // 2, groups=spec.primary))
    return concat([y, z], axis=1)


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------


class Conv(Module):
    """Convolution + bias + activation."""

    def __init__(self, c_in, c_out, k=1, stride=1, padding=None, groups=1, act="silu", bias=True):
        super().__init__()
        self.spec = ConvSpec(c_in, c_out, k, stride, padding, bias, groups)
        self.act = act
        self.add_param("weight", (c_out, c_in // groups, k, k))
        if bias:
            self.add_param("bias", (c_out,), init="zeros")

    @property
    def c_out(self) -> int:
        return self.spec.c_out

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.spec.c_in:
            raise ShapeError(f"conv expects {self.spec.c_in} input channels, got {x.shape[1]}")
        b = self.p("bias") if self.spec.bias else None
        y = conv2d(x, self.p("weight"), b, stride=self.spec.stride, padding=self.spec.pad, groups=self.spec.groups)
        record("", standard_cost(self.spec, y.shape[2], y.shape[3]), conv_params(self.spec), "conv")
        return ACTIVATIONS[self.act](y)


class GhostConv(Module):
    def __init__(self, c_in, m, k=1, stride=1, s=2, l=3, act="silu", bias=True):
        super().__init__()
        self.spec = GhostSpec(c_in, m, s, k, l, stride, bias)
        self.act = act
        n = self.spec.primary
        self.add_param("primary.weight", (n, c_in, k, k))
        if bias:
            self.add_param("primary.bias", (n,), init="zeros")
        if s > 1:
            self.add_param("cheap.weight", (self.spec.cheap, 1, l, l))
            if bias:
                self.add_param("cheap.bias", (self.spec.cheap,), init="zeros")

    @property
    def c_out(self) -> int:
        return self.spec.m

    def forward(self, x: Tensor) -> Tensor:
        sp = self.spec
        cheap = sp.s > 1
        y = ghost_forward(
            x, sp, self.p("primary.weight"),
            self.p("cheap.weight") if cheap else None,
            self.p("primary.bias") if sp.bias else None,
            self.p("cheap.bias") if (sp.bias and cheap) else None,
            act=self.act,
        )
        record("", ghost_cost(sp, y.shape[2], y.shape[3]), ghost_params(sp), "ghost")
        return y


def make_conv(c_in, c_out, k=1, stride=1, ghost=False, act="silu", s=2, l=3):
    if ghost:
        return GhostConv(c_in, c_out, k, stride, s=s, l=l, act=act)
    return Conv(c_in, c_out, k, stride, act=act)


def _run(child: Module, name: str, *args):
    with scope(name):
        try:
            return child(*args)
        except ShapeError as exc:
            raise ShapeError(f"{name}: {exc}") from None


class ELAN(Module):
    """YOLOv7-tiny ELAN: two 1x1 stems, two chained 3x3 convs, concat, 1x1 fuse."""

    def __init__(self, c_in, hidden, c_out, ghost=False):
        super().__init__()
        self.c_out = c_out
        self.cv1 = self.add_child("cv1", make_conv(c_in, hidden, 1, ghost=ghost))
        self.cv2 = self.add_child("cv2", make_conv(c_in, hidden, 1, ghost=ghost))
        self.cv3 = self.add_child("cv3", make_conv(hidden, hidden, 3, ghost=ghost))
        self.cv4 = self.add_child("cv4", make_conv(hidden, hidden, 3, ghost=ghost))
        self.cv5 = self.add_child("cv5", make_conv(4 * hidden, c_out, 1, ghost=ghost))

    def forward(self, x):
        a = _run(self.cv1, "cv1", x)
        b = _run(self.cv2, "cv2", x)
        c = _run(self.cv3, "cv3", b)
        d = _run(self.cv4, "cv4", c)
        return _run(self.cv5, "cv5", concat([d, c, b, a]))


class DownSample(Module):
    """Stride-2 reduction: max-pool branch and strided-conv branch, concatenated."""

    def __init__(self, c_in, c_out, ghost=False):
        super().__init__()
        if c_out % 2:
            raise ValueError("DownSample needs an even c_out")
        half = c_out // 2
        self.c_out = c_out
        self.cv1 = self.add_child("cv1", make_conv(c_in, half, 1, ghost=ghost))
        self.cv2 = self.add_child("cv2", make_conv(c_in, half, 1, ghost=ghost))
        self.cv3 = self.add_child("cv3", make_conv(half, half, 3, stride=2, ghost=ghost))

    def forward(self, x):
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ShapeError(f"DownSample needs even spatial dims, got {x.shape[2]}x{x.shape[3]}")
        pooled = maxpool2d(x, 2)
        record("pool", elements(pooled), kind="pool")
        a = _run(self.cv1, "cv1", pooled)
        b = _run(self.cv3, "cv3", _run(self.cv2, "cv2", x))
        return concat([b, a])


class Bottleneck(Module):
    def __init__(self, c_in, c_out, shortcut=True, expansion=1.0, ghost=False):
        super().__init__()
        hidden = max(1, int(c_out * expansion))
        self.c_out = c_out
        self.add = shortcut and c_in == c_out
        self.cv1 = self.add_child("cv1", make_conv(c_in, hidden, 3, ghost=ghost))
        self.cv2 = self.add_child("cv2", make_conv(hidden, c_out, 3, ghost=ghost))

    def forward(self, x):
        y = _run(self.cv2, "cv2", _run(self.cv1, "cv1", x))
        if self.add:
            record("add", elements(y), kind="eltwise")
            return x + y
        return y


class C2f(Module):
    """YOLOv8 C2f: 1x1 split, n chained bottlenecks, concat of all partials, 1x1 fuse."""

    def __init__(self, c_in, c_out, n=1, shortcut=False, ghost=False):
        super().__init__()
        self.c = c_out // 2
        self.c_out = c_out
        self.cv1 = self.add_child("cv1", make_conv(c_in, 2 * self.c, 1, ghost=ghost))
        self.cv2 = self.add_child("cv2", make_conv((2 + n) * self.c, c_out, 1, ghost=ghost))
        self.m = [
            self.add_child(f"m{i}", Bottleneck(self.c, self.c, shortcut, 1.0, ghost=ghost)) for i in range(n)
        ]

    def forward(self, x):
        y = _run(self.cv1, "cv1", x)
        parts = [y[:, : self.c], y[:, self.c :]]
        for i, blk in enumerate(self.m):
            parts.append(_run(blk, f"m{i}", parts[-1]))
        return _run(self.cv2, "cv2", concat(parts))


class SPPCSPC(Module):
    """Tiny spatial-pyramid pooling block with a CSP shortcut (pools 5, 9, 13)."""

    def __init__(self, c_in, c_out, hidden=None, ghost=False, pools=(5, 9, 13)):
        super().__init__()
        hidden = hidden or c_out
        self.c_out = c_out
        self.pools = tuple(pools)
        self.cv1 = self.add_child("cv1", make_conv(c_in, hidden, 1, ghost=ghost))
        self.cv2 = self.add_child("cv2", make_conv(c_in, hidden, 1, ghost=ghost))
        self.cv3 = self.add_child("cv3", make_conv(hidden * (1 + len(pools)), hidden, 1, ghost=ghost))
        self.cv4 = self.add_child("cv4", make_conv(2 * hidden, c_out, 1, ghost=ghost))

    def forward(self, x):
        a = _run(self.cv1, "cv1", x)
        b = _run(self.cv2, "cv2", x)
        pooled = []
        for k in reversed(self.pools):
            pt = maxpool2d(b, k, stride=1, padding=k // 2)
            record(f"pool{k}", elements(pt), kind="pool")
            pooled.append(pt)
        y = _run(self.cv3, "cv3", concat(pooled + [b]))
        return _run(self.cv4, "cv4", concat([y, a]))


class CoupledHead(Module):
    """Single 1x1 projection per level to [4 box, 1 objectness, nc class] channels."""

    def __init__(self, channels: list[int], num_classes: int):
        super().__init__()
        if num_classes < 1:
            raise ValueError("numClasses must be >= 1")
        self.nc = num_classes
        self.levels = [
            self.add_child(f"l{i}", Conv(c, 5 + num_classes, 1, act=None)) for i, c in enumerate(channels)
        ]

    def forward(self, feats: list[Tensor]):
        outs = []
        for i, (f, conv) in enumerate(zip(feats, self.levels)):
            y = _run(conv, f"l{i}", f)
            outs.append((y[:, 5:], y[:, :4], y[:, 4:5]))
        return outs


class DecoupledLevel(Module):
    """One level of the Ghost decoupled head.

    A 1x1 stem feeds a classification branch and a shared regression and
    objectness branch; each branch owns one 3x3 (Ghost) conv followed by 1x1
    output projections.
    """

    def __init__(self, c_in: int, num_classes: int, ghost: bool = True, width: int | None = None):
        super().__init__()
        if num_classes < 1:
            raise ValueError("numClasses must be >= 1")
        w = width or c_in
        self.stem = self.add_child("stem", Conv(c_in, w, 1))
        self.cls_conv = self.add_child("cls_conv", make_conv(w, w, 3, ghost=ghost))
        self.reg_conv = self.add_child("reg_conv", make_conv(w, w, 3, ghost=ghost))
        self.cls_pred = self.add_child("cls_pred", Conv(w, num_classes, 1, act=None))
        self.reg_pred = self.add_child("reg_pred", Conv(w, 4, 1, act=None))
        self.obj_pred = self.add_child("obj_pred", Conv(w, 1, 1, act=None))

    def forward(self, x):
        s = _run(self.stem, "stem", x)
        c = _run(self.cls_conv, "cls_conv", s)
        r = _run(self.reg_conv, "reg_conv", s)
        return _run(self.cls_pred, "cls_pred", c), _run(self.reg_pred, "reg_pred", r), _run(self.obj_pred, "obj_pred", r)


class DecoupledHead(Module):
    def __init__(self, channels: list[int], num_classes: int, ghost: bool = True):
        super().__init__()
        self.nc = num_classes
        self.levels = [
            self.add_child(f"l{i}", DecoupledLevel(c, num_classes, ghost)) for i, c in enumerate(channels)
        ]

    def forward(self, feats: list[Tensor]):
        return [_run(lv, f"l{i}", f) for i, (f, lv) in enumerate(zip(feats, self.levels))]


def decoupled_head_forward(feature: Tensor, num_classes: int, params: dict[str, Tensor] | None = None,
                           ghost: bool = True):
    """Run one decoupled-head level on ``feature``; returns (cls, reg, obj) maps.

    ``params`` maps the level's parameter names (see ``DecoupledLevel``) to
    tensors; missing entries default to zeros.
    """
    level = DecoupledLevel(feature.shape[1], num_classes, ghost)
    for name, t in (params or {}).items():
        level.set_param(name, t)
    return level(feature)


# ---------------------------------------------------------------------------
# config-driven block builder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    c_in: int
    c_out: int
    hidden: int | None = None
    repeats: int = 1
    shortcut: bool = True
    ghost: bool = False
    num_classes: int = 1
    extra: dict = field(default_factory=dict, hash=False, compare=False)


BLOCK_KINDS = ("GhostELAN", "ELAN", "DownSample", "C2f", "Bottleneck", "GhostDecoupledHead", "SPPCSPC")


def build_block(spec: BlockSpec, input_shape: tuple[int, ...] | None = None) -> Module:
    """Instantiate the block for ``spec``; optionally shape-check it at ``input_shape``."""
    kind = spec.kind
    if kind in ("GhostELAN", "ELAN"):
        hidden = spec.hidden or max(1, spec.c_out // 2)
        blk = ELAN(spec.c_in, hidden, spec.c_out, ghost=spec.ghost or kind == "GhostELAN")
    elif kind == "DownSample":
        blk = DownSample(spec.c_in, spec.c_out, ghost=spec.ghost)
    elif kind == "C2f":
        blk = C2f(spec.c_in, spec.c_out, spec.repeats, spec.shortcut, ghost=spec.ghost)
    elif kind == "Bottleneck":
        blk = Bottleneck(spec.c_in, spec.c_out, spec.shortcut, ghost=spec.ghost)
    elif kind == "SPPCSPC":
        blk = SPPCSPC(spec.c_in, spec.c_out, spec.hidden, ghost=spec.ghost)
    elif kind == "GhostDecoupledHead":
        blk = DecoupledLevel(spec.c_in, spec.num_classes, ghost=True)
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    if input_shape is not None:
        check_block(blk, input_shape, kind)
    return blk


def check_block(blk: Module, input_shape, name: str = "block"):
    """Shape-check ``blk`` with a zero-batch forward; returns the output shape(s)."""
    shape = (0,) + tuple(input_shape[1:])
    try:
        out = blk(Tensor(np.zeros(shape)))
    except ShapeError as exc:
        raise ShapeError(f"{name}: {exc}") from None
    if isinstance(out, tuple):
        return tuple(o.shape for o in out)
    return out.shape
