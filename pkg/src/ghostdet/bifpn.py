"""Fast normalized fusion and the three-level Ghost-BiFPN neck."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .blocks import C2f, Conv, GhostConv
from .nn import Module, elements, record, scope
from .tensor import ShapeError, Tensor, maxpool2d, upsample_nearest

EPSILON = 1e-4


class FusionNode(Module):
    """Learnable per-edge weights, ReLU-clamped and normalized by eps + sum.

    ``post`` is applied after the weighted sum: ``"ghost"`` (3x3 Ghost conv),
    ``"c2f"`` (Ghost C2f) or ``None`` for identity.
    """

    def __init__(self, num_inputs: int, channels: int | None = None, post: str | None = "ghost",
                 epsilon: float = EPSILON):
        super().__init__()
        if num_inputs < 1:
            raise ValueError("a fusion node needs at least one input edge")
        self.num_inputs = num_inputs
        self.epsilon = epsilon
        self.add_param("w", (num_inputs,), init="ones")
        self.post = None
        if post == "ghost":
            self.post = self.add_child("post", GhostConv(channels, channels, 3))
        elif post == "c2f":
            self.post = self.add_child("post", C2f(channels, channels, 1, shortcut=False, ghost=True))
        elif post is not None:
            raise ValueError(f"unknown post-fusion op {post!r}")

    def normalized_weights(self) -> Tensor:
        w = self.p("w").relu()
        return w / (w.sum() + self.epsilon)

    def forward(self, inputs: Sequence[Tensor]) -> Tensor:
        return fuse(inputs, self)


def fuse(inputs: Sequence[Tensor], node: FusionNode) -> Tensor:
    if not inputs:
        raise ShapeError("fusion needs at least one input")
    if len(inputs) != node.num_inputs:
        raise ShapeError(f"fusion node has {node.num_inputs} edges, got {len(inputs)} inputs")
    ref = inputs[0].shape
    for i, t in enumerate(inputs[1:], start=1):
        if t.shape != ref:
            raise ShapeError(f"fusion input {i} has shape {t.shape}, expected {ref}")
    wn = node.normalized_weights()
    out = inputs[0] * wn[0]
    for i in range(1, len(inputs)):
        out = out + inputs[i] * wn[i]
    record("fuse", len(inputs) * elements(out), node.num_inputs, "fusion")
    if node.post is not None:
        with scope("post"):
            out = node.post(out)
    return out


class Resample(Module):
    """Nearest upsample (low -> high resolution) or stride-2 max pool (high -> low),
    with a 1x1 projection when channel counts differ."""

    def __init__(self, c_in: int, c_out: int, direction: str):
        super().__init__()
        self.direction = direction
        self.proj = self.add_child("proj", Conv(c_in, c_out, 1)) if c_in != c_out else None

    def forward(self, x: Tensor) -> Tensor:
        if self.direction == "up":
            if self.proj is not None:
                with scope("proj"):
                    x = self.proj(x)
            y = upsample_nearest(x, 2)
        else:
            y = maxpool2d(x, 2)
            if self.proj is not None:
                with scope("proj"):
                    y = self.proj(y)
        record("resize", elements(y), kind="resize")
        return y


# junction name -> ordered input edges
TOPOLOGY = {
    "p2_td": ("p2_in", "p3_in"),
    "p1_out": ("p1_in", "p2_td"),
    "p2_out": ("p2_in", "p2_td", "p1_out"),
    "p3_out": ("p3_in", "p2_out"),
}


class GhostBiFPN(Module):
    """One bidirectional pass over three levels (P1 highest resolution)."""

    def __init__(self, in_channels: Sequence[int], widths: Sequence[int], post: str | None = "ghost"):
        super().__init__()
        if len(in_channels) != 3 or len(widths) != 3:
            raise ValueError("Ghost-BiFPN works on exactly three levels")
        self.widths = list(widths)
        self.lateral = [
            self.add_child(f"lat{i}", Conv(c, w, 1)) if c != w else None
            for i, (c, w) in enumerate(zip(in_channels, widths))
        ]
        w1, w2, w3 = widths
        self.up3 = self.add_child("up3", Resample(w3, w2, "up"))
        self.up2 = self.add_child("up2", Resample(w2, w1, "up"))
        self.down1 = self.add_child("down1", Resample(w1, w2, "down"))
        self.down2 = self.add_child("down2", Resample(w2, w3, "down"))
        level = {"p2_td": w2, "p1_out": w1, "p2_out": w2, "p3_out": w3}
        self.nodes = {
            name: self.add_child(name, FusionNode(len(edges), level[name], post))
            for name, edges in TOPOLOGY.items()
        }

    def forward(self, feats: Sequence[Tensor]) -> list[Tensor]:
        p = []
        for i, f in enumerate(feats):
            if self.lateral[i] is not None:
                with scope(f"lat{i}"):
                    f = self.lateral[i](f)
            p.append(f)
        return list(bifpn_round(p[0], p[1], p[2], self))


def _check_levels(p1: Tensor, p2: Tensor, p3: Tensor) -> None:
    for hi, lo, name in ((p1, p2, "P1/P2"), (p2, p3, "P2/P3")):
        if hi.shape[2] != 2 * lo.shape[2] or hi.shape[3] != 2 * lo.shape[3]:
            raise ShapeError(
                f"{name} resolution ordering violated: {hi.shape[2]}x{hi.shape[3]} vs {lo.shape[2]}x{lo.shape[3]}"
                " (each level must halve the previous)"
            )


def bifpn_round(p1_in: Tensor, p2_in: Tensor, p3_in: Tensor, net: GhostBiFPN):
    _check_levels(p1_in, p2_in, p3_in)
    n = net.nodes

    def run(name, *inputs):
        with scope(name):
            return n[name](list(inputs))

    def rs(mod, name, x):
        with scope(name):
            return mod(x)

    p2_td = run("p2_td", p2_in, rs(net.up3, "up3", p3_in))
    p1_out = run("p1_out", p1_in, rs(net.up2, "up2", p2_td))
    p2_out = run("p2_out", p2_in, p2_td, rs(net.down1, "down1", p1_out))
    p3_out = run("p3_out", p3_in, rs(net.down2, "down2", p2_out))
    return p1_out, p2_out, p3_out


def normalized_weight_sum(raw: np.ndarray, epsilon: float = EPSILON) -> float:
    w = np.maximum(np.asarray(raw, dtype=np.float64), 0.0)
    return float(w.sum() / (epsilon + w.sum()))
