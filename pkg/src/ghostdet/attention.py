"""Coordinate attention: direction-aware pooling, a shared 1x1 transform and
per-direction sigmoid gates that rescale the input feature map."""

from __future__ import annotations

from .nn import Module, elements, record
from .tensor import ShapeError, Tensor, concat, conv2d


def ca_pool(x: Tensor) -> tuple[Tensor, Tensor]:
    """Average over width (-> [B,C,H,1]) and over height (-> [B,C,1,W])."""
    if x.ndim != 4:
        raise ShapeError(f"coordinate attention needs an NCHW map, got rank {x.ndim}")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError("H and W must be >= 1")
    return x.mean(axis=3, keepdims=True), x.mean(axis=2, keepdims=True)


class CoordAttention(Module):
    def __init__(self, channels: int, reduction: int = 32):
        super().__init__()
        if reduction < 1:
            raise ValueError("reductionRatio must be a positive int")
        self.channels = channels
        self.reduction = reduction
        # clamps to one channel when reduction exceeds the channel count
        self.mip = max(1, channels // reduction)
        self.add_param("f1.weight", (self.mip, channels, 1, 1))
        self.add_param("f1.bias", (self.mip,), init="zeros")
        self.add_param("fh.weight", (channels, self.mip, 1, 1))
        self.add_param("fh.bias", (channels,), init="zeros")
        self.add_param("fw.weight", (channels, self.mip, 1, 1))
        self.add_param("fw.bias", (channels,), init="zeros")

    def gates(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return (g_h [B,C,H,1], g_w [B,C,1,W]), both in (0, 1)."""
        if x.shape[1] != self.channels:
            raise ShapeError(f"coordinate attention expects {self.channels} channels, got {x.shape[1]}")
        h = x.shape[2]
        zh, zw = ca_pool(x)
        stacked = concat([zh, zw.transpose(0, 1, 3, 2)], axis=2)  # [B,C,H+W,1]
        f = conv2d(stacked, self.p("f1.weight"), self.p("f1.bias")).silu()
        fh = f[:, :, :h]
        fw = f[:, :, h:].transpose(0, 1, 3, 2)
        gh = conv2d(fh, self.p("fh.weight"), self.p("fh.bias")).sigmoid()
        gw = conv2d(fw, self.p("fw.weight"), self.p("fw.bias")).sigmoid()
        return gh, gw

    def forward(self, x: Tensor) -> Tensor:
        gh, gw = self.gates(x)
        out = x * gh * gw
        c, h, w = x.shape[1:]
        n = elements(x)
        record("pool", 2 * n, kind="pool")
        record("f1", self.mip * c * (h + w), self.mip * c + self.mip, "conv")
        record("fh", c * self.mip * h, c * self.mip + c, "conv")
        record("fw", c * self.mip * w, c * self.mip + c, "conv")
        record("gate", 2 * n, kind="eltwise")
        return out


def ca_forward(x: Tensor, params: CoordAttention) -> Tensor:
    return params(x)
