"""Box regression losses (IoU, CIoU, WIoU) and the BCE objectness and
classification terms.

Box tensors are corner form ``[..., 4] = (x1, y1, x2, y2)``.  The tensor
variants return one loss per box and are differentiable w.r.t. ``pred``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, maximum, minimum

_V_SCALE = 4.0 / math.pi**2
H_FLOOR = 1e-9
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"invalid box {self}: need x2 >= x1 and y2 >= y1")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    def shifted(self, dx: float, dy: float) -> "Box":
        return Box(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


def iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``a`` [N,4] and ``b`` [M,4]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def _as_box_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Box):
        return Tensor(x.as_array())
    return Tensor(np.asarray(x, dtype=np.float64))


def _cols(t: Tensor):
    t2 = t.reshape(-1, 4)
    return t2[:, 0], t2[:, 1], t2[:, 2], t2[:, 3]


@dataclass
class _Geometry:
    iou: Tensor
    rho2: Tensor
    enclose_d2: Tensor
    w: Tensor
    h: Tensor


def _geometry(pred: Tensor, gt: Tensor) -> _Geometry:
    px1, py1, px2, py2 = _cols(pred)
    gx1, gy1, gx2, gy2 = _cols(gt)
    iw = maximum(minimum(px2, gx2) - maximum(px1, gx1), 0.0)
    ih = maximum(minimum(py2, gy2) - maximum(py1, gy1), 0.0)
    inter = iw * ih
    w, h = px2 - px1, py2 - py1
    union = w * h + (gx2 - gx1) * (gy2 - gy1) - inter
    iou_t = inter / union
    rho2 = ((px1 + px2 - gx1 - gx2) * 0.5) ** 2 + ((py1 + py2 - gy1 - gy2) * 0.5) ** 2
    cw = maximum(px2, gx2) - minimum(px1, gx1)
    ch = maximum(py2, gy2) - minimum(py1, gy1)
    return _Geometry(iou_t, rho2, cw**2 + ch**2, w, h)


def iou_loss(pred, gt) -> Tensor:
    pred, gt = _as_box_tensor(pred), _as_box_tensor(gt)
    return 1.0 - _geometry(pred, gt).iou


def ciou_loss(pred, gt) -> Tensor:
    """``1 - IoU + rho^2/d^2 + alpha*v`` per box, differentiable w.r.t. ``pred``."""
    pred, gt = _as_box_tensor(pred), _as_box_tensor(gt)
    g = _geometry(pred, gt)
    gx1, gy1, gx2, gy2 = _cols(gt)
    atan_gt = ((gx2 - gx1) / (gy2 - gy1)).arctan()
    atan_pred = (g.w / maximum(g.h, H_FLOOR)).arctan()
    v = (atan_gt - atan_pred) ** 2 * _V_SCALE
    # the tiny term only matters at pred == gt, where it turns 0/0 into 0
    alpha = v / ((1.0 - g.iou) + v + 1e-16)
    return 1.0 - g.iou + g.rho2 / g.enclose_d2 + alpha * v


@dataclass
class WIoUState:
    """Hyperparameters and the running mean of the IoU loss used by WIoU."""

    alpha: float = 1.9
    delta: float = 3.0
    running_mean: float = 1.0
    ema_decay: float = 0.95
    floor: float = field(default=1e-8, repr=False)

    def __post_init__(self):
        if self.alpha <= 1.0:
            raise ValueError("WIoU alpha must be > 1")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("emaDecay must lie in (0, 1)")
        if self.running_mean <= 0.0:
            raise ValueError("running mean of the IoU loss must be positive")

    def update(self, batch_iou_loss) -> None:
        batch_mean = float(np.mean(np.asarray(batch_iou_loss, dtype=np.float64)))
        new = self.ema_decay * self.running_mean + (1.0 - self.ema_decay) * batch_mean
        if new < self.floor:
            warnings.warn(f"WIoU running mean underflow ({new:.3g}); clamped to {self.floor:g}", RuntimeWarning)
            new = self.floor
        self.running_mean = new


def focusing_coefficient(beta, alpha: float = 1.9, delta: float = 3.0):
    """Non-monotonic gain ``r = beta / (delta * alpha**(beta - delta))``."""
    beta = np.asarray(beta, dtype=np.float64)
    return beta / (delta * np.power(alpha, beta - delta))


def wiou_loss(pred, gt, state: WIoUState, update: bool = True, gain=None, enclose_d2=None) -> Tensor:
    """WIoU per box with the gain ``r`` and the enclosing diagonal detached.

    ``gain`` and ``enclose_d2`` override the detached quantities; gradient
    checks use them to freeze the detached values at the base point.  The
    running mean in ``state`` is advanced after the loss is formed when
    ``update`` is set.
    """
    pred, gt = _as_box_tensor(pred), _as_box_tensor(gt)
    g = _geometry(pred, gt)
    l_iou = 1.0 - g.iou
    if gain is None:
        beta = l_iou.data / state.running_mean
        gain = focusing_coefficient(beta, state.alpha, state.delta)
    d2 = g.enclose_d2.data if enclose_d2 is None else np.asarray(enclose_d2, dtype=np.float64)
    loss = (g.rho2 / Tensor(d2)).exp() * l_iou * Tensor(gain)
    if update:
        state.update(l_iou.data)
    return loss


def wiou_detached_terms(pred, gt, state: WIoUState) -> tuple[np.ndarray, np.ndarray]:
    """(gain, enclosing diagonal^2) at the given point, as plain arrays."""
    g = _geometry(_as_box_tensor(pred), _as_box_tensor(gt))
    beta = (1.0 - g.iou.data) / state.running_mean
    return focusing_coefficient(beta, state.alpha, state.delta), g.enclose_d2.data


# ---------------------------------------------------------------------------
# objectness / classification
# ---------------------------------------------------------------------------


@dataclass
class GridAssignment:
    """Per-level targets for the center-cell, one-anchor-per-cell scheme.

    ``obj_mask[l]`` is a bool [B,H,W] indicator of object cells at level l;
    ``cells[l]`` holds (batch, row, col) index arrays of those cells in the
    same order as ``classes[l]`` and ``boxes[l]``.
    """

    obj_mask: list[np.ndarray]
    cells: list[tuple[np.ndarray, np.ndarray, np.ndarray]]
    classes: list[np.ndarray]
    boxes: list[np.ndarray]
    lambda_noobj: float = 0.5

    @property
    def num_objects(self) -> int:
        return int(sum(len(c) for c in self.classes))


def _clamped_prob(logits: Tensor) -> Tensor:
    return minimum(maximum(logits.sigmoid(), PROB_CLAMP), 1.0 - PROB_CLAMP)


def bce(target: np.ndarray, prob: Tensor) -> Tensor:
    """Elementwise ``-(t log p + (1-t) log(1-p))``."""
    t = Tensor(target)
    return -(t * prob.log() + (1.0 - t) * (1.0 - prob).log())


def obj_cls_loss(obj_maps, cls_maps, assignment: GridAssignment) -> tuple[Tensor, Tensor]:
    """Summed objectness and classification BCE over all levels.

    ``obj_maps[l]`` is [B,1,H,W] and ``cls_maps[l]`` is [B,nc,H,W], both raw
    logits.
    """
    l_obj = Tensor(0.0)
    l_cls = Tensor(0.0)
    lam = assignment.lambda_noobj
    for lvl, (obj, cls) in enumerate(zip(obj_maps, cls_maps)):
        mask = assignment.obj_mask[lvl].astype(np.float64)
        target = mask[:, None]
        weight = Tensor(target + lam * (1.0 - target))
        l_obj = l_obj + (bce(target, _clamped_prob(obj)) * weight).sum()
        b, i, j = assignment.cells[lvl]
        if len(b):
            nc = cls.shape[1]
            picked = cls.transpose(0, 2, 3, 1)[(b, i, j)]  # [K,nc]
            onehot = np.zeros((len(b), nc))
            onehot[np.arange(len(b)), assignment.classes[lvl]] = 1.0
            l_cls = l_cls + bce(onehot, _clamped_prob(picked)).sum()
    return l_obj, l_cls


def total_loss(l_obj, l_cls, l_box):
    for name, v in (("l_obj", l_obj), ("l_cls", l_cls), ("l_box", l_box)):
        val = v.item() if isinstance(v, Tensor) else float(v)
        if not math.isfinite(val):
            raise ValueError(f"loss component {name} is not finite ({val})")
    return l_obj + l_cls + l_box
