"""Desk-scale training loop on the synthetic rectangle set.

Targets use center-cell assignment: each box is owned by the grid cell that
contains its center, on the level picked by its longer side.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .blocks import Conv, CoupledHead, DecoupledLevel, GhostConv
from .data import AnnotatedImage, synth_dataset
from .losses import GridAssignment, WIoUState, ciou_loss, obj_cls_loss, wiou_loss
from .metrics import Detection, EvalResult, decode_boxes_at, decode_head, evaluate, nms
from .nn import Module
from .model import PRESETS, ModelGraph, VariantConfig, build_model
from .tensor import Tensor, backward, concat, no_grad


class DivergenceError(RuntimeError):
    def __init__(self, step: int, component: str, value: float):
        self.step = step
        super().__init__(f"non-finite {component} loss ({value}) at step {step}")


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 7
    num_images: int = 64
    image_size: int = 64
    num_classes: int = 3
    width: float = 0.125
    box_loss: str = "wiou"
    lambda_noobj: float = 0.5
    box_weight: float = 5.0  # YOLO-style box gain; regression lags obj/cls at toy scale otherwise
    conf_threshold: float = 0.05
    iou_threshold: float = 0.5
    variant: VariantConfig | None = None

    def model_config(self) -> VariantConfig:
        base = self.variant or PRESETS["model6"]
        return dataclasses.replace(base, width=self.width, box_loss=self.box_loss)


@dataclass
class StepLog:
    step: int
    total: float
    obj: float
    cls: float
    box: float


@dataclass
class TrainResult:
    history: list[StepLog]
    final_map: float
    eval: EvalResult
    model: ModelGraph = field(repr=False)

    @property
    def initial_loss(self) -> float:
        return self.history[0].total if self.history else math.nan

    @property
    def final_loss(self) -> float:
        return self.history[-1].total if self.history else math.nan


class Adam:
    def __init__(self, params: Sequence[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1, c2 = 1 - self.b1**self.t, 1 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _conv_modules_in_call_order(model: Module, x: Tensor) -> list[Module]:
    seen: list[Module] = []
    found = [m for m in _walk(model) if isinstance(m, (Conv, GhostConv))]
    for m in found:
        def spy(*args, _m=m, _orig=m.forward):
            if not any(s is _m for s in seen):
                seen.append(_m)
            return _orig(*args)
        m.forward = spy
    try:
        with no_grad():
            model(x)
    finally:
        for m in found:
            del m.forward
    return seen


def _walk(mod: Module):
    yield mod
    for child in mod._children.values():
        yield from _walk(child)


def lsuv_init(model: Module, x: Tensor, target: float = 1.0, iters: int = 2) -> None:
    """Layer-sequential unit-variance init: rescale each activated conv so its
    pre-activation output has std ``target`` on the calibration batch ``x``.

    The graph has no normalization layers, so plain fan-in init lets the
    signal decay geometrically with depth; this restores a usable scale.
    Linear output projections (``act=None``) are left alone.
    """
    for m in _conv_modules_in_call_order(model, x):
        if m.act is None:
            continue
        keys = ["weight"] if isinstance(m, Conv) else ["primary.weight"] + (["cheap.weight"] if m.spec.s > 1 else [])
        act = m.act
        m.act = None
        try:
            for part, key in enumerate(keys):
                for _ in range(iters):
                    captured = []
                    orig = m.forward

                    def grab(*args, _orig=orig):
                        y = _orig(*args)
                        captured.append(y.data)
                        return y

                    m.forward = grab
                    try:
                        with no_grad():
                            model(x)
                    finally:
                        del m.forward
                    y = captured[0]
                    if isinstance(m, GhostConv):
                        n = m.spec.primary
                        y = y[:, :n] if part == 0 else y[:, n:]
                    std = float(y.std())
                    if std < 1e-12:
                        break
                    m.p(key).data *= target / std
        finally:
            m.act = act


def set_objectness_prior(model: Module, prior: float = 0.01) -> None:
    """Bias the objectness logits so that sigmoid(bias) = ``prior``."""
    b = -math.log((1.0 - prior) / prior)
    for m in _walk(model):
        if isinstance(m, DecoupledLevel):
            m.obj_pred.p("bias").data[...] = b
        elif isinstance(m, CoupledHead):
            for lv in m.levels:
                lv.p("bias").data[4] = b


def level_for(box, strides: Sequence[int]) -> int:
    """Smallest level whose range covers the longer side: <2*s0 -> level 0, <4*s0 -> level 1, ..."""
    side = max(box.width, box.height)
    for lvl, s in enumerate(strides[:-1]):
        if side < 2 * s:
            return lvl
    return len(strides) - 1


def assign_targets(annotations: Sequence[AnnotatedImage], grid_shapes: Sequence[tuple[int, int]],
                   strides: Sequence[int], lambda_noobj: float = 0.5) -> GridAssignment:
    n = len(annotations)
    masks = [np.zeros((n, h, w), dtype=bool) for h, w in grid_shapes]
    cells: list[list[tuple[int, int, int]]] = [[] for _ in strides]
    classes: list[list[int]] = [[] for _ in strides]
    boxes: list[list[np.ndarray]] = [[] for _ in strides]
    for b, ann in enumerate(annotations):
        for g in ann.objects:
            if g.ignore:
                continue
            lvl = level_for(g.box, strides)
            s = strides[lvl]
            h, w = grid_shapes[lvl]
            cx, cy = (g.box.x1 + g.box.x2) / 2, (g.box.y1 + g.box.y2) / 2
            i, j = min(int(cy // s), h - 1), min(int(cx // s), w - 1)
            if masks[lvl][b, i, j]:
                continue  # one object per cell; the first claim wins
            masks[lvl][b, i, j] = True
            cells[lvl].append((b, i, j))
            classes[lvl].append(g.class_id)
            boxes[lvl].append(g.box.as_array())
    as_idx = [tuple(np.array(c, dtype=np.int64).reshape(-1, 3).T) for c in cells]
    return GridAssignment(
        masks, as_idx, [np.array(c, dtype=np.int64) for c in classes],
        [np.array(bx, dtype=np.float64).reshape(-1, 4) for bx in boxes], lambda_noobj,
    )


def compute_loss(outputs, assignment: GridAssignment, strides, box_loss: str, wiou_state: WIoUState | None,
                 batch_size: int, box_weight: float = 1.0):
    """Batch-normalized (total, obj, cls, box) loss tensors."""
    l_obj, l_cls = obj_cls_loss([o[2] for o in outputs], [o[0] for o in outputs], assignment)
    l_box = Tensor(0.0)
    pred_boxes, gt_boxes = [], []
    for lvl, (_, reg, _) in enumerate(outputs):
        if len(assignment.classes[lvl]):
            pred_boxes.append(decode_boxes_at(reg, assignment.cells[lvl], strides[lvl]))
            gt_boxes.append(assignment.boxes[lvl])
    if pred_boxes:
        pred = concat(pred_boxes, axis=0)
        gt = np.concatenate(gt_boxes, axis=0)
        if box_loss == "ciou":
            l_box = ciou_loss(pred, gt).sum()
        elif box_loss == "wiou":
            l_box = wiou_loss(pred, gt, wiou_state, update=True).sum()
        else:
            raise ValueError(f"unknown box loss {box_loss!r}")
    scale = 1.0 / batch_size
    l_obj, l_cls, l_box = l_obj * scale, l_cls * scale, l_box * (scale * box_weight)
    return l_obj + l_cls + l_box, l_obj, l_cls, l_box


def predict(model: ModelGraph, images: np.ndarray, conf_threshold: float, iou_threshold: float,
            image_ids: Sequence | None = None, batch_size: int = 32) -> list[Detection]:
    strides = model.strides()
    dets: list[Detection] = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            outs = model(Tensor(images[start:start + batch_size]))
            for (cls, reg, obj), s in zip(outs, strides):
                for d in decode_head(cls, reg, obj, s, conf_threshold):
                    img = start + int(d.image_id)
                    dets.append(Detection(d.box, d.class_id, d.confidence,
                                          image_ids[img] if image_ids is not None else img))
    return nms(dets, iou_threshold)


def evaluate_model(model: ModelGraph, images: np.ndarray, annotations: Sequence[AnnotatedImage],
                   conf_threshold: float = 0.05, iou_threshold: float = 0.5) -> EvalResult:
    dets = predict(model, images, conf_threshold, iou_threshold)
    gts = [dataclasses.replace(g, image_id=i) for i, a in enumerate(annotations) for g in a.objects]
    return evaluate(dets, gts, iou_threshold, classes=range(model.num_classes))


def train_demo(cfg: TrainConfig, log: Callable[[StepLog], None] | None = None) -> TrainResult:
    data = synth_dataset(cfg.seed, cfg.num_images, cfg.image_size, cfg.num_classes)
    images = np.stack([img for img, _ in data])
    anns = [a for _, a in data]
    model = build_model(cfg.model_config(), num_classes=cfg.num_classes,
                        input_size=(cfg.image_size, cfg.image_size))
    rng = np.random.default_rng(cfg.seed)
    model.initialize(rng)
    lsuv_init(model, Tensor(images[: cfg.batch_size]))
    set_objectness_prior(model)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    strides = model.strides()
    grids = [(cfg.image_size // s, cfg.image_size // s) for s in strides]
    state = WIoUState() if cfg.box_loss == "wiou" else None
    history: list[StepLog] = []
    order = rng.permutation(cfg.num_images)
    cursor = 0
    for step in range(cfg.steps):
        if cursor + cfg.batch_size > cfg.num_images:
            order, cursor = rng.permutation(cfg.num_images), 0
        idx = order[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        assignment = assign_targets([anns[i] for i in idx], grids, strides, cfg.lambda_noobj)
        outputs = model(Tensor(images[idx]))
        total, l_obj, l_cls, l_box = compute_loss(outputs, assignment, strides, cfg.box_loss, state, len(idx),
                                                   cfg.box_weight)
        entry = StepLog(step, total.item(), l_obj.item(), l_cls.item(), l_box.item())
        for name in ("obj", "cls", "box", "total"):
            v = getattr(entry, name)
            if not math.isfinite(v):
                raise DivergenceError(step, name, v)
        history.append(entry)
        if log is not None:
            log(entry)
        opt.step(backward(total, params))
    result = evaluate_model(model, images, anns, cfg.conf_threshold, cfg.iou_threshold)
    return TrainResult(history, result.map, result, model)
