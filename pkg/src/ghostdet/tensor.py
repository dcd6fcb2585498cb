"""Dense float64 tensors with a small primitive set and reverse-mode autodiff.

Every differentiable computation in the package is expressed through
:func:`apply`, which looks a primitive up in :data:`PRIMITIVES`, checks its
shape rule, evaluates it and (when any input needs a gradient) records an
:class:`OpNode` on the result.  :func:`backward` walks the recorded nodes in
reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "OpNode",
    "ShapeError",
    "PRIMITIVES",
    "apply",
    "eval_primitive",
    "backward",
    "tensor",
    "zeros",
    "ones",
    "conv2d",
    "concat",
    "maxpool2d",
    "upsample_nearest",
    "no_grad",
]


class ShapeError(ValueError):
    """Raised when the inputs of a primitive violate its shape rule."""


class _GradMode:
    enabled = True


class no_grad:
    """Context manager that disables op recording."""

    def __enter__(self):
        self._prev = _GradMode.enabled
        _GradMode.enabled = False

    def __exit__(self, *exc):
        _GradMode.enabled = self._prev
        return False


@dataclass(eq=False)
class OpNode:
    kind: str
    inputs: tuple["Tensor", ...]
    params: dict[str, Any] = field(default_factory=dict)


class Tensor:
    """Immutable-by-convention float64 array with an optional gradient."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: OpNode | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.node = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        tag = f", op={self.node.kind}" if self.node else ""
        return f"Tensor(shape={self.shape}{tag})"

    # arithmetic sugar
    def __add__(self, other):
        return apply("add", self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return apply("sub", self, _as_tensor(other))

    def __rsub__(self, other):
        return apply("sub", _as_tensor(other), self)

    def __mul__(self, other):
        return apply("mul", self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return apply("div", self, _as_tensor(other))

    def __rtruediv__(self, other):
        return apply("div", _as_tensor(other), self)

    def __neg__(self):
        return apply("neg", self)

    def __pow__(self, exponent: float):
        return apply("pow", self, exponent=float(exponent))

    def __getitem__(self, key):
        return apply("index", self, key=key)

    def sum(self, axis=None, keepdims: bool = False):
        return apply("sum", self, axis=_norm_axis(axis), keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return apply("mean", self, axis=_norm_axis(axis), keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        try:
            shape = self.data.reshape(tuple(int(s) for s in shape)).shape  # resolves -1
        except ValueError:
            raise ShapeError(f"cannot reshape {self.shape} into {shape}") from None
        return apply("reshape", self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return apply("transpose", self, axes=tuple(axes))

    def sigmoid(self):
        return apply("sigmoid", self)

    def silu(self):
        return apply("silu", self)

    def relu(self):
        return apply("relu", self)

    def exp(self):
        return apply("exp", self)

    def log(self):
        return apply("log", self)

    def arctan(self):
        return apply("arctan", self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _norm_axis(axis):
    if axis is None:
        return None
    if isinstance(axis, int):
        return (axis,)
    return tuple(axis)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# primitive registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Primitive:
    forward: Callable[..., np.ndarray]
    vjp: Callable[..., tuple]
    shape_rule: Callable[..., tuple] | None = None


PRIMITIVES: dict[str, Primitive] = {}


def _register(kind: str, shape_rule=None):
    def deco(cls):
        PRIMITIVES[kind] = Primitive(cls.forward, cls.vjp, shape_rule)
        return cls

    return deco


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _broadcast_rule(a, b, **_):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a} and {b}") from None


@_register("add", _broadcast_rule)
class _Add:
    forward = staticmethod(lambda a, b: a + b)
    vjp = staticmethod(lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


@_register("sub", _broadcast_rule)
class _Sub:
    forward = staticmethod(lambda a, b: a - b)
    vjp = staticmethod(lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


@_register("mul", _broadcast_rule)
class _Mul:
    forward = staticmethod(lambda a, b: a * b)
    vjp = staticmethod(lambda g, out, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))


@_register("div", _broadcast_rule)
class _Div:
    forward = staticmethod(lambda a, b: a / b)
    vjp = staticmethod(
        lambda g, out, a, b: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape))
    )


@_register("minimum", _broadcast_rule)
class _Minimum:
    forward = staticmethod(np.minimum)

    @staticmethod
    def vjp(g, out, a, b):
        # ties go to the first argument
        first = a <= b
        return _unbroadcast(np.where(first, g, 0.0), a.shape), _unbroadcast(np.where(first, 0.0, g), b.shape)


@_register("maximum", _broadcast_rule)
class _Maximum:
    forward = staticmethod(np.maximum)

    @staticmethod
    def vjp(g, out, a, b):
        first = a >= b
        return _unbroadcast(np.where(first, g, 0.0), a.shape), _unbroadcast(np.where(first, 0.0, g), b.shape)


def _same(a, **_):
    return a


@_register("neg", _same)
class _Neg:
    forward = staticmethod(lambda a: -a)
    vjp = staticmethod(lambda g, out, a: (-g,))


@_register("pow", _same)
class _Pow:
    forward = staticmethod(lambda a, exponent: a**exponent)
    vjp = staticmethod(lambda g, out, a, exponent: (g * exponent * a ** (exponent - 1.0),))


@_register("exp", _same)
class _Exp:
    forward = staticmethod(np.exp)
    vjp = staticmethod(lambda g, out, a: (g * out,))


@_register("log", _same)
class _Log:
    forward = staticmethod(np.log)
    vjp = staticmethod(lambda g, out, a: (g / a,))


@_register("arctan", _same)
class _Arctan:
    forward = staticmethod(np.arctan)
    vjp = staticmethod(lambda g, out, a: (g / (1.0 + a * a),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@_register("sigmoid", _same)
class _Sigmoid:
    forward = staticmethod(_sigmoid)
    vjp = staticmethod(lambda g, out, a: (g * out * (1.0 - out),))


@_register("silu", _same)
class _Silu:
    forward = staticmethod(lambda a: a * _sigmoid(a))

    @staticmethod
    def vjp(g, out, a):
        s = _sigmoid(a)
        return (g * (s + a * s * (1.0 - s)),)


@_register("relu", _same)
class _Relu:
    forward = staticmethod(lambda a: np.maximum(a, 0.0))
    # subgradient 0 at the kink
    vjp = staticmethod(lambda g, out, a: (np.where(a > 0, g, 0.0),))


def _reduce_rule(a, axis, keepdims):
    if axis is None:
        return (1,) * len(a) if keepdims else (1,)
    axes = [ax % len(a) for ax in axis]
    if any(ax >= len(a) for ax in axis) or any(ax < -len(a) for ax in axis):
        raise ShapeError(f"reduction axis {axis} out of range for rank {len(a)}")
    if keepdims:
        return tuple(1 if i in axes else n for i, n in enumerate(a))
    out = tuple(n for i, n in enumerate(a) if i not in axes)
    return out or (1,)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g.reshape([n for i, n in enumerate(shape) if i not in [a % len(shape) for a in axis]]),
                           tuple(a % len(shape) for a in axis))
    return np.broadcast_to(g, shape)


@_register("sum", _reduce_rule)
class _Sum:
    @staticmethod
    def forward(a, axis, keepdims):
        out = a.sum(axis=axis, keepdims=keepdims)
        return np.asarray(out).reshape(_reduce_rule(a.shape, axis, keepdims))

    @staticmethod
    def vjp(g, out, a, axis, keepdims):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)),)


@_register("mean", _reduce_rule)
class _Mean:
    @staticmethod
    def forward(a, axis, keepdims):
        out = a.mean(axis=axis, keepdims=keepdims)
        return np.asarray(out).reshape(_reduce_rule(a.shape, axis, keepdims))

    @staticmethod
    def vjp(g, out, a, axis, keepdims):
        count = a.size // max(out.size, 1) if axis is not None else a.size
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,)


def _reshape_rule(a, shape):
    if int(np.prod(a)) != int(np.prod(shape)):
        raise ShapeError(f"cannot reshape {a} into {shape}")
    return shape


@_register("reshape", _reshape_rule)
class _Reshape:
    forward = staticmethod(lambda a, shape: a.reshape(shape))
    vjp = staticmethod(lambda g, out, a, shape: (g.reshape(a.shape),))


def _transpose_rule(a, axes):
    if sorted(axes) != list(range(len(a))):
        raise ShapeError(f"axes {axes} are not a permutation for rank {len(a)}")
    return tuple(a[i] for i in axes)


@_register("transpose", _transpose_rule)
class _Transpose:
    forward = staticmethod(lambda a, axes: np.transpose(a, axes))
    vjp = staticmethod(lambda g, out, a, axes: (np.transpose(g, np.argsort(axes)),))


@_register("index")
class _Index:
    forward = staticmethod(lambda a, key: np.array(a[key]))

    @staticmethod
    def vjp(g, out, a, key):
        full = np.zeros_like(a)
        np.add.at(full, key, g.reshape(np.shape(a[key])))
        return (full,)


def _concat_rule(*shapes, axis):
    ref = shapes[0]
    ax = axis % len(ref)
    for i, s in enumerate(shapes[1:], start=1):
        if len(s) != len(ref):
            raise ShapeError(f"concat input {i} has rank {len(s)}, expected {len(ref)}")
        for d in range(len(ref)):
            if d != ax and s[d] != ref[d]:
                raise ShapeError(f"concat input {i} dim {d} is {s[d]}, expected {ref[d]}")
    return tuple(sum(s[ax] for s in shapes) if d == ax else ref[d] for d in range(len(ref)))


@_register("concat", _concat_rule)
class _Concat:
    forward = staticmethod(lambda *arrs, axis: np.concatenate(arrs, axis=axis))

    @staticmethod
    def vjp(g, out, *arrs, axis):
        bounds = np.cumsum([a.shape[axis] for a in arrs])[:-1]
        return tuple(np.split(g, bounds, axis=axis))


def _conv_rule(x, w, *rest, stride, padding, groups):
    if len(x) != 4:
        raise ShapeError(f"conv2d input must be NCHW, got rank {len(x)}")
    if len(w) != 4:
        raise ShapeError(f"conv2d weight must be rank 4, got rank {len(w)}")
    n, c, h, wd = x
    m, cg, kh, kw = w
    if stride < 1 or padding < 0 or groups < 1:
        raise ShapeError(f"invalid stride={stride} padding={padding} groups={groups}")
    if c % groups:
        raise ShapeError(f"input channels {c} not divisible by groups {groups}")
    if m % groups:
        raise ShapeError(f"output channels {m} not divisible by groups {groups}")
    if cg != c // groups:
        raise ShapeError(f"weight channel dim is {cg}, expected c/groups = {c // groups}")
    if rest and tuple(rest[0]) != (m,):
        raise ShapeError(f"bias shape {tuple(rest[0])} does not match output channels {m}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h}x{wd}")
    return (n, m, ho, wo)


def _conv_windows(x, kh, kw, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _conv_forward(x, w, b=None, *, stride, padding, groups):
    n, c, _, _ = x.shape
    m, cg, kh, kw = w.shape
    win = _conv_windows(x, kh, kw, stride, padding)  # n c ho wo kh kw
    ho, wo = win.shape[2], win.shape[3]
    if groups == 1:
        out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # n ho wo m
        out = out.transpose(0, 3, 1, 2)
    elif cg == 1 and m == c:
        # depthwise
        out = np.einsum("nchwij,cij->nchw", win, w[:, 0], optimize=True)
    else:
        win = win.reshape(n, groups, cg, ho, wo, kh, kw)
        wg = w.reshape(groups, m // groups, cg, kh, kw)
        out = np.einsum("ngchwij,gmcij->ngmhw", win, wg, optimize=True).reshape(n, m, ho, wo)
    out = np.ascontiguousarray(out)
    if b is not None:
        out = out + b.reshape(1, m, 1, 1)
    return out


def _conv_vjp(g, out, x, w, b=None, *, stride, padding, groups):
    n, c, h, wd = x.shape
    m, cg, kh, kw = w.shape
    win = _conv_windows(x, kh, kw, stride, padding)
    ho, wo = g.shape[2], g.shape[3]
    if groups == 1:
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # m c kh kw
        dcols = np.tensordot(g, w, axes=([1], [0]))  # n ho wo c kh kw
        dcols = dcols.transpose(0, 3, 1, 2, 4, 5)
    elif cg == 1 and m == c:
        gw = np.einsum("nchw,nchwij->cij", g, win, optimize=True)[:, None]
        dcols = np.einsum("nchw,cij->nchwij", g, w[:, 0], optimize=True)
    else:
        wing = win.reshape(n, groups, cg, ho, wo, kh, kw)
        gg = g.reshape(n, groups, m // groups, ho, wo)
        wg = w.reshape(groups, m // groups, cg, kh, kw)
        gw = np.einsum("ngmhw,ngchwij->gmcij", gg, wing, optimize=True).reshape(w.shape)
        dcols = np.einsum("ngmhw,gmcij->ngchwij", gg, wg, optimize=True).reshape(n, c, ho, wo, kh, kw)
    dxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[..., i, j]
    dx = dxp[:, :, padding : padding + h, padding : padding + wd] if padding else dxp
    grads = (np.ascontiguousarray(dx), gw)
    if b is not None:
        grads += (g.sum(axis=(0, 2, 3)),)
    return grads


PRIMITIVES["conv2d"] = Primitive(_conv_forward, _conv_vjp, _conv_rule)


def _pool_rule(x, k, stride, padding):
    if len(x) != 4:
        raise ShapeError(f"maxpool2d input must be NCHW, got rank {len(x)}")
    n, c, h, w = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"pool window {k} larger than padded input {h}x{w}")
    return (n, c, ho, wo)


def _pool_windows(x, k, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return win.reshape(win.shape[:4] + (k * k,))


def _pool_forward(x, k, stride, padding):
    return _pool_windows(x, k, stride, padding).max(axis=-1)


def _pool_vjp(g, out, x, k, stride, padding):
    n, c, h, w = x.shape
    win = _pool_windows(x, k, stride, padding)
    arg = win.argmax(axis=-1)  # first maximal element wins ties
    ho, wo = arg.shape[2], arg.shape[3]
    rows = np.arange(ho)[:, None] * stride + arg // k
    cols = np.arange(wo)[None, :] * stride + arg % k
    hp, wp = h + 2 * padding, w + 2 * padding
    flat = (np.arange(n * c).reshape(n, c, 1, 1) * hp + rows) * wp + cols
    dxp = np.bincount(flat.ravel(), weights=g.ravel(), minlength=n * c * hp * wp).reshape(n, c, hp, wp)
    return (dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp,)


PRIMITIVES["maxpool2d"] = Primitive(_pool_forward, _pool_vjp, _pool_rule)


def _upsample_rule(x, scale):
    if len(x) != 4:
        raise ShapeError(f"upsample input must be NCHW, got rank {len(x)}")
    return (x[0], x[1], x[2] * scale, x[3] * scale)


@_register("upsample", _upsample_rule)
class _Upsample:
    forward = staticmethod(lambda x, scale: x.repeat(scale, axis=2).repeat(scale, axis=3))

    @staticmethod
    def vjp(g, out, x, scale):
        n, c, h, w = x.shape
        return (g.reshape(n, c, h, scale, w, scale).sum(axis=(3, 5)),)


# ---------------------------------------------------------------------------
# evaluation and recording
# ---------------------------------------------------------------------------


def _check_shape(kind: str, shapes: Sequence[tuple], params: dict) -> tuple | None:
    prim = PRIMITIVES.get(kind)
    if prim is None:
        raise ValueError(f"unknown primitive kind {kind!r}")
    if prim.shape_rule is None:
        return None
    return tuple(prim.shape_rule(*shapes, **params))


def eval_primitive(node: OpNode, inputs: Sequence[Tensor]) -> Tensor:
    """Evaluate ``node`` on ``inputs`` without recording anything."""
    arrays = [t.data for t in inputs]
    expected = _check_shape(node.kind, [a.shape for a in arrays], node.params)
    out = PRIMITIVES[node.kind].forward(*arrays, **node.params)
    out = np.asarray(out, dtype=np.float64)
    if expected is not None and out.shape != expected:
        out = out.reshape(expected)
    return Tensor._wrap(out)


def apply(kind: str, *inputs: Tensor, **params) -> Tensor:
    node = OpNode(kind, tuple(inputs), params)
    out = eval_primitive(node, inputs)
    if _GradMode.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = node
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        key = id(t)
        if expanded:
            state[key] = 2
            order.append(t)
            continue
        s = state.get(key)
        if s == 2:
            continue
        if s == 1:
            raise RuntimeError("cycle detected in recorded graph")
        state[key] = 1
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                ps = state.get(id(parent))
                if ps == 1:
                    raise RuntimeError("cycle detected in recorded graph")
                if ps is None and parent.requires_grad:
                    stack.append((parent, False))
    return order


def backward(root: Tensor, wrt: Iterable[Tensor] | None = None, accumulate: bool = False):
    """Reverse-mode gradient of scalar ``root``.

    Returns a list of gradients aligned with ``wrt``; tensors the root does not
    depend on receive zeros.  With ``wrt=None`` gradients are stored on every
    leaf's ``.grad`` instead (summed into an existing ``.grad`` when
    ``accumulate`` is set).
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    wrt = None if wrt is None else list(wrt)
    keep = {id(root)} if wrt is None else {id(t) for t in wrt} | {id(root)}
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    order = _topo_order(root) if root.requires_grad else [root]
    for t in reversed(order):
        g = grads.get(id(t))
        if g is None or t.node is None:
            continue
        node = t.node
        in_grads = PRIMITIVES[node.kind].vjp(g, t.data, *[p.data for p in node.inputs], **node.params)
        for parent, pg in zip(node.inputs, in_grads):
            if not parent.requires_grad or pg is None:
                continue
            k = id(parent)
            if k in grads:
                grads[k] = grads[k] + pg
            else:
                grads[k] = pg
        if id(t) not in keep:
            del grads[id(t)]
    if wrt is None:
        for t in order:
            if t.node is None and t.requires_grad:
                g = grads.get(id(t), np.zeros_like(t.data))
                t.grad = t.grad + g if (accumulate and t.grad is not None) else np.array(g)
        return None
    return [np.array(grads.get(id(t), np.zeros_like(t.data))).reshape(t.shape) for t in wrt]


# ---------------------------------------------------------------------------
# functional helpers
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0,
           groups: int = 1) -> Tensor:
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply("conv2d", *inputs, stride=int(stride), padding=int(padding), groups=int(groups))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one input")
    return apply("concat", *tensors, axis=axis)


def maxpool2d(x: Tensor, k: int = 2, stride: int | None = None, padding: int = 0) -> Tensor:
    return apply("maxpool2d", x, k=int(k), stride=int(stride or k), padding=int(padding))


def upsample_nearest(x: Tensor, scale: int = 2) -> Tensor:
    return apply("upsample", x, scale=int(scale))


def minimum(a, b) -> Tensor:
    return apply("minimum", _as_tensor(a), _as_tensor(b))


def maximum(a, b) -> Tensor:
    return apply("maximum", _as_tensor(a), _as_tensor(b))
