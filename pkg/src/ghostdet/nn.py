"""Parameter containers and the mult-add profiler shared by all blocks."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import Tensor


@dataclass
class CostEntry:
    path: str
    params: int
    macs: int
    kind: str = ""


class _Profiler:
    def __init__(self):
        self.entries: list[CostEntry] = []
        self.prefix: list[str] = []

    def add(self, name: str, macs: int, params: int = 0, kind: str = ""):
        path = ".".join(self.prefix + [name]) if name else ".".join(self.prefix)
        self.entries.append(CostEntry(path, int(params), int(macs), kind))


_active: list[_Profiler] = []


@contextlib.contextmanager
def profiling():
    prof = _Profiler()
    _active.append(prof)
    try:
        yield prof
    finally:
        _active.pop()


@contextlib.contextmanager
def scope(name: str):
    if _active:
        _active[-1].prefix.append(name)
        try:
            yield
        finally:
            _active[-1].prefix.pop()
    else:
        yield


def record(name: str, macs: int, params: int = 0, kind: str = "") -> None:
    """Record a cost entry if a profiler is active; no-op otherwise."""
    if _active:
        _active[-1].add(name, macs, params, kind)


def elements(t: Tensor) -> int:
    # batch axis excluded: costs are per image
    return int(np.prod(t.shape[1:]))


class Module:
    """Tree of named parameters with lazily allocated storage."""

    def __init__(self):
        self._param_shapes: dict[str, tuple[int, ...]] = {}
        self._param_init: dict[str, str] = {}
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, shape, init: str = "kaiming") -> None:
        self._param_shapes[name] = tuple(int(s) for s in shape)
        self._param_init[name] = init

    def add_child(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def p(self, name: str) -> Tensor:
        t = self._params.get(name)
        if t is None:
            t = Tensor(np.zeros(self._param_shapes[name]))
            self._params[name] = t
        return t

    def set_param(self, name: str, t: Tensor) -> None:
        """Bind tensor ``t`` to the dotted parameter ``name``."""
        if name in self._param_shapes:
            if tuple(t.shape) != self._param_shapes[name]:
                raise ValueError(f"{name}: shape {tuple(t.shape)} != {self._param_shapes[name]}")
            self._params[name] = t
            return
        head, _, rest = name.partition(".")
        if head not in self._children or not rest:
            raise KeyError(f"unknown parameter {name}")
        self._children[head].set_param(rest, t)

    def named_param_shapes(self, prefix: str = "") -> Iterator[tuple[str, tuple[int, ...]]]:
        for k, s in self._param_shapes.items():
            yield prefix + k, s
        for cname, child in self._children.items():
            yield from child.named_param_shapes(f"{prefix}{cname}.")

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for k in self._param_shapes:
            yield prefix + k, self.p(k)
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.named_param_shapes())

    def initialize(self, rng: np.random.Generator, requires_grad: bool = True, gain: float = 1.0) -> "Module":
        for k, shape in self._param_shapes.items():
            mode = self._param_init[k]
            if mode == "zeros":
                arr = np.zeros(shape)
            elif mode == "ones":
                arr = np.ones(shape)
            else:
                fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
                arr = rng.standard_normal(shape) * gain * np.sqrt(1.0 / max(fan_in, 1))
            self._params[k] = Tensor(arr, requires_grad=requires_grad)
        for child in self._children.values():
            child.initialize(rng, requires_grad, gain)
        return self

    def load_state(self, state: dict[str, np.ndarray], prefix: str = "", requires_grad: bool = True) -> None:
        for name, shape in self.named_param_shapes():
            key = prefix + name
            if key not in state:
                raise KeyError(f"missing tensor {key}")
            if tuple(state[key].shape) != shape:
                raise ValueError(f"tensor {key} has shape {tuple(state[key].shape)}, expected {shape}")
        self._load(state, prefix, requires_grad)

    def _load(self, state, prefix, requires_grad):
        for k in self._param_shapes:
            self._params[k] = Tensor(np.array(state[prefix + k], dtype=np.float64), requires_grad=requires_grad)
        for cname, child in self._children.items():
            child._load(state, f"{prefix}{cname}.", requires_grad)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.named_parameters()}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError
