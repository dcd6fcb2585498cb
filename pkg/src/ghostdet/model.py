"""Config-driven model assembly, variant presets and the cost analyzer."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .attention import CoordAttention
from .bifpn import GhostBiFPN
from .blocks import ELAN, SPPCSPC, C2f, CoupledHead, DecoupledHead, DownSample, make_conv
from .nn import Module, elements, profiling, record, scope
from .tensor import ShapeError, Tensor, concat, maxpool2d, upsample_nearest

DEFAULT_ARCH = "yolov7_tiny.yaml"


@dataclass(frozen=True)
class VariantConfig:
    width: float = 1.0
    ghost_backbone: bool = False
    neck: str = "panet"
    head: str = "coupled"
    coord_attention: bool = False
    box_loss: str = "ciou"

    def __post_init__(self):
        if not 0.0 < self.width <= 1.0:
            raise ValueError(f"width multiplier must lie in (0, 1], got {self.width}")
        if self.neck not in ("panet", "bifpn"):
            raise ValueError(f"neck must be panet or bifpn, got {self.neck!r}")
        if self.head not in ("coupled", "decoupled"):
            raise ValueError(f"head must be coupled or decoupled, got {self.head!r}")
        if self.box_loss not in ("ciou", "wiou"):
            raise ValueError(f"box loss must be ciou or wiou, got {self.box_loss!r}")


PRESETS: dict[str, VariantConfig] = {
    "baseline": VariantConfig(),
    "model1": VariantConfig(0.5),
    "model2": VariantConfig(0.5, True),
    "model3": VariantConfig(0.5, True, "bifpn"),
    "model4": VariantConfig(0.5, True, "bifpn", "decoupled"),
    "model5": VariantConfig(0.5, True, "bifpn", "decoupled", True),
    "model6": VariantConfig(0.5, True, "bifpn", "decoupled", True, "wiou"),
}


def load_arch(path: str | Path | None = None) -> dict:
    """Parse an architecture document (YAML or JSON); ``None`` loads the default."""
    if path is None:
        text = resources.files("ghostdet.configs").joinpath(DEFAULT_ARCH).read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValueError(f"cannot parse architecture document: {exc}") from None
    if not isinstance(doc, dict):
        raise ValueError("architecture document must be a mapping")
    for key in ("backbone", "levels", "necks"):
        if key not in doc:
            raise ValueError(f"architecture document is missing {key!r}")
    return doc


def scale_channels(c: int, width: float, round_to: int = 8) -> int:
    return max(round_to, int(c * width / round_to + 0.5) * round_to)


@dataclass
class LayerSpec:
    name: str
    inputs: list[str]
    kind: str
    args: dict[str, Any] = field(default_factory=dict)
    section: str = ""


class _Upsample(Module):
    def forward(self, x):
        y = upsample_nearest(x, 2)
        record("", elements(y), kind="resize")
        return y


class _MaxPool(Module):
    def forward(self, x):
        y = maxpool2d(x, 2)
        record("", elements(y), kind="pool")
        return y


class _Concat(Module):
    def forward(self, *xs):
        return concat(list(xs))


class _Attention(Module):
    def __init__(self, channels, reduction):
        super().__init__()
        self.ca = self.add_child("ca", CoordAttention(channels, reduction))

    def forward(self, x):
        return self.ca(x)


def _make_module(spec: LayerSpec, in_ch: list[int], num_classes: int) -> tuple[Module, Any]:
    """Instantiate ``spec``; returns (module, output channel count(s))."""
    a, k = spec.args, spec.kind
    ghost = bool(a.get("ghost", False))
    if k == "conv":
        m = make_conv(in_ch[0], a["c"], a.get("k", 1), a.get("s", 1), ghost=ghost)
        return m, a["c"]
    if k == "elan":
        return ELAN(in_ch[0], a["hidden"], a["c"], ghost=ghost), a["c"]
    if k == "downsample":
        return DownSample(in_ch[0], a["c"], ghost=ghost), a["c"]
    if k == "c2f":
        return C2f(in_ch[0], a["c"], a.get("n", 1), a.get("shortcut", False), ghost=ghost), a["c"]
    if k == "sppcspc":
        return SPPCSPC(in_ch[0], a["c"], a.get("hidden"), ghost=ghost), a["c"]
    if k == "maxpool":
        return _MaxPool(), in_ch[0]
    if k == "upsample":
        return _Upsample(), in_ch[0]
    if k == "concat":
        return _Concat(), sum(in_ch)
    if k == "ghost_bifpn":
        return GhostBiFPN(in_ch, a["widths"], a.get("post", "ghost")), list(a["widths"])
    if k == "coord_attention":
        return _Attention(in_ch[0], a.get("reduction", 32)), in_ch[0]
    if k == "coupled_head":
        return CoupledHead(in_ch, num_classes), None
    if k == "decoupled_head":
        return DecoupledHead(in_ch, num_classes, ghost=a.get("ghost", True)), None
    raise ValueError(f"layer {spec.name}: unknown kind {k!r}")


_SCALED_KEYS = ("c", "hidden")


def resolve_layers(doc: dict, config: VariantConfig) -> list[LayerSpec]:
    """Flatten the architecture document into one layer list for ``config``."""
    rnd = int(doc.get("round_to", 8))

    def scaled(args: dict) -> dict:
        out = dict(args or {})
        for key in _SCALED_KEYS:
            if key in out:
                out[key] = scale_channels(int(out[key]), config.width, rnd)
        if "widths" in out:
            out["widths"] = [scale_channels(int(c), config.width, rnd) for c in out["widths"]]
        return out

    def rows(section_rows, section):
        specs = []
        for row in section_rows:
            if not isinstance(row, (list, tuple)) or len(row) < 3:
                raise ValueError(f"{section}: malformed layer row {row!r}")
            name, src, kind = row[0], row[1], row[2]
            args = scaled(row[3] if len(row) > 3 else {})
            srcs = list(src) if isinstance(src, (list, tuple)) else [src]
            specs.append(LayerSpec(str(name), [str(s) for s in srcs], str(kind), args, section))
        return specs

    layers = rows(doc["backbone"], "backbone")
    if config.ghost_backbone:
        for ly in layers:
            if ly.kind in ("conv", "elan", "downsample", "c2f", "sppcspc") and "ghost" not in ly.args:
                ly.args["ghost"] = True
    if config.neck not in doc["necks"]:
        raise ValueError(f"architecture document has no neck {config.neck!r}")
    neck = doc["necks"][config.neck]
    layers += rows(neck["layers"], "neck")
    outs = [str(o) for o in neck["outputs"]]
    if config.coord_attention:
        red = int(doc.get("attention", {}).get("reduction", 32))
        new_outs = []
        for i, o in enumerate(outs):
            layers.append(LayerSpec(f"ca{i}", [o], "coord_attention", {"reduction": red}, "attention"))
            new_outs.append(f"ca{i}")
        outs = new_outs
    head_kind = doc.get("heads", {}).get(config.head, f"{config.head}_head")
    layers.append(LayerSpec("head", outs, head_kind, {}, "head"))
    return layers


class ModelGraph(Module):
    """Ordered named layers; ``forward`` returns per-level (cls, reg, obj) maps."""

    def __init__(self, layers: list[LayerSpec], input_shape: tuple[int, int, int], num_classes: int,
                 levels: list[str] | None = None, name: str = "model"):
        super().__init__()
        self.layers = layers
        self.input_shape = tuple(int(v) for v in input_shape)
        self.num_classes = num_classes
        self.name = name
        self.modules: dict[str, Module] = {}
        channels: dict[str, Any] = {"input": self.input_shape[0]}
        seen = {"input"}
        prev = "input"
        for ly in layers:
            ly.inputs = [prev if s == "prev" else s for s in ly.inputs]
            for s in ly.inputs:
                if s.split(":")[0] not in seen:
                    raise ValueError(f"layer {ly.name}: input {s!r} is not produced by an earlier layer")
            in_ch = [self._lookup(channels, s) for s in ly.inputs]
            if ly.name in seen:
                raise ValueError(f"duplicate layer name {ly.name!r}")
            mod, out_ch = _make_module(ly, in_ch, num_classes)
            self.modules[ly.name] = self.add_child(ly.name, mod)
            channels[ly.name] = out_ch
            seen.add(ly.name)
            prev = ly.name
        self.channels = channels
        self.out_shapes = self.infer_shapes()

    @staticmethod
    def _lookup(table, ref):
        base, _, idx = ref.partition(":")
        val = table[base]
        return val[int(idx)] if idx else val

    def forward(self, x: Tensor, return_all: bool = False):
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"model input must be [N,{','.join(map(str, self.input_shape))}], got {list(x.shape)}")
        values: dict[str, Any] = {"input": x}
        out = None
        for ly in self.layers:
            args = [self._lookup(values, s) for s in ly.inputs]
            mod = self.modules[ly.name]
            with scope(ly.name):
                try:
                    if ly.kind in ("ghost_bifpn", "coupled_head", "decoupled_head"):
                        out = mod(args)
                    else:
                        out = mod(*args)
                except ShapeError as exc:
                    raise ShapeError(f"layer {ly.name}: {exc}") from None
            values[ly.name] = out
        return values if return_all else out

    def infer_shapes(self, input_shape=None) -> dict[str, Any]:
        shape = tuple(input_shape or self.input_shape)
        vals = self.forward(Tensor(np.zeros((0,) + shape)), return_all=True)

        def sh(v):
            if isinstance(v, Tensor):
                return tuple(v.shape[1:])
            return [sh(u) for u in v]

        return {k: sh(v) for k, v in vals.items() if k != "input"}

    def strides(self) -> list[int]:
        h = self.input_shape[1]
        head_in = self.layers[-1].inputs
        return [h // self.out_shapes[s.split(":")[0]][int(s.split(":")[1])][1] if ":" in s
                else h // self.out_shapes[s][1] for s in head_in]


def build_model(config: VariantConfig, arch: dict | str | Path | None = None, num_classes: int | None = None,
                input_size: tuple[int, int] | None = None) -> ModelGraph:
    doc = arch if isinstance(arch, dict) else load_arch(arch)
    layers = resolve_layers(doc, config)
    c, h, w = doc.get("input", [3, 640, 640])
    if input_size is not None:
        w, h = input_size
    nc = int(num_classes if num_classes is not None else doc.get("num_classes", 80))
    return ModelGraph(layers, (c, h, w), nc, list(doc["levels"]), doc.get("name", "model"))


# ---------------------------------------------------------------------------
# cost analysis
# ---------------------------------------------------------------------------


@dataclass
class LayerCost:
    name: str
    kind: str
    params: int
    macs: int


@dataclass
class CostReport:
    layers: list[LayerCost]
    input_shape: tuple[int, ...]
    bytes_per_value: int = 2
    convention: str = "mult-adds (one multiply-accumulate = 1; not doubled)"

    @property
    def total_params(self) -> int:
        return sum(ly.params for ly in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(ly.macs for ly in self.layers)

    def weight_mb(self, bytes_per_value: int | None = None) -> float:
        return self.total_params * (bytes_per_value or self.bytes_per_value) / 2**20

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "convention": self.convention,
            "total_params": self.total_params,
            "total_macs": self.total_macs,
            "weight_mb_16bit": round(self.weight_mb(2), 3),
            "weight_mb_32bit": round(self.weight_mb(4), 3),
            "layers": [dataclasses.asdict(ly) for ly in self.layers],
        }

    def table(self) -> str:
        lines = [f"{'layer':<14}{'kind':<16}{'params':>12}{'mult-adds':>16}"]
        for ly in self.layers:
            lines.append(f"{ly.name:<14}{ly.kind:<16}{ly.params:>12,}{ly.macs:>16,}")
        lines.append(f"{'total':<30}{self.total_params:>12,}{self.total_macs:>16,}")
        lines.append(f"weight estimate: {self.weight_mb(2):.2f} MB (16-bit), {self.weight_mb(4):.2f} MB (32-bit)")
        lines.append(f"convention: {self.convention}")
        return "\n".join(lines)


def count_params(graph: ModelGraph) -> CostReport:
    layers = [LayerCost(ly.name, ly.kind, graph.modules[ly.name].num_params(), 0) for ly in graph.layers]
    return CostReport(layers, graph.input_shape)


def count_flops(graph: ModelGraph, input_shape=None) -> CostReport:
    shape = tuple(input_shape or graph.input_shape)
    with profiling() as prof:
        graph.forward(Tensor(np.zeros((0,) + shape)))
    macs: dict[str, int] = {}
    for e in prof.entries:
        top = e.path.split(".")[0]
        macs[top] = macs.get(top, 0) + e.macs
    layers = [
        LayerCost(ly.name, ly.kind, graph.modules[ly.name].num_params(), macs.get(ly.name, 0)) for ly in graph.layers
    ]
    return CostReport(layers, shape)


def profile_entries(graph: ModelGraph, input_shape=None):
    """Leaf-level cost entries (conv, ghost, fusion, pool, ...) of one forward."""
    shape = tuple(input_shape or graph.input_shape)
    with profiling() as prof:
        graph.forward(Tensor(np.zeros((0,) + shape)))
    return prof.entries


def compare_reports(a: CostReport, b: CostReport) -> dict[str, float]:
    """Percent reduction of ``b`` relative to baseline ``a``, one decimal."""
    if a.total_params == 0 or a.total_macs == 0:
        raise ValueError("baseline report has a zero total")
    if a.input_shape != b.input_shape:
        raise ValueError(f"reports use different input shapes {a.input_shape} vs {b.input_shape}")

    def red(x, y):
        return round((1.0 - y / x) * 100.0, 1)

    return {
        "params": red(a.total_params, b.total_params),
        "macs": red(a.total_macs, b.total_macs),
        "weight": red(a.weight_mb(), b.weight_mb()),
    }


def reduction_percent(a: float, b: float) -> float:
    if a == 0:
        raise ValueError("zero baseline")
    return round((1.0 - b / a) * 100.0, 1)


def report_json(report: CostReport) -> str:
    return json.dumps(report.to_dict(), indent=2)
