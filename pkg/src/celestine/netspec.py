"""Declarative network descriptions, shape/parameter analysis and memory estimates."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .engine import BatchNormState, ConvLayerState, LinearState

BYTES_PER_ELEMENT = 4
MB = 1024 ** 2
GB = 1024 ** 3

KINDS = {
    "conv": {"kernel", "out_channels"},
    "maxpool": {"kernel", "stride"},
    "relu": set(),
    "batchnorm": set(),
    "adaptive_avg_pool": {"target_h", "target_w"},
    "flatten": set(),
    "linear": {"units"},
    "softmax": set(),
}
OPTIONAL = {"conv": {"stride"}}
# Layers that get a row number in the architecture table.
NUMBERED_KINDS = ("conv", "maxpool", "linear")


class SpecError(ValueError):
    """Invalid network spec; ``line`` points into the source file when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int | None = None
    stride: int | None = None
    out_channels: int | None = None
    target_h: int | None = None
    target_w: int | None = None
    units: int | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class NetSpec:
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    name: str = "net"

    def to_dict(self) -> dict:
        c, h, w = self.input_shape
        return {"name": self.name, "input_c": c, "input_h": h, "input_w": w,
                "layers": [layer.to_dict() for layer in self.layers]}

    def with_input(self, c: int, h: int, w: int) -> "NetSpec":
        return NetSpec((c, h, w), self.layers, self.name)


def spec_hash(spec: NetSpec) -> bytes:
    """SHA-256 over the canonical JSON of the architecture (name excluded)."""
    d = spec.to_dict()
    d.pop("name")
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).digest()


# ---------------------------------------------------------------- parsing


def _positive_int(value, key: str, line: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise SpecError(f"{key} must be a positive integer, got {value!r}", line)
    return value


def _layer_from_mapping(entry: dict, line: int) -> LayerSpec:
    if not isinstance(entry, dict):
        raise SpecError("each layer must be a mapping", line)
    kind = entry.get("kind")
    if kind not in KINDS:
        raise SpecError(f"unknown layer kind {kind!r}", line)
    given = set(entry) - {"kind"}
    required = KINDS[kind]
    allowed = required | OPTIONAL.get(kind, set())
    if required - given:
        raise SpecError(f"{kind} layer missing {sorted(required - given)}", line)
    if given - allowed:
        raise SpecError(f"{kind} layer does not accept {sorted(given - allowed)}", line)
    fields = {k: _positive_int(entry[k], k, line) for k in given}
    if kind == "conv" and fields.get("stride", 1) != 1:
        raise SpecError("convolutions must have stride 1", line)
    if kind == "conv":
        fields.setdefault("stride", 1)
    return LayerSpec(kind=kind, **fields)


def parse_spec(text: str) -> NetSpec:
    """Parse the YAML network description, validating eagerly."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise SpecError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                        mark.line + 1 if mark else None) from None
    if root is None or not isinstance(root, yaml.MappingNode):
        raise SpecError("spec must be a mapping with input_c/input_h/input_w and layers", 1)
    data = yaml.safe_load(text)
    top_lines = {k.value: k.start_mark.line + 1 for k, _ in root.value}
    allowed = {"name", "input_c", "input_h", "input_w", "layers"}
    unknown = set(data) - allowed
    if unknown:
        key = sorted(unknown)[0]
        raise SpecError(f"unknown top-level key {key!r}", top_lines.get(key))
    for key in ("input_c", "input_h", "input_w", "layers"):
        if key not in data:
            raise SpecError(f"missing top-level key {key!r}", 1)
    shape = tuple(_positive_int(data[k], k, top_lines[k]) for k in ("input_c", "input_h", "input_w"))
    layer_nodes = dict((k.value, v) for k, v in root.value)["layers"]
    if not isinstance(layer_nodes, yaml.SequenceNode) or not layer_nodes.value:
        raise SpecError("layers must be a non-empty list", top_lines["layers"])
    layers = tuple(
        _layer_from_mapping(entry, node.start_mark.line + 1)
        for entry, node in zip(data["layers"], layer_nodes.value)
    )
    spec = NetSpec(shape, layers, str(data.get("name", "net")))
    validate(spec, lines=[n.start_mark.line + 1 for n in layer_nodes.value])
    return spec


def load_spec(path) -> NetSpec:
    return parse_spec(Path(path).read_text())


def dump_spec(spec: NetSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=False)


def _asset(name: str) -> str:
    return resources.files("celestine.assets").joinpath(name).read_text()


def hr_celestialnet_spec() -> NetSpec:
    """The canonical 22-layer HR-CelestialNet for 1x2048x4096 inputs."""
    return parse_spec(_asset("hr_celestialnet.yaml"))


def tiny_spec() -> NetSpec:
    """A scaled-down variant with the same layer kinds for 1x64x128 inputs."""
    return parse_spec(_asset("hr_celestialnet_tiny.yaml"))


# ---------------------------------------------------------------- analysis


@dataclass
class LayerShape:
    index: int  # position in spec.layers
    kind: str
    shape: tuple[int, ...]  # per-sample output shape
    row: int | None = None  # architecture-table row number, if numbered


@dataclass
class ShapeReport:
    input_shape: tuple[int, int, int]
    layers: list[LayerShape]
    flatten_size: int | None

    def numbered(self) -> dict[int, LayerShape]:
        return {s.row: s for s in self.layers if s.row is not None}


def propagate_shapes(spec: NetSpec) -> ShapeReport:
    shape: tuple[int, ...] = tuple(spec.input_shape)
    out: list[LayerShape] = []
    flatten_size = None
    row = 0
    for i, layer in enumerate(spec.layers):
        kind = layer.kind
        if kind in ("conv", "maxpool", "adaptive_avg_pool", "batchnorm") and len(shape) != 3:
            raise SpecError(f"layer {i} ({kind}) needs a C x H x W input, got {shape}")
        if kind == "conv":
            c, h, w = shape
            shape = (layer.out_channels, h - layer.kernel + 1, w - layer.kernel + 1)
        elif kind == "maxpool":
            c, h, w = shape
            if h < layer.kernel or w < layer.kernel:
                raise SpecError(f"layer {i} (maxpool {layer.kernel}) larger than input {h}x{w}")
            shape = (c, (h - layer.kernel) // layer.stride + 1, (w - layer.kernel) // layer.stride + 1)
        elif kind == "adaptive_avg_pool":
            c, h, w = shape
            if layer.target_h > h or layer.target_w > w:
                raise SpecError(f"layer {i} adaptive pool target exceeds input {h}x{w}")
            shape = (c, layer.target_h, layer.target_w)
        elif kind == "flatten":
            shape = (int(np.prod(shape)),)
            flatten_size = shape[0]
        elif kind == "linear":
            if len(shape) != 1:
                raise SpecError(f"layer {i} (linear) needs a flattened input, got {shape}")
            shape = (layer.units,)
        if any(d < 1 for d in shape):
            raise SpecError(f"layer {i} ({kind}) produces empty output {shape}")
        if kind in NUMBERED_KINDS:
            row += 1
        out.append(LayerShape(i, kind, shape, row if kind in NUMBERED_KINDS else None))
    return ShapeReport(tuple(spec.input_shape), out, flatten_size)


def validate(spec: NetSpec, lines: list[int] | None = None) -> ShapeReport:
    try:
        return propagate_shapes(spec)
    except SpecError as exc:
        # Re-anchor the error on the offending layer's source line.
        msg = str(exc)
        if lines and msg.startswith("layer "):
            idx = int(msg.split()[1])
            raise SpecError(msg, lines[idx]) from None
        raise


def _input_shapes(spec: NetSpec) -> list[tuple[int, ...]]:
    report = propagate_shapes(spec)
    return [tuple(spec.input_shape)] + [s.shape for s in report.layers[:-1]]


def layer_param_count(layer: LayerSpec, in_shape: tuple[int, ...], include_batchnorm: bool) -> int:
    if layer.kind == "conv":
        return (layer.kernel ** 2 * in_shape[0] + 1) * layer.out_channels
    if layer.kind == "linear":
        return (in_shape[0] + 1) * layer.units
    if layer.kind == "batchnorm" and include_batchnorm:
        return 2 * in_shape[0]
    return 0


@dataclass
class ParamCount:
    per_layer: list[int]
    total: int


def count_params(spec: NetSpec, include_batchnorm: bool = False) -> ParamCount:
    per_layer = [layer_param_count(layer, s, include_batchnorm)
                 for layer, s in zip(spec.layers, _input_shapes(spec))]
    return ParamCount(per_layer, sum(per_layer))


@dataclass
class ResourceReport:
    batch: int
    input_bytes: int
    param_count: int  # with batchnorm
    param_count_without_batchnorm: int
    param_bytes: int
    activation_bytes: int
    estimated_total_bytes: int
    bytes_per_element: int = BYTES_PER_ELEMENT

    @property
    def input_mb(self) -> float:
        return self.input_bytes / MB

    @property
    def param_mb(self) -> float:
        return self.param_bytes / MB

    @property
    def activation_mb(self) -> float:
        return self.activation_bytes / MB

    @property
    def estimated_total_gb(self) -> float:
        return self.estimated_total_bytes / GB

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(input_mb=self.input_mb, param_mb=self.param_mb,
                 activation_mb=self.activation_mb, estimated_total_gb=self.estimated_total_gb)
        return d


def input_bytes(shape: tuple[int, int, int], batch: int) -> int:
    return batch * int(np.prod(shape)) * BYTES_PER_ELEMENT


def estimate_memory(spec: NetSpec, batch: int = 4) -> ResourceReport:
    """Training-memory estimate: input + parameters + 2 x layer outputs (forward and backward)."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    report = propagate_shapes(spec)
    with_bn = count_params(spec, include_batchnorm=True).total
    without_bn = count_params(spec, include_batchnorm=False).total
    act = batch * BYTES_PER_ELEMENT * sum(int(np.prod(s.shape)) for s in report.layers)
    inp = input_bytes(spec.input_shape, batch)
    params = with_bn * BYTES_PER_ELEMENT
    return ResourceReport(batch, inp, with_bn, without_bn, params, act, inp + params + 2 * act)


# ---------------------------------------------------------------- parameters


def init_params(spec: NetSpec, seed: int = 0, dtype=np.float32) -> list:
    """He-normal conv/linear weights, zero biases, unit batchnorm; one entry per layer."""
    dtype = np.dtype(dtype).type
    rng = np.random.default_rng(seed)
    states: list = []
    for layer, s in zip(spec.layers, _input_shapes(spec)):
        if layer.kind == "conv":
            fan_in = layer.kernel ** 2 * s[0]
            w = rng.standard_normal((layer.out_channels, s[0], layer.kernel, layer.kernel), dtype=dtype)
            w *= dtype(np.sqrt(2.0 / fan_in))
            states.append(ConvLayerState(w,
                                         np.zeros(layer.out_channels, dtype=dtype)))
        elif layer.kind == "linear":
            w = rng.standard_normal((layer.units, s[0]), dtype=dtype)
            w *= dtype(np.sqrt(2.0 / s[0]))
            states.append(LinearState(w,
                                      np.zeros(layer.units, dtype=dtype)))
        elif layer.kind == "batchnorm":
            c = s[0]
            states.append(BatchNormState(np.ones(c, dtype), np.zeros(c, dtype),
                                         np.zeros(c, dtype), np.ones(c, dtype)))
        else:
            states.append(None)
    return states
