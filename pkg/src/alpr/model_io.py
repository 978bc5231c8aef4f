"""Darknet-style network description: cfg parsing, weight file I/O, FLOP counting.

Only the layer kinds the three detector/recognizer networks need are
supported: convolutional, maxpool, route, reorg and region.
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import BinaryIO, Sequence, Union

import numpy as np

from .errors import ConfigError, ModelError

log = logging.getLogger(__name__)

ACTIVATIONS = ("leaky", "linear")
REORG_FLAVORS = ("darknet", "s2d")

# (major, minor, revision); major*10+minor >= 2 means a 64-bit "seen" counter
DEFAULT_HEADER = (0, 2, 0, 0)


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    size: int = 3
    stride: int = 1
    pad: bool = True
    batch_normalize: bool = False
    activation: str = "leaky"
    kind = "convolutional"

    @property
    def pad_px(self) -> int:
        return self.size // 2 if self.pad else 0


@dataclass(frozen=True)
class MaxPoolSpec:
    size: int = 2
    stride: int = 2
    kind = "maxpool"


@dataclass(frozen=True)
class RouteSpec:
    layers: tuple[int, ...]
    kind = "route"


@dataclass(frozen=True)
class ReorgSpec:
    stride: int = 2
    flavor: str = "darknet"
    kind = "reorg"


@dataclass(frozen=True)
class RegionSpec:
    classes: int
    num: int
    anchors: tuple[tuple[float, float], ...]
    kind = "region"


LayerSpec = Union[ConvSpec, MaxPoolSpec, RouteSpec, ReorgSpec, RegionSpec]


@dataclass(frozen=True)
class ConvWeights:
    """Parameters of one convolutional layer, in Darknet file order."""

    biases: np.ndarray
    kernel: np.ndarray  # (filters, channels, size, size)
    scales: np.ndarray | None = None
    rolling_mean: np.ndarray | None = None
    rolling_variance: np.ndarray | None = None

    @property
    def batch_normalized(self) -> bool:
        return self.scales is not None


@dataclass(frozen=True)
class NetworkModel:
    width: int
    height: int
    channels: int
    layers: tuple[LayerSpec, ...]
    shape_trace: tuple[tuple[int, int, int], ...]  # (w, h, c) per layer
    weights: tuple[ConvWeights | None, ...] | None = None
    header: tuple[int, int, int, int] = DEFAULT_HEADER

    @property
    def has_weights(self) -> bool:
        return self.weights is not None

    def input_shape(self, index: int) -> tuple[int, int, int]:
        if index == 0:
            return (self.width, self.height, self.channels)
        return self.shape_trace[index - 1]

    def route_sources(self, index: int) -> list[int]:
        return [_resolve_route(index, j) for j in self.layers[index].layers]

    @property
    def region(self) -> RegionSpec:
        last = self.layers[-1]
        if not isinstance(last, RegionSpec):
            raise ModelError("network does not end in a region layer")
        return last

    @property
    def conv_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if isinstance(l, ConvSpec)]


def _resolve_route(index: int, j: int) -> int:
    return index + j if j < 0 else j


# --------------------------------------------------------------------- parsing


def _split_sections(text: str) -> list[tuple[str, int, dict[str, tuple[str, int]]]]:
    sections = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"unterminated section header {line!r}", lineno)
            sections.append((line[1:-1].strip().lower(), lineno, {}))
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}", lineno)
        if not sections:
            raise ConfigError("option outside of any section", lineno)
        key, value = line.split("=", 1)
        sections[-1][2][key.strip()] = (value.strip(), lineno)
    return sections


def _int(opts, key, default=None, lineno=None):
    if key not in opts:
        if default is None:
            raise ConfigError(f"missing required option {key!r}", lineno)
        return default
    value, ln = opts[key]
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}", ln) from None


def _section_to_layer(kind, lineno, opts) -> LayerSpec:
    if kind in ("convolutional", "conv"):
        activation = opts.get("activation", ("leaky", lineno))[0]
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unsupported activation {activation!r}", lineno)
        return ConvSpec(
            filters=_int(opts, "filters", lineno=lineno),
            size=_int(opts, "size", 1),
            stride=_int(opts, "stride", 1),
            pad=bool(_int(opts, "pad", 0)),
            batch_normalize=bool(_int(opts, "batch_normalize", 0)),
            activation=activation,
        )
    if kind in ("maxpool", "max"):
        size = _int(opts, "size", 2)
        return MaxPoolSpec(size=size, stride=_int(opts, "stride", size))
    if kind == "route":
        if "layers" not in opts:
            raise ConfigError("route needs layers=", lineno)
        value, ln = opts["layers"]
        try:
            idx = tuple(int(v) for v in value.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"bad route layers {value!r}", ln) from None
        if not idx:
            raise ConfigError("route needs at least one source", ln)
        return RouteSpec(idx)
    if kind == "reorg":
        flavor = opts.get("flavor", ("darknet", lineno))[0]
        if flavor not in REORG_FLAVORS:
            raise ConfigError(f"unknown reorg flavor {flavor!r}", lineno)
        return ReorgSpec(stride=_int(opts, "stride", 2), flavor=flavor)
    if kind in ("region", "detection"):
        classes = _int(opts, "classes", lineno=lineno)
        num = _int(opts, "num", 5)
        anchors: tuple[tuple[float, float], ...] = ()
        if "anchors" in opts:
            value, ln = opts["anchors"]
            try:
                vals = [float(v) for v in value.split(",") if v.strip()]
            except ValueError:
                raise ConfigError(f"bad anchors {value!r}", ln) from None
            if len(vals) != 2 * num:
                raise ConfigError(f"expected {2 * num} anchor values, got {len(vals)}", ln)
            anchors = tuple(zip(vals[0::2], vals[1::2]))
        return RegionSpec(classes=classes, num=num, anchors=anchors)
    raise ConfigError(f"unknown section kind [{kind}]", lineno)


def infer_shapes(
    width: int, height: int, channels: int, layers: Sequence[LayerSpec], linenos=None
) -> tuple[tuple[int, int, int], ...]:
    """Propagate (w, h, c) through the layer list, validating as we go."""
    trace: list[tuple[int, int, int]] = []
    linenos = linenos or [None] * len(layers)
    for i, layer in enumerate(layers):
        ln = linenos[i]
        w, h, c = (width, height, channels) if i == 0 else trace[-1]
        if isinstance(layer, RegionSpec) and i != len(layers) - 1:
            raise ConfigError("region layer must be the last layer", ln)
        if isinstance(layer, ConvSpec):
            if layer.size not in (1, 3):
                raise ConfigError(f"conv kernel must be 1 or 3, got {layer.size}", ln)
            if layer.stride < 1 or layer.filters < 1:
                raise ConfigError("conv stride and filters must be positive", ln)
            p = layer.pad_px
            ow = (w + 2 * p - layer.size) // layer.stride + 1
            oh = (h + 2 * p - layer.size) // layer.stride + 1
            out = (ow, oh, layer.filters)
        elif isinstance(layer, MaxPoolSpec):
            if layer.size < 1 or layer.stride < 1:
                raise ConfigError("maxpool size and stride must be positive", ln)
            # right/bottom padding of size-1
            out = ((w - 1) // layer.stride + 1, (h - 1) // layer.stride + 1, c)
        elif isinstance(layer, RouteSpec):
            srcs = [_resolve_route(i, j) for j in layer.layers]
            for s in srcs:
                if not 0 <= s < i:
                    raise ConfigError(f"route source {s} is not an earlier layer", ln)
                if isinstance(layers[s], RegionSpec):
                    raise ConfigError("route cannot consume a region layer", ln)
            dims = [trace[s] for s in srcs]
            if len({d[:2] for d in dims}) != 1:
                raise ConfigError(f"route sources disagree on spatial size: {dims}", ln)
            out = (dims[0][0], dims[0][1], sum(d[2] for d in dims))
        elif isinstance(layer, ReorgSpec):
            s = layer.stride
            if s < 1 or w % s or h % s:
                raise ConfigError(f"reorg stride {s} does not divide {w}x{h}", ln)
            if layer.flavor == "darknet" and c % (s * s):
                raise ConfigError(
                    f"darknet reorg needs channels divisible by {s * s}, got {c}", ln
                )
            out = (w // s, h // s, c * s * s)
        elif isinstance(layer, RegionSpec):
            expected = (layer.classes + 5) * layer.num
            if c != expected:
                raise ConfigError(
                    f"layer feeding region has {c} filters, expected "
                    f"(classes+5)*num = {expected}",
                    ln,
                )
            out = (w, h, c)
        else:  # pragma: no cover
            raise ConfigError(f"unsupported layer {layer!r}", ln)
        if min(out) <= 0:
            raise ConfigError(f"non-positive output dimension {out}", ln)
        trace.append(out)
    return tuple(trace)


def parse_config(text: str) -> NetworkModel:
    """Parse cfg text into a shape-checked, weightless NetworkModel."""
    sections = _split_sections(text)
    if not sections or sections[0][0] not in ("net", "network"):
        raise ConfigError("config must start with a [net] section", sections[0][1] if sections else None)
    _, net_line, net = sections[0]
    width = _int(net, "width", lineno=net_line)
    height = _int(net, "height", lineno=net_line)
    channels = _int(net, "channels", 3)
    if min(width, height, channels) <= 0:
        raise ConfigError("non-positive input dimension", net_line)
    layers = [_section_to_layer(k, ln, o) for k, ln, o in sections[1:]]
    if not layers:
        raise ConfigError("config has no layers", net_line)
    linenos = [ln for _, ln, _ in sections[1:]]
    trace = infer_shapes(width, height, channels, layers, linenos)
    return NetworkModel(width, height, channels, tuple(layers), trace)


def load_config(path) -> NetworkModel:
    return parse_config(Path(path).read_text())


def builtin_config(name: str) -> NetworkModel:
    """Load one of the shipped configs: 'vehicle', 'lp' or 'ocr'."""
    files = {"vehicle": "vehicle-yolov2.cfg", "lp": "lp-fast-yolov2.cfg", "ocr": "cr-net.cfg"}
    text = resources.files("alpr").joinpath("cfg").joinpath(files[name]).read_text()
    return parse_config(text)


def serialize_config(model: NetworkModel) -> str:
    out = ["[net]", f"width={model.width}", f"height={model.height}", f"channels={model.channels}", ""]
    for layer in model.layers:
        out.append(f"[{layer.kind}]")
        if isinstance(layer, ConvSpec):
            out += [
                f"batch_normalize={int(layer.batch_normalize)}",
                f"filters={layer.filters}",
                f"size={layer.size}",
                f"stride={layer.stride}",
                f"pad={int(layer.pad)}",
                f"activation={layer.activation}",
            ]
        elif isinstance(layer, MaxPoolSpec):
            out += [f"size={layer.size}", f"stride={layer.stride}"]
        elif isinstance(layer, RouteSpec):
            out.append("layers=" + ",".join(str(j) for j in layer.layers))
        elif isinstance(layer, ReorgSpec):
            out += [f"stride={layer.stride}", f"flavor={layer.flavor}"]
        elif isinstance(layer, RegionSpec):
            if layer.anchors:
                out.append("anchors=" + ", ".join(f"{float(w)!r},{float(h)!r}" for w, h in layer.anchors))
            out += [f"classes={layer.classes}", f"num={layer.num}"]
        out.append("")
    return "\n".join(out)


# --------------------------------------------------------------------- weights


def _conv_param_count(layer: ConvSpec, in_c: int) -> int:
    n = layer.filters
    return n * in_c * layer.size**2 + (4 * n if layer.batch_normalize else n)


def expected_weight_floats(model: NetworkModel) -> int:
    return sum(
        _conv_param_count(model.layers[i], model.input_shape(i)[2]) for i in model.conv_indices
    )


def load_weights(model: NetworkModel, data: Union[bytes, BinaryIO]) -> NetworkModel:
    """Populate conv parameters from a Darknet weights stream.

    The stream must contain exactly the parameters the layer graph asks for.
    """
    if not isinstance(data, (bytes, bytearray, memoryview)):
        data = data.read()
    buf = bytes(data)
    if len(buf) < 12:
        raise ModelError(f"weights stream truncated: {len(buf)} bytes, header needs 20")
    major, minor, revision = struct.unpack_from("<3i", buf, 0)
    if not (major * 10 + minor >= 2 and major < 1000 and minor < 1000):
        raise ModelError(
            f"unsupported weights version {major}.{minor}.{revision}; "
            "only headers with a 64-bit seen counter are read"
        )
    if len(buf) < 20:
        raise ModelError(f"weights stream truncated: {len(buf)} bytes, header needs 20")
    (seen,) = struct.unpack_from("<Q", buf, 12)
    body = buf[20:]
    if len(body) % 4:
        raise ModelError("weights body is not a whole number of float32 values")
    floats = np.frombuffer(body, dtype="<f4")
    need = expected_weight_floats(model)
    if floats.size < need:
        raise ModelError(f"weights stream truncated: {floats.size} floats, network needs {need}")
    if floats.size > need:
        raise ModelError(f"{floats.size - need} trailing floats after the last layer")

    pos = 0

    def take(n):
        nonlocal pos
        chunk = floats[pos : pos + n].astype(np.float32)
        pos += n
        return chunk

    weights: list[ConvWeights | None] = [None] * len(model.layers)
    for i in model.conv_indices:
        layer = model.layers[i]
        in_c = model.input_shape(i)[2]
        n = layer.filters
        biases = take(n)
        bn = [take(n) for _ in range(3)] if layer.batch_normalize else [None] * 3
        kernel = take(n * in_c * layer.size**2).reshape(n, in_c, layer.size, layer.size)
        weights[i] = ConvWeights(biases, kernel, *bn)
    return replace(model, weights=tuple(weights), header=(major, minor, revision, seen))


def load_weights_file(model: NetworkModel, path) -> NetworkModel:
    return load_weights(model, Path(path).read_bytes())


def write_weights(model: NetworkModel) -> bytes:
    if model.weights is None:
        raise ModelError("model has no weights to write")
    major, minor, revision, seen = model.header
    out = io.BytesIO()
    out.write(struct.pack("<3iQ", major, minor, revision, seen))
    for i in model.conv_indices:
        w = model.weights[i]
        parts = [w.biases]
        if model.layers[i].batch_normalize:
            parts += [w.scales, w.rolling_mean, w.rolling_variance]
        parts.append(w.kernel.ravel())
        for p in parts:
            out.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return out.getvalue()


def with_weights(model: NetworkModel, conv_weights: dict[int, ConvWeights]) -> NetworkModel:
    """Attach hand-built parameters (keyed by layer index) after shape checks."""
    weights: list[ConvWeights | None] = [None] * len(model.layers)
    for i in model.conv_indices:
        if i not in conv_weights:
            raise ModelError(f"no weights given for conv layer {i}")
        layer, w = model.layers[i], conv_weights[i]
        in_c = model.input_shape(i)[2]
        shape = (layer.filters, in_c, layer.size, layer.size)
        kernel = np.asarray(w.kernel, dtype=np.float32)
        if kernel.shape != shape:
            raise ModelError(f"layer {i}: kernel shape {kernel.shape}, expected {shape}")
        if layer.batch_normalize != w.batch_normalized:
            raise ModelError(f"layer {i}: batch-norm parameters do not match the cfg")
        f32 = lambda a: None if a is None else np.asarray(a, dtype=np.float32).reshape(layer.filters)
        weights[i] = ConvWeights(
            f32(w.biases), kernel, f32(w.scales), f32(w.rolling_mean), f32(w.rolling_variance)
        )
    return replace(model, weights=tuple(weights))


def random_weights(model: NetworkModel, seed: int = 0, gain: float = 1.0) -> NetworkModel:
    """He-scaled random parameters; keeps activations finite through deep stacks."""
    rng = np.random.default_rng(seed)
    built = {}
    for i in model.conv_indices:
        layer = model.layers[i]
        in_c = model.input_shape(i)[2]
        n = layer.filters
        std = gain * np.sqrt(2.0 / (in_c * layer.size**2))
        kernel = (rng.standard_normal((n, in_c, layer.size, layer.size)) * std).astype(np.float32)
        biases = (rng.standard_normal(n) * 0.1).astype(np.float32)
        if layer.batch_normalize:
            built[i] = ConvWeights(
                biases,
                kernel,
                rng.uniform(0.5, 1.5, n).astype(np.float32),
                (rng.standard_normal(n) * 0.1).astype(np.float32),
                rng.uniform(0.5, 2.0, n).astype(np.float32),
            )
        else:
            built[i] = ConvWeights(biases, kernel)
    return with_weights(model, built)


# --------------------------------------------------------------------- FLOPs


@dataclass
class BflopReport:
    per_layer: list[float] = field(default_factory=list)  # billions

    @property
    def total(self) -> float:
        return sum(self.per_layer)


def layer_flops(model: NetworkModel, index: int) -> int:
    layer = model.layers[index]
    out_w, out_h, out_c = model.shape_trace[index]
    in_c = model.input_shape(index)[2]
    if isinstance(layer, ConvSpec):
        return 2 * layer.size**2 * in_c * layer.filters * out_w * out_h
    if isinstance(layer, MaxPoolSpec):
        return out_c * layer.size**2 * out_w * out_h
    return 0


def compute_bflops(model: NetworkModel) -> BflopReport:
    return BflopReport([layer_flops(model, i) / 1e9 for i in range(len(model.layers))])


def describe(model: NetworkModel) -> str:
    """Layer table in the same column order as the published architecture tables."""
    report = compute_bflops(model)
    rows = [f"{'#':>3} {'layer':<8} {'filters':>7} {'size':>9} {'input':>16} {'output':>16} {'BFLOP':>7}"]
    for i, layer in enumerate(model.layers):
        iw, ih, ic = model.input_shape(i)
        ow, oh, oc = model.shape_trace[i]
        filt, size, name = "", "", layer.kind
        if isinstance(layer, ConvSpec):
            name, filt, size = "conv", str(layer.filters), f"{layer.size}x{layer.size}/{layer.stride}"
        elif isinstance(layer, MaxPoolSpec):
            name, size = "max", f"{layer.size}x{layer.size}/{layer.stride}"
        elif isinstance(layer, RouteSpec):
            name = "route " + ",".join(str(s) for s in model.route_sources(i))
        elif isinstance(layer, ReorgSpec):
            size = f"/{layer.stride}"
        elif isinstance(layer, RegionSpec):
            name = "detection"
        rows.append(
            f"{i:>3} {name:<8} {filt:>7} {size:>9} {f'{iw}x{ih}x{ic}':>16} "
            f"{f'{ow}x{oh}x{oc}':>16} {report.per_layer[i]:>7.3f}"
        )
    rows.append(f"Total: {report.total:.2f} BFLOPs")
    return "\n".join(rows)
