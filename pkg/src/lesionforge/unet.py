"""UNet schedule, weight binding and inference.

The network is a flat, ordered list of :class:`Layer` records. Every layer
(input, conv, batch-norm, ReLU, pool, deconv, crop, concat, softmax and the
final pixel-classification step) counts as one; the schedule built by
:func:`build_unet_schedule` totals exactly 109:

    input                                              1
    4 encoder stages x [3 x (conv, bn, relu) + pool]  40
    bridge 3 x (conv, bn, relu)                        9
    4 decoder stages x [(deconv, bn, relu) + crop
                        + concat + 3 x (conv, bn, relu)] 56
    1x1 conv, softmax, pixel classification            3
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import udls
from .tensor import (
    BatchNormParams,
    ConvParams,
    ShapeError,
    apply_activation,
    as_tensor,
    batchnorm_infer,
    center_crop,
    conv2d,
    maxpool2,
    transposed_conv2d,
)

LAYER_COUNT = 109
INPUT_SIZE = 224
N_CLASSES = 2
LESION_CHANNEL = 1
BN_EPS = 1e-5


@dataclass(frozen=True)
class Layer:
    kind: str
    name: str
    in_ch: int
    out_ch: int
    inputs: tuple[str, ...] = ()


@dataclass(frozen=True)
class LayerSchedule:
    layers: tuple[Layer, ...]
    base_width: int

    def __post_init__(self):
        if len(self.layers) != LAYER_COUNT:
            raise ValueError(f"UNet schedule must have {LAYER_COUNT} layers, got {len(self.layers)}")

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def count(self, kind: str) -> int:
        return sum(layer.kind == kind for layer in self.layers)

    @property
    def bridge_output(self) -> str:
        return "bridge.relu3"

    @property
    def embedding_size(self) -> int:
        return 8 * self.base_width

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        """Expected tensor name -> dims for every parameterized layer."""
        shapes: dict[str, tuple[int, ...]] = {}
        for layer in self.layers:
            if layer.kind == "conv":
                k = 1 if layer.name == "head.conv" else 3
                shapes[f"{layer.name}.weight"] = (layer.out_ch, layer.in_ch, k, k)
                shapes[f"{layer.name}.bias"] = (layer.out_ch,)
            elif layer.kind == "deconv":
                shapes[f"{layer.name}.weight"] = (layer.in_ch, layer.out_ch, 2, 2)
                shapes[f"{layer.name}.bias"] = (layer.out_ch,)
            elif layer.kind == "bn":
                for p in ("gamma", "beta", "mean", "var"):
                    shapes[f"{layer.name}.{p}"] = (layer.out_ch,)
        return shapes


def encoder_widths(base_width: int) -> tuple[int, int, int, int]:
    # channel count doubles after the second downsampling stage
    w = base_width
    return (w, w, 2 * w, 4 * w)


def build_unet_schedule(base_width: int = 32) -> LayerSchedule:
    if base_width < 1:
        raise ValueError("base_width must be >= 1")
    layers: list[Layer] = [Layer("input", "input", 3, 3)]

    def block(prefix: str, src: str, c_in: int, c_out: int, n: int) -> str:
        for k in range(1, n + 1):
            layers.append(Layer("conv", f"{prefix}.conv{k}", c_in, c_out, (src,)))
            layers.append(Layer("bn", f"{prefix}.bn{k}", c_out, c_out, (f"{prefix}.conv{k}",)))
            layers.append(Layer("relu", f"{prefix}.relu{k}", c_out, c_out, (f"{prefix}.bn{k}",)))
            src, c_in = f"{prefix}.relu{k}", c_out
        return src

    widths = encoder_widths(base_width)
    src, c = "input", 3
    skips: list[tuple[str, int]] = []
    for s, w in enumerate(widths, start=1):
        src = block(f"enc{s}", src, c, w, 3)
        skips.append((src, w))
        layers.append(Layer("maxpool", f"enc{s}.pool", w, w, (src,)))
        src, c = f"enc{s}.pool", w

    bridge = 2 * widths[-1]
    src = block("bridge", src, c, bridge, 3)
    c = bridge

    for s in range(4, 0, -1):
        skip, w = skips[s - 1]
        p = f"dec{s}"
        layers.append(Layer("deconv", f"{p}.deconv", c, w, (src,)))
        layers.append(Layer("bn", f"{p}.upbn", w, w, (f"{p}.deconv",)))
        layers.append(Layer("relu", f"{p}.uprelu", w, w, (f"{p}.upbn",)))
        layers.append(Layer("crop", f"{p}.crop", w, w, (skip, f"{p}.uprelu")))
        layers.append(Layer("concat", f"{p}.concat", 2 * w, 2 * w, (f"{p}.uprelu", f"{p}.crop")))
        src = block(p, f"{p}.concat", 2 * w, w, 3)
        c = w

    layers.append(Layer("conv", "head.conv", c, N_CLASSES, (src,)))
    layers.append(Layer("softmax", "head.softmax", N_CLASSES, N_CLASSES, ("head.conv",)))
    layers.append(Layer("pixelclass", "head.pixelclass", N_CLASSES, 1, ("head.softmax",)))
    return LayerSchedule(tuple(layers), base_width)


class WeightsError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkWeights:
    tensors: Mapping[str, np.ndarray]
    schedule: LayerSchedule

    def conv(self, name: str, stride: int = 1, padding: int = 0) -> ConvParams:
        return ConvParams(self.tensors[f"{name}.weight"], self.tensors[f"{name}.bias"], stride, padding)

    def bn(self, name: str) -> BatchNormParams:
        t = self.tensors
        return BatchNormParams(t[f"{name}.gamma"], t[f"{name}.beta"], t[f"{name}.mean"], t[f"{name}.var"], BN_EPS)


def bind_weights(schedule: LayerSchedule, tensors: Mapping[str, np.ndarray]) -> NetworkWeights:
    """Check that ``tensors`` covers every parameterized layer with matching dims."""
    bound = {}
    for key, dims in schedule.parameter_shapes().items():
        layer = key.rsplit(".", 1)[0]
        if key not in tensors:
            raise WeightsError(f"layer {layer!r}: missing tensor {key!r}")
        arr = np.asarray(tensors[key], dtype=np.float32)
        if arr.shape != dims:
            raise WeightsError(f"layer {layer!r}: tensor {key!r} has dims {arr.shape}, expected {dims}")
        bound[key] = arr
    return NetworkWeights(bound, schedule)


def load_weights(schedule: LayerSchedule, container: bytes) -> NetworkWeights:
    return bind_weights(schedule, udls.decode(container))


def init_random_weights(schedule: LayerSchedule, seed: int = 0, lesion_prior: float = 0.01) -> dict[str, np.ndarray]:
    """He-normal convolutions, identity batch-norm and a background-biased head.

    The head bias is set so the initial lesion probability is ``lesion_prior``
    everywhere, the usual prior-probability initialization for a rare
    foreground class.
    """
    rng = np.random.default_rng(seed)
    out: dict[str, np.ndarray] = {}
    for key, dims in schedule.parameter_shapes().items():
        param = key.rsplit(".", 1)[1]
        if param == "weight":
            if key.startswith("head."):
                w = rng.normal(0.0, 0.01, dims)
            else:
                fan_in = dims[1] * dims[2] * dims[3] if not key.endswith("deconv.weight") else dims[0] * dims[2] * dims[3]
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), dims)
            out[key] = w.astype(np.float32)
        elif param == "bias":
            b = np.zeros(dims)
            if key == "head.conv.bias":
                logit = np.log(lesion_prior / (1.0 - lesion_prior))
                b[LESION_CHANNEL] = logit / 2
                b[1 - LESION_CHANNEL] = -logit / 2
            out[key] = b.astype(np.float32)
        elif param in ("gamma", "var"):
            out[key] = np.ones(dims, dtype=np.float32)
        else:
            out[key] = np.zeros(dims, dtype=np.float32)
    return out


@dataclass
class SegmentationResult:
    probabilities: np.ndarray
    mask: np.ndarray
    trace: list[str] = field(default_factory=list)


def run_schedule(
    image: np.ndarray,
    weights: NetworkWeights,
    stop_after: str | None = None,
    on_layer: Callable[[Layer], None] | None = None,
) -> dict[str, np.ndarray]:
    """Execute layers in order; returns the live activations by layer name."""
    image = as_tensor(image, 3)
    if image.shape != (3, INPUT_SIZE, INPUT_SIZE):
        raise ShapeError(f"expected a 3x{INPUT_SIZE}x{INPUT_SIZE} image, got {'x'.join(map(str, image.shape))}")
    schedule = weights.schedule
    last_use = {}
    for idx, layer in enumerate(schedule.layers):
        for src in layer.inputs:
            last_use[src] = idx

    keep = {stop_after, "head.softmax", "head.pixelclass"}
    acts: dict[str, np.ndarray] = {}
    for idx, layer in enumerate(schedule.layers):
        ins = [acts[name] for name in layer.inputs]
        kind = layer.kind
        if kind == "input":
            out = image
        elif kind == "conv":
            pad = 0 if layer.name == "head.conv" else 1
            out = conv2d(ins[0], weights.conv(layer.name, padding=pad))
        elif kind == "bn":
            out = batchnorm_infer(ins[0], weights.bn(layer.name))
        elif kind == "relu":
            out = apply_activation(ins[0], "relu")
        elif kind == "maxpool":
            out = maxpool2(ins[0])
        elif kind == "deconv":
            out = transposed_conv2d(ins[0], weights.conv(layer.name, stride=2))
        elif kind == "crop":
            enc, dec = ins
            out = center_crop(enc, dec.shape[1], dec.shape[2])
        elif kind == "concat":
            out = np.concatenate(ins, axis=0)
        elif kind == "softmax":
            out = apply_activation(ins[0], "softmax")
        elif kind == "pixelclass":
            out = (ins[0][LESION_CHANNEL] > 0.5).astype(np.uint8)
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
        acts[layer.name] = out
        if on_layer is not None:
            on_layer(layer)
        if layer.name == stop_after:
            break
        for src in layer.inputs:
            if last_use[src] == idx and src not in keep:
                del acts[src]
    return acts


def forward_segment(image: np.ndarray, weights: NetworkWeights) -> SegmentationResult:
    trace: list[str] = []
    acts = run_schedule(image, weights, on_layer=lambda layer: trace.append(layer.name))
    return SegmentationResult(acts["head.softmax"], acts["head.pixelclass"], trace)


def extract_cnn_features(image: np.ndarray, weights: NetworkWeights | list[NetworkWeights]) -> np.ndarray:
    """Global-average-pooled bridge activations; several networks concatenate in order."""
    if isinstance(weights, NetworkWeights):
        weights = [weights]
    blocks = []
    for w in weights:
        bridge = w.schedule.bridge_output
        acts = run_schedule(image, w, stop_after=bridge)
        blocks.append(acts[bridge].astype(np.float64).mean(axis=(1, 2)).astype(np.float32))
    return np.concatenate(blocks)
