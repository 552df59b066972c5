"""
Inference - Forward Pass Under a Customized Format
Every multiply and every add of conv/fc layers is a quantized MAC.

Each neuron accumulates serially in canonical order (input channel, kernel
row, kernel column). The loops below walk that order once and apply each MAC
to all neurons of the batch at the same time, which keeps the per-neuron
result identical to a scalar walk.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import reduce
from itertools import product
from types import MappingProxyType
from typing import Mapping

import numpy as np

from config.settings import BATCH_SIZE
from modules.numeric import BASELINE, mac, qadd, qdiv, quantize
from utils.errors import DomainError, MissingTensorError, ShapeMismatchError

logger = logging.getLogger(__name__)

# Dense row-major array; activations carry a leading batch axis
Tensor = np.ndarray

# ============================================================
# 1. NETWORK DEFINITION
# ============================================================


class LayerKind(str, Enum):
    CONV2D = "conv2d"
    FULLY_CONNECTED = "fully_connected"
    RELU = "relu"
    MAX_POOL = "max_pool"
    AVG_POOL = "avg_pool"
    SOFTMAX = "softmax"
    FLATTEN = "flatten"


MAC_LAYERS = (LayerKind.CONV2D, LayerKind.FULLY_CONNECTED)
POOL_LAYERS = (LayerKind.MAX_POOL, LayerKind.AVG_POOL)


@dataclass(frozen=True)
class LayerDef:
    name: str
    kind: LayerKind
    weight: str | None = None
    bias: str | None = None
    stride: int | None = None
    padding: int = 0
    window: int | None = None
    out_channels: int | None = None
    kernel: tuple[int, int] | None = None
    units: int | None = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', LayerKind(self.kind))
        if self.kernel is not None:
            object.__setattr__(self, 'kernel', tuple(self.kernel))
        for key in ('stride', 'window', 'out_channels', 'units'):
            value = getattr(self, key)
            if value is not None and value < 1:
                raise DomainError(f"layer '{self.name}': {key} must be at least 1, got {value}")
        if self.padding < 0:
            raise DomainError(f"layer '{self.name}': padding must be nonnegative, got {self.padding}")

    @property
    def pool_window(self):
        return self.window if self.window is not None else 2

    @property
    def effective_stride(self):
        if self.stride is not None:
            return self.stride
        return self.pool_window if self.kind in POOL_LAYERS else 1


@dataclass(frozen=True, eq=False)
class NetworkDef:
    name: str
    input_shape: tuple[int, ...]
    layers: tuple[LayerDef, ...]
    weights: Mapping[str, Tensor]
    input_mean: tuple[float, ...] | None = None
    output_shapes: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        frozen = {}
        for name, arr in self.weights.items():
            arr = np.array(arr, dtype=np.float32)
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, 'weights', MappingProxyType(frozen))
        object.__setattr__(self, 'input_shape', tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, 'layers', tuple(self.layers))
        if self.input_mean is not None:
            object.__setattr__(self, 'input_mean', tuple(float(m) for m in self.input_mean))
            if len(self.input_mean) != self.input_shape[0]:
                raise ShapeMismatchError('input', (self.input_shape[0],), (len(self.input_mean),), what="mean length")
        object.__setattr__(self, 'output_shapes', tuple(infer_shapes(self.layers, self.weights, self.input_shape)))

    @property
    def score_layer_index(self):
        """Index of the last layer before any trailing softmax."""
        index = len(self.layers) - 1
        while index > 0 and self.layers[index].kind is LayerKind.SOFTMAX:
            index -= 1
        return index


def _tensor(weights, name, layer):
    if name not in weights:
        raise MissingTensorError(name, layer.name)
    return weights[name]


def _check_bias(layer, weights, count):
    if layer.bias is None:
        return
    bias = _tensor(weights, layer.bias, layer)
    if bias.shape != (count,):
        raise ShapeMismatchError(layer.name, (count,), bias.shape, what="bias shape")


def _conv_shape(layer, weights, shape):
    if len(shape) != 3:
        raise ShapeMismatchError(layer.name, ('C', 'H', 'W'), shape, what="input rank")
    w = _tensor(weights, layer.weight, layer)
    if w.ndim != 4:
        raise ShapeMismatchError(layer.name, (4,), (w.ndim,), what="weight rank")
    out_ch, in_ch, kh, kw = w.shape
    if in_ch != shape[0]:
        raise ShapeMismatchError(layer.name, (out_ch, shape[0], kh, kw), w.shape, what="weight shape")
    if layer.out_channels is not None and layer.out_channels != out_ch:
        raise ShapeMismatchError(layer.name, (layer.out_channels,), (out_ch,), what="output channels")
    if layer.kernel is not None and layer.kernel != (kh, kw):
        raise ShapeMismatchError(layer.name, layer.kernel, (kh, kw), what="kernel")
    _check_bias(layer, weights, out_ch)
    stride, pad = layer.effective_stride, layer.padding
    if stride < 1:
        raise ShapeMismatchError(layer.name, (1,), (stride,), what="stride")
    height = (shape[1] + 2 * pad - kh) // stride + 1
    width = (shape[2] + 2 * pad - kw) // stride + 1
    if height < 1 or width < 1:
        raise ShapeMismatchError(layer.name, (kh, kw), shape[1:], what="kernel larger than input")
    return (out_ch, height, width)


def _fc_shape(layer, weights, shape):
    if len(shape) != 1:
        raise ShapeMismatchError(layer.name, ('features',), shape, what="input rank")
    w = _tensor(weights, layer.weight, layer)
    if w.ndim != 2:
        raise ShapeMismatchError(layer.name, (2,), (w.ndim,), what="weight rank")
    if w.shape[1] != shape[0]:
        raise ShapeMismatchError(layer.name, (w.shape[0], shape[0]), w.shape, what="weight shape")
    if layer.units is not None and layer.units != w.shape[0]:
        raise ShapeMismatchError(layer.name, (layer.units,), (w.shape[0],), what="units")
    _check_bias(layer, weights, w.shape[0])
    return (w.shape[0],)


def _pool_shape(layer, shape):
    if len(shape) != 3:
        raise ShapeMismatchError(layer.name, ('C', 'H', 'W'), shape, what="input rank")
    window, stride = layer.pool_window, layer.effective_stride
    height = (shape[1] - window) // stride + 1
    width = (shape[2] - window) // stride + 1
    if height < 1 or width < 1:
        raise ShapeMismatchError(layer.name, (window, window), shape[1:], what="pool window larger than input")
    return (shape[0], height, width)


def infer_shapes(layers, weights, input_shape):
    """Chain shapes through every layer; raises on the first inconsistency."""
    shapes = []
    shape = tuple(input_shape)
    for layer in layers:
        if layer.kind is LayerKind.CONV2D:
            shape = _conv_shape(layer, weights, shape)
        elif layer.kind is LayerKind.FULLY_CONNECTED:
            shape = _fc_shape(layer, weights, shape)
        elif layer.kind in POOL_LAYERS:
            shape = _pool_shape(layer, shape)
        elif layer.kind is LayerKind.FLATTEN:
            shape = (int(np.prod(shape)),)
        elif layer.kind is LayerKind.SOFTMAX and len(shape) != 1:
            raise ShapeMismatchError(layer.name, ('classes',), shape, what="input rank")
        shapes.append(shape)
    if not shapes or len(shapes[-1]) != 1:
        last = layers[-1].name if layers else 'network'
        raise ShapeMismatchError(last, ('classes',), shapes[-1] if shapes else (), what="output rank")
    return shapes


# ============================================================
# 2. LAYERS
# ============================================================

def _serial_order(channels, kh, kw):
    """Canonical accumulation order: input channel, kernel row, kernel column."""
    return product(range(channels), range(kh), range(kw))


def _window(x, i, j, stride, height, width):
    return x[:, :, i:i + stride * (height - 1) + 1:stride, j:j + stride * (width - 1) + 1:stride]


def _pad(x, pad):
    if not pad:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _conv2d(x, layer, weights, fmt):
    w = weights[layer.weight]
    out_ch, in_ch, kh, kw = w.shape
    stride = layer.effective_stride
    x = _pad(x, layer.padding)
    height = (x.shape[2] - kh) // stride + 1
    width = (x.shape[3] - kw) // stride + 1
    acc = np.zeros((x.shape[0], out_ch, height, width))
    for c, i, j in _serial_order(in_ch, kh, kw):
        patch = _window(x[:, c:c + 1], i, j, stride, height, width)
        acc = mac(acc, patch, w[:, c, i, j].reshape(1, out_ch, 1, 1), fmt)
    if layer.bias is not None:
        acc = qadd(acc, weights[layer.bias].reshape(1, out_ch, 1, 1), fmt)
    return acc


def _fully_connected(x, layer, weights, fmt):
    w = weights[layer.weight]
    acc = np.zeros((x.shape[0], w.shape[0]))
    for k in range(w.shape[1]):
        acc = mac(acc, x[:, k:k + 1], w[:, k].reshape(1, -1), fmt)
    if layer.bias is not None:
        acc = qadd(acc, weights[layer.bias].reshape(1, -1), fmt)
    return acc


def _pool_windows(x, layer):
    window, stride = layer.pool_window, layer.effective_stride
    height = (x.shape[2] - window) // stride + 1
    width = (x.shape[3] - window) // stride + 1
    return [_window(x, i, j, stride, height, width) for i in range(window) for j in range(window)]


def _max_pool(x, layer, weights, fmt):
    return reduce(np.maximum, _pool_windows(x, layer))


def _avg_pool(x, layer, weights, fmt):
    windows = _pool_windows(x, layer)
    total = reduce(lambda acc, win: qadd(acc, win, fmt), windows[1:], windows[0])
    return qdiv(total, float(len(windows)), fmt)


def _relu(x, layer, weights, fmt):
    return np.maximum(x, 0.0) + 0.0


def _flatten(x, layer, weights, fmt):
    return x.reshape(x.shape[0], -1)


def _softmax(x, layer, weights, fmt):
    # Baseline precision: only the ranking of scores matters downstream
    z = x.astype(np.float32)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True)).astype(np.float64)


_LAYER_FUNCS = {
    LayerKind.CONV2D: _conv2d,
    LayerKind.FULLY_CONNECTED: _fully_connected,
    LayerKind.RELU: _relu,
    LayerKind.MAX_POOL: _max_pool,
    LayerKind.AVG_POOL: _avg_pool,
    LayerKind.SOFTMAX: _softmax,
    LayerKind.FLATTEN: _flatten,
}


# ============================================================
# 3. FORWARD PASS
# ============================================================

def _prepare_inputs(net, inputs, fmt):
    x = np.asarray(inputs)
    if x.shape[1:] != net.input_shape:
        raise ShapeMismatchError('input', net.input_shape, x.shape[1:])
    if net.input_mean is not None:
        mean = np.asarray(net.input_mean, dtype=np.float32).reshape(1, -1, 1, 1)
        x = x.astype(np.float32) - mean
    return quantize(x.astype(np.float64), fmt)


def quantized_weights(net, fmt):
    """Weights pre-quantized into fmt once per pass (storage in custom precision)."""
    return {name: quantize(arr.astype(np.float64), fmt) for name, arr in net.weights.items()}


def _propagate(net, inputs, fmt, stop=None):
    """Layer inputs for every layer up to `stop`, plus the output of the last one run."""
    x = _prepare_inputs(net, inputs, fmt)
    weights = quantized_weights(net, fmt)
    layer_inputs = []
    for layer in net.layers[:stop]:
        layer_inputs.append(x)
        x = _LAYER_FUNCS[layer.kind](x, layer, weights, fmt)
    return layer_inputs, x, weights


def forward_batch(net, inputs, fmt):
    """Per-layer activations for a stacked batch [N, *input_shape]."""
    layer_inputs, final, _ = _propagate(net, inputs, fmt)
    return layer_inputs[1:] + [final]


def forward(net, input, fmt):
    """Per-layer activations for a single input."""
    return [act[0] for act in forward_batch(net, np.asarray(input)[None], fmt)]


def final_scores(net, inputs, fmt, pre_softmax=False):
    """Final (or last pre-softmax) layer output for a batch, evaluated in chunks."""
    stop = net.score_layer_index + 1 if pre_softmax else None
    chunks = []
    for start in range(0, len(inputs), BATCH_SIZE):
        _, out, _ = _propagate(net, inputs[start:start + BATCH_SIZE], fmt, stop=stop)
        chunks.append(out)
    if not chunks:
        return np.zeros((0,) + net.output_shapes[-1])
    return np.concatenate(chunks)


# ============================================================
# 4. ACCURACY
# ============================================================

def top_k_accuracy(scores, labels, k=1):
    """Fraction of inputs whose label is among the k highest scores (ties: lower class first)."""
    if len(scores) != len(labels):
        raise DomainError(f"top_k_accuracy: {len(scores)} score vectors for {len(labels)} labels")
    if len(labels) == 0:
        raise DomainError("top_k_accuracy: no inputs")
    scores = np.asarray(scores, dtype=np.float64).reshape(len(labels), -1)
    if not 1 <= k <= scores.shape[1]:
        raise DomainError(f"top_k_accuracy: k={k} outside [1, {scores.shape[1]}]")
    ranked = np.argsort(-scores, axis=1, kind='stable')[:, :k]
    hits = (ranked == np.asarray(labels).reshape(-1, 1)).any(axis=1)
    return float(hits.mean())


def normalized_accuracy(custom, baseline):
    if baseline <= 0:
        raise DomainError("normalized_accuracy: baseline accuracy must be positive")
    return custom / baseline


def evaluate_accuracy(net, images, labels, fmt, k=1):
    scores = final_scores(net, images, fmt)
    accuracy = top_k_accuracy(scores, labels, k)
    logger.debug("accuracy %s top-%d = %.4f over %d inputs", fmt, k, accuracy, len(labels))
    return accuracy


# ============================================================
# 5. ACCUMULATION TRACE
# ============================================================

@dataclass(frozen=True)
class TraceRecord:
    step: int
    running_sum: float
    exact_running_sum: float


def _neuron_terms(layer, layer_input, weights, neuron_index, shape):
    """(inputs, weights, bias) of one neuron in canonical accumulation order."""
    w = weights[layer.weight]
    bias = weights[layer.bias] if layer.bias is not None else None
    if layer.kind is LayerKind.FULLY_CONNECTED:
        xs = layer_input[0]
        return xs, w[neuron_index], None if bias is None else bias[neuron_index]
    out_ch, row, col = np.unravel_index(neuron_index, shape)
    stride = layer.effective_stride
    x = _pad(layer_input, layer.padding)[0]
    _, in_ch, kh, kw = w.shape
    xs, ws = [], []
    for c, i, j in _serial_order(in_ch, kh, kw):
        xs.append(x[c, row * stride + i, col * stride + j])
        ws.append(w[out_ch, c, i, j])
    return np.array(xs), np.array(ws), None if bias is None else bias[out_ch]


def _running_sums(xs, ws, bias, fmt):
    sums = [0.0]
    acc = 0.0
    for x, w in zip(xs, ws):
        acc = mac(acc, float(x), float(w), fmt)
        sums.append(acc)
    if bias is not None:
        acc = qadd(acc, float(bias), fmt)
        sums.append(acc)
    return sums


def accumulation_trace(net, input, layer_index, neuron_index, fmt):
    """
    Running sum of one neuron after each MAC, next to the same sum in baseline
    arithmetic. Step 0 is the empty sum; a bias adds one final step.
    """
    if not 0 <= layer_index < len(net.layers):
        raise DomainError(f"accumulation_trace: layer index {layer_index} outside [0, {len(net.layers)})")
    layer = net.layers[layer_index]
    if layer.kind not in MAC_LAYERS:
        raise DomainError(f"accumulation_trace: layer '{layer.name}' is {layer.kind.value}, not conv2d/fully_connected")
    shape = net.output_shapes[layer_index]
    if not 0 <= neuron_index < int(np.prod(shape)):
        raise DomainError(f"accumulation_trace: neuron {neuron_index} outside layer '{layer.name}' of shape {shape}")

    batch = np.asarray(input)[None]
    series = []
    for run_fmt in (fmt, BASELINE):
        layer_inputs, _, weights = _propagate(net, batch, run_fmt, stop=layer_index + 1)
        xs, ws, bias = _neuron_terms(layer, layer_inputs[layer_index], weights, neuron_index, shape)
        series.append(_running_sums(xs, ws, bias, run_fmt))
    custom, exact = series
    return [TraceRecord(step, running, baseline) for step, (running, baseline) in enumerate(zip(custom, exact))]
