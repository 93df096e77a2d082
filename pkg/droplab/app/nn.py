"""
Neural-network engine with exact manual backpropagation.

Tensors are float64 numpy arrays, batch axis first. Images are NCHW.
The layer vocabulary is fixed: Conv2d, Dense, ReLU, MaxPool2d, Flatten, Dropout.
"""
import copy
import logging
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DropLabError, InvariantError, ShapeError
from .utils import parallel_map

logger = logging.getLogger(__name__)

DTYPE = np.float64

Shape = Tuple[int, ...]
ParamKey = Tuple[int, str]
Gradients = Dict[ParamKey, np.ndarray]


class ExecutionMode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"
    MC_SAMPLE = "mc_sample"


def glorot_uniform(rng: np.random.Generator, shape: Shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}

    def output_shape(self, in_shape: Shape, index: int) -> Shape:
        return tuple(in_shape)

    def init_params(self, in_shape: Shape, rng: np.random.Generator):
        pass

    def forward(self, x: np.ndarray, mode: ExecutionMode, rng: Optional[np.random.Generator],
                mask: Optional[np.ndarray] = None):
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, out_channels: int, kernel: int, stride: int = 1, padding: int = 0):
        super().__init__()
        if out_channels < 1 or kernel < 1 or stride < 1 or padding < 0:
            raise ConfigError(f"invalid Conv2d({out_channels}, {kernel}, stride={stride}, padding={padding})")
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding

    @property
    def in_channels(self) -> Optional[int]:
        w = self.params.get("weight")
        return None if w is None else w.shape[1]

    def output_shape(self, in_shape: Shape, index: int) -> Shape:
        if len(in_shape) != 3:
            raise ShapeError(index, f"Conv2d expects (C, H, W) input, got {tuple(in_shape)}")
        c, h, w = in_shape
        if self.in_channels is not None and c != self.in_channels:
            raise ShapeError(index, f"Conv2d expects {self.in_channels} input channels, got {c}")
        ho = (h + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(index, f"{self.kernel}x{self.kernel} kernel does not fit a {h}x{w} map")
        return (self.out_channels, ho, wo)

    def init_params(self, in_shape: Shape, rng: np.random.Generator):
        c = in_shape[0]
        k = self.kernel
        self.params["weight"] = glorot_uniform(rng, (self.out_channels, c, k, k), c * k * k, self.out_channels * k * k)
        self.params["bias"] = np.zeros(self.out_channels, dtype=DTYPE)

    def _columns(self, xp: np.ndarray, ho: int, wo: int) -> np.ndarray:
        k, s = self.kernel, self.stride
        n, c = xp.shape[:2]
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        # (N, C, ho, wo, k, k) -> (N*ho*wo, C*k*k)
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)

    def forward(self, x, mode, rng, mask=None):
        n = x.shape[0]
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        _, ho, wo = self.output_shape(x.shape[1:], -1)
        w = self.params["weight"]
        cols = self._columns(xp, ho, wo)
        y = cols @ w.reshape(self.out_channels, -1).T + self.params["bias"]
        y = np.ascontiguousarray(y.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2))
        return y, (x.shape, xp, ho, wo)

    def backward(self, dy, cache):
        in_shape, xp, ho, wo = cache
        n, c, h, w_in = in_shape
        k, s, p = self.kernel, self.stride, self.padding
        w = self.params["weight"]
        dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        cols = self._columns(xp, ho, wo)
        grads = {
            "weight": (dy2.T @ cols).reshape(w.shape),
            "bias": dy2.sum(axis=0),
        }
        dcols = (dy2 @ w.reshape(self.out_channels, -1)).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros(xp.shape, dtype=DTYPE)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + h, p:p + w_in], grads

    def describe(self) -> str:
        return f"Conv2d({self.out_channels}, {self.kernel}x{self.kernel}, stride={self.stride}, padding={self.padding})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, out_features: int):
        super().__init__()
        if out_features < 1:
            raise ConfigError(f"invalid Dense({out_features})")
        self.out_features = out_features

    @property
    def in_features(self) -> Optional[int]:
        w = self.params.get("weight")
        return None if w is None else w.shape[0]

    def output_shape(self, in_shape: Shape, index: int) -> Shape:
        if len(in_shape) != 1:
            raise ShapeError(index, f"Dense expects flat input, got {tuple(in_shape)}; add a Flatten layer")
        if self.in_features is not None and in_shape[0] != self.in_features:
            raise ShapeError(index, f"Dense expects {self.in_features} features, got {in_shape[0]}")
        return (self.out_features,)

    def init_params(self, in_shape: Shape, rng: np.random.Generator):
        fan_in = in_shape[0]
        self.params["weight"] = glorot_uniform(rng, (fan_in, self.out_features), fan_in, self.out_features)
        self.params["bias"] = np.zeros(self.out_features, dtype=DTYPE)

    def forward(self, x, mode, rng, mask=None):
        return x @ self.params["weight"] + self.params["bias"], x

    def backward(self, dy, cache):
        x = cache
        grads = {"weight": x.T @ dy, "bias": dy.sum(axis=0)}
        return dy @ self.params["weight"].T, grads

    def describe(self) -> str:
        return f"Dense({self.out_features})"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, mode, rng, mask=None):
        keep = x > 0
        return np.where(keep, x, 0.0), keep

    def backward(self, dy, cache):
        return dy * cache, {}


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, window: int = 2):
        super().__init__()
        if window < 1:
            raise ConfigError(f"invalid MaxPool2d({window})")
        self.window = window

    def output_shape(self, in_shape: Shape, index: int) -> Shape:
        if len(in_shape) != 3:
            raise ShapeError(index, f"MaxPool2d expects (C, H, W) input, got {tuple(in_shape)}")
        c, h, w = in_shape
        if h < self.window or w < self.window:
            raise ShapeError(index, f"{self.window}x{self.window} pooling does not fit a {h}x{w} map")
        return (c, h // self.window, w // self.window)

    def forward(self, x, mode, rng, mask=None):
        n, c, h, w = x.shape
        k = self.window
        ho, wo = h // k, w // k
        blocks = (x[:, :, :ho * k, :wo * k]
                  .reshape(n, c, ho, k, wo, k)
                  .transpose(0, 1, 2, 4, 3, 5)
                  .reshape(n, c, ho, wo, k * k))
        # argmax picks the first maximum, so ties route the gradient deterministically
        arg = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return y, (x.shape, arg)

    def backward(self, dy, cache):
        in_shape, arg = cache
        n, c, h, w = in_shape
        k = self.window
        ho, wo = h // k, w // k
        dblocks = np.zeros((n, c, ho, wo, k * k), dtype=DTYPE)
        np.put_along_axis(dblocks, arg[..., None], dy[..., None], axis=-1)
        dx = np.zeros(in_shape, dtype=DTYPE)
        dx[:, :, :ho * k, :wo * k] = (dblocks
                                      .reshape(n, c, ho, wo, k, k)
                                      .transpose(0, 1, 2, 4, 3, 5)
                                      .reshape(n, c, ho * k, wo * k))
        return dx, {}

    def describe(self) -> str:
        return f"MaxPool2d({self.window})"


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape: Shape, index: int) -> Shape:
        return (int(np.prod(in_shape)),)

    def forward(self, x, mode, rng, mask=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), {}


def check_drop_rate(p: float) -> float:
    if not (0.0 <= p < 1.0):
        raise ConfigError(f"dropout rate must lie in [0, 1), got {p}")
    return float(p)


def dropout_forward(x: np.ndarray, p: float, mode: ExecutionMode, rng: Optional[np.random.Generator],
                    mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Inverted dropout with drop probability p.

    Eval mode is the identity with an all-ones mask. Train and MCSample drop each
    element independently with probability p and scale survivors by 1/(1-p).
    A mask passed in is reused as is, which keeps finite-difference checks on a
    fixed dropout pattern.
    """
    check_drop_rate(p)
    if ExecutionMode(mode) == ExecutionMode.EVAL:
        return x, np.ones_like(x)
    if mask is None:
        if rng is None:
            raise DropLabError("dropout outside eval mode needs a random stream")
        mask = (rng.random(x.shape) >= p) / (1.0 - p)
    elif mask.shape != x.shape:
        raise DropLabError(f"dropout mask shape {mask.shape} does not match input {x.shape}")
    return x * mask, mask


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float):
        super().__init__()
        self.rate = check_drop_rate(rate)

    def forward(self, x, mode, rng, mask=None):
        return dropout_forward(x, self.rate, mode, rng, mask)

    def backward(self, dy, cache):
        return dy * cache, {}

    def describe(self) -> str:
        return f"Dropout({self.rate})"


@dataclass
class Network:
    layers: List[Layer]
    input_shape: Shape
    mode: ExecutionMode = ExecutionMode.EVAL
    token: str = field(default_factory=lambda: uuid.uuid4().hex, compare=False)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.mode = ExecutionMode(self.mode)

    def initialize(self, rng: np.random.Generator) -> "Network":
        shape = self.input_shape
        for idx, layer in enumerate(self.layers):
            layer.params.clear()
            shape_in = shape
            shape = layer.output_shape(shape_in, idx)
            layer.init_params(shape_in, rng)
        return self

    def shapes(self) -> List[Shape]:
        """Declared output shape of every layer; raises ShapeError on the first misfit."""
        out = []
        shape = self.input_shape
        for idx, layer in enumerate(self.layers):
            shape = layer.output_shape(shape, idx)
            out.append(shape)
        return out

    def parameters(self) -> Iterator[Tuple[ParamKey, np.ndarray]]:
        for idx, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                yield (idx, name), layer.params[name]

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def dropout_layers(self) -> List[int]:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, Dropout)]

    def has_dropout(self) -> bool:
        return bool(self.dropout_layers())

    def copy(self) -> "Network":
        clone = copy.deepcopy(self)
        clone.token = uuid.uuid4().hex
        return clone


@dataclass
class ForwardCache:
    token: str
    kinds: Tuple[str, ...]
    mode: ExecutionMode
    outputs: List[np.ndarray]
    layer_caches: list

    @property
    def masks(self) -> Dict[int, np.ndarray]:
        return {i: c for i, (k, c) in enumerate(zip(self.kinds, self.layer_caches)) if k == Dropout.kind}


def forward(net: Network, x: np.ndarray, rng: Optional[np.random.Generator] = None, *,
            mode: Optional[ExecutionMode] = None,
            masks: Optional[Dict[int, np.ndarray]] = None) -> Tuple[np.ndarray, ForwardCache]:
    """
    Run x through every layer of net.

    mode overrides net.mode for this call only, so a shared network can be
    evaluated without being mutated. The cache keeps every layer's output
    (for dissection) and what backward needs.
    """
    mode = ExecutionMode(mode or net.mode)
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim < 1 or tuple(x.shape[1:]) != net.input_shape:
        raise ShapeError(0, f"expected input of shape (batch, {', '.join(map(str, net.input_shape))}), got {x.shape}")
    masks = masks or {}
    if mode != ExecutionMode.EVAL and rng is None and any(i not in masks for i in net.dropout_layers()):
        raise DropLabError(f"forward in {mode.value} mode with dropout layers needs a random stream")

    outputs: List[np.ndarray] = []
    layer_caches = []
    for idx, layer in enumerate(net.layers):
        expected = layer.output_shape(x.shape[1:], idx)
        x, cache = layer.forward(x, mode, rng, masks.get(idx))
        if tuple(x.shape[1:]) != tuple(expected):
            raise InvariantError(f"layer {idx} ({layer.describe()}) produced {x.shape[1:]}, declared {expected}")
        outputs.append(x)
        layer_caches.append(cache)
    cache = ForwardCache(
        token=net.token,
        kinds=tuple(layer.kind for layer in net.layers),
        mode=mode,
        outputs=outputs,
        layer_caches=layer_caches,
    )
    return x, cache


def backward(net: Network, cache: ForwardCache, loss_grad: np.ndarray) -> Gradients:
    """Gradients of the loss w.r.t. every parameter, keyed by (layer index, name)."""
    if cache.token != net.token or cache.kinds != tuple(layer.kind for layer in net.layers):
        raise DropLabError("forward cache was produced by a different network")
    dy = np.asarray(loss_grad, dtype=DTYPE)
    if cache.outputs and dy.shape != cache.outputs[-1].shape:
        raise ShapeError(len(net.layers) - 1, f"loss gradient shape {dy.shape} != output shape {cache.outputs[-1].shape}")
    grads: Gradients = {}
    for idx in reversed(range(len(net.layers))):
        dy, layer_grads = net.layers[idx].backward(dy, cache.layer_caches[idx])
        for name, g in layer_grads.items():
            grads[(idx, name)] = g
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> Tuple[float, np.ndarray]:
    """
    Mean cross-entropy over the batch and its gradient w.r.t. logits.

    Accepts a single length-c vector with one label, or (N, c) logits with N labels.
    The gradient is softmax - one_hot, divided by N.
    """
    logits = np.asarray(logits, dtype=DTYPE)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels)).astype(np.int64)
    n, c = z.shape
    if labels.shape != (n,):
        raise ShapeError(-1, f"{labels.shape[0]} labels for {n} logit rows")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise ConfigError(f"label out of range [0, {c})", key="label")
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean()) if n else 0.0
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= max(n, 1)
    if single:
        return loss, grad[0]
    return loss, grad


def predict_logits(net: Network, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits for a whole image array, batched; batches may run on worker threads."""
    n = images.shape[0]
    starts = list(range(0, n, batch_size))

    def run(start: int) -> np.ndarray:
        out, _ = forward(net, images[start:start + batch_size], mode=ExecutionMode.EVAL)
        return out

    if not starts:
        return np.zeros((0,) + net.shapes()[-1], dtype=DTYPE) if net.layers else np.zeros((0,) + net.input_shape)
    return np.concatenate(parallel_map(run, starts), axis=0)
