"""
DLAB weight checkpoint container.

Little-endian throughout:

    b"DLAB"                      magic
    u32 version                  currently 1
    u32 layer_count
    u32 ndim, u32 * ndim         per-sample input shape
    per layer:
        u8 kind tag              0 conv2d, 1 dense, 2 relu, 3 maxpool2d, 4 flatten, 5 dropout
        hyper-parameters         conv2d: u32 out_channels, kernel, stride, padding
                                 dense: u32 out_features; maxpool2d: u32 window
                                 dropout: f64 rate; relu/flatten: none
        u32 param_count
        per parameter (sorted by name):
            u8 name_len, name bytes (ascii)
            u32 ndim, u32 * ndim shape
            f64 * prod(shape)    row-major data

See docs/FILE_FORMATS.md.
"""
import logging
import struct
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from .errors import ConfigError, DataError, DropLabError
from .nn import DTYPE, Conv2d, Dense, Dropout, Flatten, Layer, MaxPool2d, Network, ReLU

logger = logging.getLogger(__name__)

MAGIC = b"DLAB"
FORMAT_VERSION = 1

KIND_TAGS = {
    Conv2d.kind: 0,
    Dense.kind: 1,
    ReLU.kind: 2,
    MaxPool2d.kind: 3,
    Flatten.kind: 4,
    Dropout.kind: 5,
}
TAG_KINDS = {tag: kind for kind, tag in KIND_TAGS.items()}


def checkpoint_bytes(net: Network) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<I", len(net.layers))
    out += struct.pack("<I", len(net.input_shape))
    out += struct.pack(f"<{len(net.input_shape)}I", *net.input_shape)
    for layer in net.layers:
        out += struct.pack("<B", KIND_TAGS[layer.kind])
        if isinstance(layer, Conv2d):
            out += struct.pack("<4I", layer.out_channels, layer.kernel, layer.stride, layer.padding)
        elif isinstance(layer, Dense):
            out += struct.pack("<I", layer.out_features)
        elif isinstance(layer, MaxPool2d):
            out += struct.pack("<I", layer.window)
        elif isinstance(layer, Dropout):
            out += struct.pack("<d", layer.rate)
        names = sorted(layer.params)
        out += struct.pack("<I", len(names))
        for name in names:
            arr = np.ascontiguousarray(layer.params[name], dtype="<f8")
            encoded = name.encode("ascii")
            out += struct.pack("<B", len(encoded)) + encoded
            out += struct.pack("<I", arr.ndim)
            out += struct.pack(f"<{arr.ndim}I", *arr.shape)
            out += arr.tobytes(order="C")
    return bytes(out)


def save_checkpoint(net: Network, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(net))
    logger.debug(f"Wrote checkpoint {path} ({net.num_parameters()} parameters)")
    return path


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, fmt: str) -> Tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise DataError(f"{self.source}: truncated checkpoint at byte {self.offset}")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def take_bytes(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise DataError(f"{self.source}: truncated checkpoint at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk


def network_from_bytes(data: bytes, source: str = "<bytes>") -> Network:
    r = _Reader(data, source)
    magic = r.take_bytes(4)
    if magic != MAGIC:
        raise DataError(f"{source}: bad magic, expected {MAGIC!r}, found {magic!r}")
    (version,) = r.take("<I")
    if version != FORMAT_VERSION:
        raise DataError(f"{source}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    (layer_count,) = r.take("<I")
    (ndim,) = r.take("<I")
    input_shape = r.take(f"<{ndim}I")

    layers: List[Layer] = []
    for idx in range(layer_count):
        (tag,) = r.take("<B")
        kind = TAG_KINDS.get(tag)
        if kind is None:
            raise DataError(f"{source}: layer {idx} has unknown kind tag {tag}")
        try:
            layer = _layer_from_hyperparameters(kind, r)
        except ConfigError as e:
            raise DataError(f"{source}: layer {idx}: {e}") from e
        (count,) = r.take("<I")
        for _ in range(count):
            (name_len,) = r.take("<B")
            name = r.take_bytes(name_len).decode("ascii")
            (pdim,) = r.take("<I")
            shape = r.take(f"<{pdim}I")
            n_values = int(np.prod(shape)) if pdim else 1
            raw = r.take_bytes(8 * n_values)
            layer.params[name] = np.frombuffer(raw, dtype="<f8").astype(DTYPE).reshape(shape)
        layers.append(layer)
    if r.offset != len(data):
        raise DataError(f"{source}: {len(data) - r.offset} trailing bytes after the last layer")

    try:
        net = Network(layers=layers, input_shape=tuple(input_shape))
        _check_parameter_shapes(net)
    except DropLabError as e:
        raise DataError(f"{source}: inconsistent checkpoint: {e}") from e
    return net


def _layer_from_hyperparameters(kind: str, r: _Reader) -> Layer:
    if kind == Conv2d.kind:
        return Conv2d(*r.take("<4I"))
    if kind == Dense.kind:
        return Dense(*r.take("<I"))
    if kind == MaxPool2d.kind:
        return MaxPool2d(*r.take("<I"))
    if kind == Dropout.kind:
        return Dropout(*r.take("<d"))
    if kind == ReLU.kind:
        return ReLU()
    return Flatten()


def _check_parameter_shapes(net: Network):
    shape = net.input_shape
    for idx, layer in enumerate(net.layers):
        out = layer.output_shape(shape, idx)
        if isinstance(layer, Conv2d):
            expected = {"weight": (layer.out_channels, shape[0], layer.kernel, layer.kernel), "bias": (layer.out_channels,)}
        elif isinstance(layer, Dense):
            expected = {"weight": (shape[0], layer.out_features), "bias": (layer.out_features,)}
        else:
            expected = {}
        found = {name: tuple(p.shape) for name, p in layer.params.items()}
        if found != expected:
            raise DataError(f"layer {idx} ({layer.describe()}) parameters {found} != expected {expected}")
        shape = out


def load_checkpoint(path: Union[str, Path]) -> Network:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    return network_from_bytes(path.read_bytes(), source=str(path))
