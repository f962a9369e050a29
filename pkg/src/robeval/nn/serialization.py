"""Binary weight files.

Layout (all integers little-endian)::

    b"AAFWv1"
    u32                   number of layers
    per layer:
        u8                type tag (1 dense, 2 conv, 3 relu, 4 max-pool, 5 flatten, 6 reshape)
        u32               number of dims, then u32 per dim
        f64 * n           parameter blob (weights then bias; empty for
                          parameter-free layers), n implied by tag and dims

The input dimension is implied by the first layer, which must therefore be
dense or reshape.
"""
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, InputError
from .classifier import Sequential
from .layers import LAYER_TYPES, Dense, Reshape, blob_size, layer_from_record

MAGIC = b"AAFWv1"

_DIM_COUNTS = {1: (2,), 2: (4,), 3: (0,), 4: (1,), 5: (0,)}


def to_bytes(model):
    if not isinstance(model, Sequential):
        raise InputError("only Sequential models can be serialized")
    first = model.layers[0]
    if not isinstance(first, (Dense, Reshape)):
        raise InputError("first layer must be dense or reshape to fix the input size")
    parts = [MAGIC, struct.pack("<I", len(model.layers))]
    for layer in model.layers:
        dims = tuple(int(d) for d in layer.dims())
        parts.append(struct.pack("<BI", layer.tag, len(dims)))
        parts.append(struct.pack(f"<{len(dims)}I", *dims))
        parts.append(np.ascontiguousarray(layer.blob(), dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(buf, path=None):
    buf = memoryview(bytes(buf))
    if bytes(buf[:6]) != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:6])!r}, expected {MAGIC!r}", 0, path)
    pos = 6

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(buf) - pos} left", pos, path)
        out = buf[pos : pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4, "layer count"))
    if count == 0:
        raise FormatError("model has no layers", 6, path)
    layers = []
    for _ in range(count):
        start = pos
        tag, ndims = struct.unpack("<BI", take(5, "layer header"))
        if tag not in LAYER_TYPES:
            raise FormatError(f"unknown layer tag {tag}", start, path)
        if ndims > 16:
            raise FormatError(f"implausible dim count {ndims}", start + 1, path)
        dims = struct.unpack(f"<{ndims}I", take(4 * ndims, "layer dims"))
        expected = _DIM_COUNTS.get(tag)
        if expected is not None and ndims not in expected:
            raise FormatError(f"layer tag {tag} takes {expected[0]} dims, got {ndims}", start, path)
        if tag == 6 and ndims == 0:
            raise FormatError("reshape layer needs dims", start, path)
        n = blob_size(tag, dims)
        blob = np.frombuffer(take(8 * n, "weight blob"), dtype="<f8").astype(np.float64)
        try:
            layers.append(layer_from_record(tag, dims, blob))
        except InputError as exc:
            raise FormatError(str(exc), start, path) from None
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last layer", pos, path)
    first = layers[0]
    if isinstance(first, Dense):
        input_dim = first.weight.shape[1]
    elif isinstance(first, Reshape):
        input_dim = int(np.prod(first.shape))
    else:
        raise FormatError("first layer must be dense or reshape", 10, path)
    try:
        return Sequential(layers, input_dim)
    except InputError as exc:
        raise FormatError(f"inconsistent layer shapes: {exc}", None, path) from None


def save_weights(model, path):
    Path(path).write_bytes(to_bytes(model))


def load_weights(path):
    path = Path(path)
    return from_bytes(path.read_bytes(), path=path)


def clone(model):
    return from_bytes(to_bytes(model))

