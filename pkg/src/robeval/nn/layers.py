"""Layers with hand-written reverse mode.

Each layer maps a batch ``(B, *in_shape)`` to ``(B, *out_shape)``. ``forward``
returns the output together with whatever the backward pass needs, and
``backward`` returns the gradient wrt the input plus parameter gradients.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InputError


class Layer:
    tag = None
    params = ()

    def output_shape(self, in_shape):
        raise NotImplementedError

    def forward(self, a):
        raise NotImplementedError

    def backward(self, g, cache, need_params=False):
        raise NotImplementedError

    # serialization hooks: integer dims describing the layer and its flat blob
    def dims(self):
        return ()

    def blob(self):
        return np.zeros(0)

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and tuple(self.dims()) == tuple(other.dims())
            and np.array_equal(self.blob(), other.blob())
        )

    def __repr__(self):
        return f"{type(self).__name__}{tuple(self.dims())}"


class Dense(Layer):
    tag = 1

    def __init__(self, weight, bias):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise InputError("dense layer needs weight (out, in) and bias (out,)")

    @property
    def params(self):
        return (self.weight, self.bias)

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.weight.shape[1],):
            raise InputError(f"dense layer expects input {(self.weight.shape[1],)}, got {tuple(in_shape)}")
        return (self.weight.shape[0],)

    def forward(self, a):
        return a @ self.weight.T + self.bias, a

    def backward(self, g, cache, need_params=False):
        gin = g @ self.weight
        if not need_params:
            return gin, None
        return gin, (g.T @ cache, g.sum(axis=0))

    def dims(self):
        return self.weight.shape

    def blob(self):
        return np.concatenate([self.weight.ravel(), self.bias])

    @classmethod
    def from_blob(cls, dims, blob):
        out, inp = dims
        return cls(blob[: out * inp].reshape(out, inp), blob[out * inp :])

    @staticmethod
    def blob_size(dims):
        out, inp = dims
        return out * inp + out


class Conv2D(Layer):
    """Valid (no padding), stride-1 2-D convolution on ``(C, H, W)`` inputs."""

    tag = 2

    def __init__(self, weight, bias):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weight.ndim != 4 or self.bias.shape != (self.weight.shape[0],):
            raise InputError("conv layer needs weight (out, in, kh, kw) and bias (out,)")

    @property
    def params(self):
        return (self.weight, self.bias)

    def output_shape(self, in_shape):
        o, c, kh, kw = self.weight.shape
        if len(in_shape) != 3 or in_shape[0] != c or in_shape[1] < kh or in_shape[2] < kw:
            raise InputError(f"conv layer {self.weight.shape} cannot take input {tuple(in_shape)}")
        return (o, in_shape[1] - kh + 1, in_shape[2] - kw + 1)

    def forward(self, a):
        o, c, kh, kw = self.weight.shape
        cols = sliding_window_view(a, (kh, kw), axis=(2, 3))  # B, C, Ho, Wo, kh, kw
        b, _, ho, wo = cols.shape[:4]
        cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
        out = cols @ self.weight.reshape(o, -1).T + self.bias
        return out.reshape(b, ho, wo, o).transpose(0, 3, 1, 2), (a.shape, cols)

    def backward(self, g, cache, need_params=False):
        in_shape, cols = cache
        o, c, kh, kw = self.weight.shape
        b, _, ho, wo = g.shape
        gmat = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, o)
        dcols = (gmat @ self.weight.reshape(o, -1)).reshape(b, ho, wo, c, kh, kw)
        gin = np.zeros(in_shape)
        for i in range(kh):
            for j in range(kw):
                gin[:, :, i : i + ho, j : j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if not need_params:
            return gin, None
        dw = (gmat.T @ cols).reshape(self.weight.shape)
        return gin, (dw, gmat.sum(axis=0))

    def dims(self):
        return self.weight.shape

    def blob(self):
        return np.concatenate([self.weight.ravel(), self.bias])

    @classmethod
    def from_blob(cls, dims, blob):
        n = int(np.prod(dims))
        return cls(blob[:n].reshape(dims), blob[n:])

    @staticmethod
    def blob_size(dims):
        return int(np.prod(dims)) + dims[0]


class ReLU(Layer):
    """Rectifier; the subgradient at 0 is taken to be 0."""

    tag = 3

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, a):
        return np.maximum(a, 0.0), a > 0

    def backward(self, g, cache, need_params=False):
        return g * cache, None


class MaxPool2D(Layer):
    """Non-overlapping ``size x size`` max pooling (trailing rows/cols dropped).

    Gradient goes to the first maximal entry of each window.
    """

    tag = 4

    def __init__(self, size=2):
        self.size = int(size)
        if self.size < 1:
            raise InputError("pool size must be positive")

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[1] < self.size or in_shape[2] < self.size:
            raise InputError(f"cannot max-pool input {tuple(in_shape)}")
        return (in_shape[0], in_shape[1] // self.size, in_shape[2] // self.size)

    def _windows(self, a):
        s = self.size
        b, c, h, w = a.shape
        ho, wo = h // s, w // s
        win = a[:, :, : ho * s, : wo * s].reshape(b, c, ho, s, wo, s)
        return win.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, s * s)

    def forward(self, a):
        win = self._windows(a)
        idx = np.argmax(win, axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return out, (a.shape, idx)

    def backward(self, g, cache, need_params=False):
        in_shape, idx = cache
        s = self.size
        b, c, ho, wo = g.shape
        win = np.zeros((b, c, ho, wo, s * s))
        np.put_along_axis(win, idx[..., None], g[..., None], axis=-1)
        win = win.reshape(b, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * s, wo * s)
        gin = np.zeros(in_shape)
        gin[:, :, : ho * s, : wo * s] = win
        return gin, None

    def dims(self):
        return (self.size,)


class Flatten(Layer):
    tag = 5

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, a):
        return a.reshape(len(a), -1), a.shape

    def backward(self, g, cache, need_params=False):
        return g.reshape(cache), None


class Reshape(Layer):
    """Reshape flat inputs into ``(C, H, W)`` images."""

    tag = 6

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in shape)
        if not self.shape or min(self.shape) < 1:
            raise InputError("reshape target must have positive dims")

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise InputError(f"cannot reshape {tuple(in_shape)} into {self.shape}")
        return self.shape

    def forward(self, a):
        return a.reshape((len(a),) + self.shape), a.shape

    def backward(self, g, cache, need_params=False):
        return g.reshape(cache), None

    def dims(self):
        return self.shape


LAYER_TYPES = {cls.tag: cls for cls in (Dense, Conv2D, ReLU, MaxPool2D, Flatten, Reshape)}


def layer_from_record(tag, dims, blob):
    """Rebuild a layer from its serialized ``(tag, dims, blob)`` triple."""
    cls = LAYER_TYPES[tag]
    if cls in (Dense, Conv2D):
        return cls.from_blob(dims, blob)
    if cls is MaxPool2D:
        return MaxPool2D(*dims)
    if cls is Reshape:
        return Reshape(dims)
    return cls()


def blob_size(tag, dims):
    cls = LAYER_TYPES[tag]
    if cls in (Dense, Conv2D):
        return cls.blob_size(dims)
    return 0
