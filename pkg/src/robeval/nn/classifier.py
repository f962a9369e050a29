"""Differentiable classifiers: the interface the attacks consume and concrete models."""
import numpy as np

from ..errors import InputError
from .layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU, Reshape


class Classifier:
    """A K-class classifier on flat inputs in R^d.

    Subclasses implement :meth:`linearize`, which returns the logits of a
    batch together with a closure computing vector-Jacobian products at that
    batch. Stochastic models draw their randomness from ``rng`` (a
    ``numpy.random.Generator`` or a sequence with one generator per row);
    a single ``linearize`` call uses one draw for both logits and VJP.
    Decisions are ``argmax`` with ties going to the lowest class index.
    """

    num_classes: int
    input_dim: int
    stochastic = False

    def linearize(self, x, rng=None):
        raise NotImplementedError

    def forward(self, x, rng=None):
        return self.linearize(x, rng)[0]

    def input_vjp(self, x, u, rng=None):
        x = self.check_inputs(x)
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (len(x), self.num_classes):
            raise InputError(f"upstream gradient must have shape {(len(x), self.num_classes)}, got {u.shape}")
        return self.linearize(x, rng)[1](u)

    def predict(self, x, rng=None):
        return np.argmax(self.forward(x, rng), axis=-1)

    def check_inputs(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim or len(x) < 1:
            raise InputError(f"inputs must have shape (B >= 1, {self.input_dim}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InputError("inputs contain NaN or Inf")
        return x

    def _rng_for(self, rng, n):
        if rng is None:
            raise InputError("stochastic model needs an rng")
        if isinstance(rng, np.random.Generator):
            return rng
        rng = list(rng)
        if len(rng) != n:
            raise InputError("need one generator per input row")
        return rng


class Sequential(Classifier):
    """Feed-forward stack of layers taking flat inputs of size ``input_dim``.

    The layer list doubles as the architecture descriptor written by
    :func:`robeval.nn.save_weights`. Instances are treated as immutable.
    """

    def __init__(self, layers, input_dim):
        self.layers = list(layers)
        self.input_dim = int(input_dim)
        shape = (self.input_dim,)
        self.shapes = [shape]
        for layer in self.layers:
            shape = tuple(layer.output_shape(shape))
            self.shapes.append(shape)
        if len(shape) != 1 or shape[0] < 2:
            raise InputError(f"network must end in K >= 2 logits, ends in {shape}")
        self.num_classes = shape[0]

    def _run(self, x):
        caches = []
        a = x
        for layer in self.layers:
            a, cache = layer.forward(a)
            caches.append(cache)
        return a, caches

    def forward(self, x, rng=None):
        a = self.check_inputs(x)
        for layer in self.layers:
            a = layer.forward(a)[0]
        return a

    def linearize(self, x, rng=None):
        x = self.check_inputs(x)
        logits, caches = self._run(x)

        def vjp(u):
            g = np.asarray(u, dtype=np.float64)
            for layer, cache in zip(reversed(self.layers), reversed(caches)):
                g = layer.backward(g, cache)[0]
            return g

        return logits, vjp

    def param_grads(self, x, upstream_fn):
        """Forward pass, then backprop ``upstream_fn(logits)`` into all parameters.

        Returns ``(logits, grads, input_grad)`` where ``grads`` aligns with
        :meth:`parameters`.
        """
        logits, caches = self._run(x)
        g = upstream_fn(logits)
        grads = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g, pg = layer.backward(g, cache, need_params=bool(layer.params))
            if pg is not None:
                grads = list(pg) + grads
        return logits, grads, g

    def parameters(self):
        return [p for layer in self.layers for p in layer.params]

    def activation_pattern(self, x):
        """Concatenated ReLU on/off flags and max-pool argmax indices per row.

        Two inputs with equal patterns lie in the same linear piece of the
        network, which is what finite differences need.
        """
        a = self.check_inputs(x)
        parts = []
        for layer in self.layers:
            a, cache = layer.forward(a)
            if isinstance(layer, ReLU):
                parts.append(cache.reshape(len(a), -1).astype(np.int64))
            elif isinstance(layer, MaxPool2D):
                parts.append(cache[1].reshape(len(a), -1))
        if not parts:
            return np.zeros((len(a), 0), dtype=np.int64)
        return np.concatenate(parts, axis=1)

    def copy(self):
        from .serialization import clone

        return clone(self)

    def __eq__(self, other):
        return (
            isinstance(other, Sequential)
            and self.input_dim == other.input_dim
            and len(self.layers) == len(other.layers)
            and all(a == b for a, b in zip(self.layers, other.layers))
        )

    def __repr__(self):
        return f"Sequential(input_dim={self.input_dim}, layers={self.layers})"


class ScaledClassifier(Classifier):
    """Multiplies the logits of ``model`` by ``alpha > 0``; decisions are unchanged."""

    def __init__(self, model, alpha):
        if not np.isfinite(alpha) or alpha <= 0:
            raise InputError(f"scale must be positive, got {alpha}")
        self.model = model
        self.alpha = float(alpha)
        self.num_classes = model.num_classes
        self.input_dim = model.input_dim
        self.stochastic = model.stochastic

    def linearize(self, x, rng=None):
        logits, vjp = self.model.linearize(x, rng)
        if self.alpha == 1.0:
            return logits, vjp
        return self.alpha * logits, lambda u: vjp(self.alpha * np.asarray(u, dtype=np.float64))


def wrap_scaled(model, alpha):
    return ScaledClassifier(model, alpha)


class AdditiveNoiseClassifier(Classifier):
    """Randomized defense: evaluates ``model`` at ``x + sigma * N(0, I)``."""

    stochastic = True

    def __init__(self, model, sigma):
        if sigma < 0:
            raise InputError("noise level must be non-negative")
        self.model = model
        self.sigma = float(sigma)
        self.num_classes = model.num_classes
        self.input_dim = model.input_dim

    def linearize(self, x, rng=None):
        x = self.check_inputs(x)
        rng = self._rng_for(rng, len(x))
        if isinstance(rng, np.random.Generator):
            noise = rng.standard_normal(x.shape)
        else:
            noise = np.stack([g.standard_normal(x.shape[1]) for g in rng])
        return self.model.linearize(x + self.sigma * noise)


# reference architectures -------------------------------------------------


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def linear_model(weight, bias):
    """``z = W x + b`` as a one-layer network."""
    weight = np.asarray(weight, dtype=np.float64)
    return Sequential([Dense(weight, bias)], weight.shape[1])


def mlp(input_dim, num_classes, hidden=(256, 256), seed=0):
    """Fully connected ReLU network ``d - hidden... - K`` with He initialisation."""
    rng = np.random.default_rng(seed)
    layers = []
    fan_in = input_dim
    for h in hidden:
        layers += [Dense(_he(rng, (h, fan_in), fan_in), np.zeros(h)), ReLU()]
        fan_in = h
    layers.append(Dense(_he(rng, (num_classes, fan_in), fan_in) / np.sqrt(2.0), np.zeros(num_classes)))
    return Sequential(layers, input_dim)


def cnn(image_shape=(1, 28, 28), num_classes=10, channels=(16, 32), kernel=3, seed=0):
    """Two conv+ReLU+max-pool blocks followed by one dense layer."""
    rng = np.random.default_rng(seed)
    layers = [Reshape(image_shape)]
    shape = tuple(image_shape)
    for ch in channels:
        fan_in = shape[0] * kernel * kernel
        conv = Conv2D(_he(rng, (ch, shape[0], kernel, kernel), fan_in), np.zeros(ch))
        layers += [conv, ReLU(), MaxPool2D(2)]
        shape = MaxPool2D(2).output_shape(conv.output_shape(shape))
    layers.append(Flatten())
    flat = int(np.prod(shape))
    layers.append(Dense(_he(rng, (num_classes, flat), flat) / np.sqrt(2.0), np.zeros(num_classes)))
    return Sequential(layers, int(np.prod(image_shape)))
