"""Surrogate objectives on logits and their exact logit-space gradients.

Every loss is *maximised* by the attacks. Supported kinds:

``"ce"``
    cross-entropy ``-z_y + log sum_j exp(z_j)``
``"cw"``
    margin ``-z_y + max_{i != y} z_i``
``"dlr"``
    difference of logits ratio ``-(z_y - max_{i != y} z_i) / (z_pi1 - z_pi3)``
``"dlr-targeted"``
    ``-(z_y - z_t) / (z_pi1 - (z_pi3 + z_pi4) / 2)``

``pi`` is the decreasing ordering of the logits; ties go to the lower class
index, and gradients use the matching one-sided subgradient. The input-space
gradient of any loss is ``model.input_vjp(x, loss_grad_logits(...))``.
"""
import numpy as np

from .errors import InputError, UnsupportedLossError

LOSSES = ("ce", "cw", "dlr", "dlr-targeted")

# floor on the DLR denominators, keeps the loss finite on constant logits
DLR_DENOM_FLOOR = 1e-12


def _prepare(kind, z, y, target):
    if kind not in LOSSES:
        raise InputError(f"unknown loss {kind!r}; expected one of {LOSSES}")
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    n, k = z.shape
    if k < 2:
        raise InputError("need at least two classes")
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (n,))
    if np.any((y < 0) | (y >= k)):
        raise InputError("label out of range")
    if kind == "dlr" and k < 3:
        raise UnsupportedLossError("DLR needs at least 3 classes")
    if kind == "dlr-targeted":
        if k < 4:
            raise UnsupportedLossError("targeted DLR needs at least 4 classes")
        if target is None:
            raise InputError("targeted DLR needs a target class")
        target = np.broadcast_to(np.asarray(target, dtype=np.int64), (n,))
        if np.any((target < 0) | (target >= k)):
            raise InputError("target out of range")
        if np.any(target == y):
            raise InputError("target class must differ from the true class")
    return z, y, target, single


def ordering(z):
    """Class indices by decreasing logit, ties broken toward the lower index."""
    return np.argsort(-np.atleast_2d(z), axis=-1, kind="stable")


def best_other(z, y):
    """Index of the largest logit excluding class ``y`` (lowest index on ties)."""
    z = np.atleast_2d(z)
    masked = z.copy()
    masked[np.arange(len(z)), y] = -np.inf
    return np.argmax(masked, axis=-1)


def softmax(z):
    z = np.atleast_2d(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loss_value(kind, z, y, target=None):
    """Loss per example; ``z`` is ``(K,)`` or ``(B, K)``."""
    z, y, target, single = _prepare(kind, z, y, target)
    rows = np.arange(len(z))
    zy = z[rows, y]
    if kind == "ce":
        m = z.max(axis=-1)
        val = -zy + m + np.log(np.exp(z - m[:, None]).sum(axis=-1))
    elif kind == "cw":
        val = -zy + z[rows, best_other(z, y)]
    else:
        pi = ordering(z)
        z1 = z[rows, pi[:, 0]]
        z3 = z[rows, pi[:, 2]]
        if kind == "dlr":
            num = zy - z[rows, best_other(z, y)]
            den = z1 - z3
        else:
            num = zy - z[rows, target]
            den = z1 - 0.5 * (z3 + z[rows, pi[:, 3]])
        val = -num / np.maximum(den, DLR_DENOM_FLOOR)
    return val[0] if single else val


def loss_grad_logits(kind, z, y, target=None):
    """Gradient of :func:`loss_value` with respect to the logits.

    The cross-entropy gradient is evaluated literally as ``p - e_y``; when the
    softmax saturates in floating point the result is exactly zero, which is
    what makes gradient masking observable.
    """
    z, y, target, single = _prepare(kind, z, y, target)
    n, k = z.shape
    rows = np.arange(n)
    g = np.zeros_like(z)
    if kind == "ce":
        g = softmax(z)
        g[rows, y] += -1.0
    elif kind == "cw":
        g[rows, y] -= 1.0
        g[rows, best_other(z, y)] += 1.0
    else:
        pi = ordering(z)
        i1 = pi[:, 0]
        i3 = pi[:, 2]
        z1 = z[rows, i1]
        z3 = z[rows, i3]
        if kind == "dlr":
            other = best_other(z, y)
            num = z[rows, y] - z[rows, other]
            raw_den = z1 - z3
        else:
            other = target
            i4 = pi[:, 3]
            num = z[rows, y] - z[rows, other]
            raw_den = z1 - 0.5 * (z3 + z[rows, i4])
        clamped = raw_den < DLR_DENOM_FLOOR
        den = np.maximum(raw_den, DLR_DENOM_FLOOR)
        # d(-num/den) = -dnum/den + num/den^2 * dden
        g[rows, y] -= 1.0 / den
        g[rows, other] += 1.0 / den
        c = np.where(clamped, 0.0, num / den**2)
        g[rows, i1] += c
        if kind == "dlr":
            g[rows, i3] -= c
        else:
            g[rows, i3] -= 0.5 * c
            g[rows, i4] -= 0.5 * c
    return g[0] if single else g


def margin(z, y):
    """``z_y - max_{i != y} z_i``; negative exactly when misclassified."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (len(z),))
    rows = np.arange(len(z))
    return z[rows, y] - z[rows, best_other(z, y)]
