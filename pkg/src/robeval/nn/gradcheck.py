"""Central finite differences as an independent oracle for ``input_vjp``."""
import numpy as np

from ..errors import InputError


def finite_difference_vjp(model, x, u, h=1e-5):
    """Estimate ``sum_i u_i grad_x z_i`` by central differences.

    Returns ``(grad, unreliable)``. ``unreliable`` flags coordinates whose
    +-h probes leave the linear piece of the network around ``x`` (a ReLU
    flips or a max-pool winner changes), where the estimate says nothing about
    the one-sided derivative used by backprop. Models without an
    ``activation_pattern`` never flag anything.
    """
    if h <= 0:
        raise InputError("step must be positive")
    x = model.check_inputs(x)
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (len(x), model.num_classes):
        raise InputError("upstream gradient shape does not match the model")
    b, d = x.shape
    grad = np.empty((b, d))
    unreliable = np.zeros((b, d), dtype=bool)
    pattern = getattr(model, "activation_pattern", None)
    eye = np.eye(d) * h
    for i in range(b):
        probes = np.concatenate([x[i] + eye, x[i] - eye])
        z = model.forward(probes)
        s = z @ u[i]
        grad[i] = (s[:d] - s[d:]) / (2 * h)
        if pattern is not None:
            ref = pattern(x[i : i + 1])
            pp = pattern(probes)
            changed = np.any(pp != ref, axis=1)
            unreliable[i] = changed[:d] | changed[d:]
    return grad, unreliable


def finite_difference_grad(fn, x, h=1e-5):
    """Central differences of a batched scalar function ``fn: (N, d) -> (N,)`` at each row of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    b, d = x.shape
    eye = np.eye(d) * h
    out = np.empty((b, d))
    for i in range(b):
        s = fn(np.concatenate([x[i] + eye, x[i] - eye]))
        out[i] = (s[:d] - s[d:]) / (2 * h)
    return out
