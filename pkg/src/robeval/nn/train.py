"""Minibatch Adam trainer for the reference architectures, optionally adversarial."""
import logging

import numpy as np

from ..errors import InputError, TrainingError
from ..losses import softmax
from ..threat import ThreatModel, project

log = logging.getLogger(__name__)


def _ce_upstream(y, scale):
    def upstream(logits):
        g = softmax(logits)
        g[np.arange(len(y)), y] -= 1.0
        return g * scale

    return upstream


def pgd_perturb(model, x, y, eps, steps, step_size, rng):
    """Fixed-step l-inf PGD on the cross-entropy loss from a uniform random start."""
    tm = ThreatModel("Linf", eps)
    x_adv = project(x, np.clip(x + rng.uniform(-eps, eps, size=x.shape), 0.0, 1.0), tm)
    upstream = _ce_upstream(y, 1.0)
    for _ in range(steps):
        logits, vjp = model.linearize(x_adv)
        g = vjp(upstream(logits))
        x_adv = project(x, x_adv + step_size * np.sign(g), tm)
    return x_adv


def train_toy(
    arch,
    x,
    y,
    mode="plain",
    epochs=10,
    seed=0,
    batch_size=64,
    lr=1e-3,
    eps=0.3,
    steps=10,
    step_size=None,
):
    """Train a copy of ``arch`` on ``(x, y)`` and return it.

    ``mode="pgd"`` replaces every minibatch by its l-inf PGD adversarial
    version (radius ``eps``, ``steps`` sign steps of ``step_size``, default
    ``2.5 * eps / steps``) before the gradient step. Results are bit-identical
    for equal seeds.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise InputError("empty training set")
    if np.any((y < 0) | (y >= arch.num_classes)):
        raise InputError("labels outside [0, K)")
    if mode not in ("plain", "pgd"):
        raise InputError(f"unknown training mode {mode!r}")
    if step_size is None:
        step_size = 2.5 * eps / max(steps, 1)

    model = arch.copy()
    if epochs <= 0:
        return model
    rng = np.random.default_rng(seed)
    params = model.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, tiny = 0.9, 0.999, 1e-8
    t = 0
    n = len(x)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, yb = x[idx], y[idx]
            if mode == "pgd":
                xb = pgd_perturb(model, xb, yb, eps, steps, step_size, rng)
            logits, grads, _ = model.param_grads(xb, _ce_upstream(yb, 1.0 / len(yb)))
            z = logits - logits.max(axis=1, keepdims=True)
            batch_loss = float(np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(yb)), yb]))
            if not np.isfinite(batch_loss):
                raise TrainingError("loss became non-finite", epoch)
            total += batch_loss * len(yb)
            t += 1
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= b1
                mi += (1 - b1) * g
                vi *= b2
                vi += (1 - b2) * g * g
                p -= lr * (mi / (1 - b1**t)) / (np.sqrt(vi / (1 - b2**t)) + tiny)
        log.info("epoch %d: mean %s loss %.4f", epoch, mode, total / n)
    return model


def accuracy(model, x, y):
    return float(np.mean(model.predict(x) == np.asarray(y)))
