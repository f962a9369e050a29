"""Feasible-set geometry for l-inf and l2 threat models on the unit box.

All functions accept either a single point of shape ``(d,)`` or a batch of
shape ``(B, d)``; norms are taken over the last axis.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InputError

NORMS = ("Linf", "L2")

_NORM_ALIASES = {"linf": "Linf", "inf": "Linf", "l2": "L2", "2": "L2"}


def canonical_norm(norm):
    try:
        return _NORM_ALIASES[str(norm).lower()]
    except KeyError:
        raise InputError(f"unsupported norm {norm!r}; expected one of {NORMS}") from None


@dataclass(frozen=True)
class ThreatModel:
    """An l_p ball of radius ``eps`` around the clean point, intersected with a box.

    ``eps == 0`` is accepted and describes the degenerate ball {x_orig}.
    """

    norm: str = "Linf"
    eps: float = 0.3
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "norm", canonical_norm(self.norm))
        if not np.isfinite(self.eps) or self.eps < 0:
            raise InputError(f"eps must be finite and non-negative, got {self.eps}")
        if not self.lower < self.upper:
            raise InputError("box lower bound must be below the upper bound")


def _linf_bounds(x_orig, eps, lower, upper):
    lo = np.maximum(x_orig - eps, lower)
    hi = np.minimum(x_orig + eps, upper)
    # x - eps can round below the true bound; nudge until |bound - x| <= eps holds in floats
    for _ in range(4):
        bad = (x_orig - lo) > eps
        if not bad.any():
            break
        lo = np.where(bad, np.nextafter(lo, np.inf), lo)
    for _ in range(4):
        bad = (hi - x_orig) > eps
        if not bad.any():
            break
        hi = np.where(bad, np.nextafter(hi, -np.inf), hi)
    return lo, hi


def _l2_norm(v):
    return np.sqrt(np.sum(v * v, axis=-1, keepdims=True))


def project(x_orig, z, tm):
    """Map ``z`` onto the feasible set of ``tm`` centred at ``x_orig``.

    l-inf uses the exact joint projection (coordinatewise clipping). l2 first
    rescales the perturbation onto the ball and then clips to the box, which
    is the usual PGD practice but not the exact Euclidean projection onto
    the intersection. Feasible inputs are returned unchanged, so the map is
    idempotent bit for bit.
    """
    x_orig = np.asarray(x_orig, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x_orig.shape != z.shape:
        raise InputError(f"shape mismatch: {x_orig.shape} vs {z.shape}")
    if tm.norm == "Linf":
        lo, hi = _linf_bounds(x_orig, tm.eps, tm.lower, tm.upper)
        return np.clip(z, lo, hi)

    delta = z - x_orig
    n = _l2_norm(delta)
    in_box = np.all((z >= tm.lower) & (z <= tm.upper), axis=-1, keepdims=True)
    feasible = (n <= tm.eps) & in_box
    if feasible.all():
        return z.copy()
    scale = np.where(n > tm.eps, tm.eps / np.where(n > 0, n, 1.0), 1.0)
    delta = delta * scale
    out = np.clip(x_orig + delta, tm.lower, tm.upper)
    # rounding in x + delta may leave the norm a hair above eps; shrink until it does not
    shrink = 4 * np.finfo(np.float64).eps
    for _ in range(60):
        over = _l2_norm(out - x_orig) > tm.eps
        if not over.any():
            break
        delta = np.where(over, delta * (1.0 - shrink), delta)
        out = np.where(over, np.clip(x_orig + delta, tm.lower, tm.upper), out)
        shrink *= 2
    return np.where(feasible, z, out)


def random_init(x_orig, tm, rng):
    """Random feasible starting point around ``x_orig``.

    ``rng`` is a ``numpy.random.Generator`` or, for batches, a sequence of
    generators (one per row) so that each example owns its stream.
    """
    x_orig = np.asarray(x_orig, dtype=np.float64)
    if isinstance(rng, np.random.Generator):
        zeta = _draw_perturbation(x_orig.shape, tm, rng)
    else:
        rows = list(rng)
        if x_orig.ndim != 2 or len(rows) != x_orig.shape[0]:
            raise InputError("need one generator per row of x_orig")
        zeta = np.stack([_draw_perturbation(x_orig.shape[1:], tm, g) for g in rows])
    z = np.clip(x_orig + zeta, tm.lower, tm.upper)
    return project(x_orig, z, tm)


def _draw_perturbation(shape, tm, rng):
    if tm.norm == "Linf":
        return rng.uniform(-tm.eps, tm.eps, size=shape)
    d = shape[-1]
    s = rng.standard_normal(size=shape)
    s /= np.maximum(_l2_norm(s), np.finfo(np.float64).tiny)
    u = rng.uniform(size=shape[:-1] + (1,))
    return tm.eps * u ** (1.0 / d) * s


def step_direction(grad, norm):
    """Steepest-ascent direction: sign for l-inf, unit l2 vector for l2."""
    grad = np.asarray(grad, dtype=np.float64)
    if canonical_norm(norm) == "Linf":
        return np.sign(grad)
    n = _l2_norm(grad)
    return np.where(n > 0, grad / np.where(n > 0, n, 1.0), 0.0)


def distance(x, z, norm):
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise InputError(f"shape mismatch: {x.shape} vs {z.shape}")
    diff = z - x
    if canonical_norm(norm) == "Linf":
        return np.max(np.abs(diff), axis=-1) if diff.shape[-1] else np.zeros(diff.shape[:-1])
    return np.sqrt(np.sum(diff * diff, axis=-1))


def is_feasible(x_orig, z, tm, l2_tol=1e-12):
    """Row-wise feasibility check (l-inf exact, l2 up to ``l2_tol``)."""
    d = distance(x_orig, z, tm.norm)
    limit = tm.eps if tm.norm == "Linf" else tm.eps + l2_tol
    in_box = np.all((z >= tm.lower) & (z <= tm.upper), axis=-1)
    return (d <= limit) & in_box
