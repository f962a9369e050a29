"""Targeted FAB: minimum-norm adversarial search through linearized decision boundaries.

Each step linearizes ``z_y - z_t`` around the current iterate, projects both
the iterate and the original point onto the resulting half-space within the
box, and blends the two projections with a small bias toward the original
point. Whenever the iterate reaches the target class it is recorded and
pulled back toward the original point.
"""
from dataclasses import dataclass

import numpy as np

from .apgd import AttackOutcome, example_rngs
from .errors import InputError
from .losses import ordering
from .threat import distance, random_init


@dataclass
class FabConfig:
    n_iter: int = 100
    n_targets: int = 9
    alpha_max: float = 0.1
    eta: float = 1.05
    beta: float = 0.9
    n_restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.eta < 1:
            raise InputError("eta must be at least 1")
        if not 0 < self.beta < 1:
            raise InputError("beta must lie in (0, 1)")
        if not 0 <= self.alpha_max <= 1:
            raise InputError("alpha_max must lie in [0, 1]")
        if self.n_iter < 1 or self.n_targets < 1 or self.n_restarts < 1:
            raise InputError("n_iter, n_targets and n_restarts must be positive")


def box_hyperplane_projection(x, w, b, norm, lower=0.0, upper=1.0):
    """Closest point to ``x`` (l2 or l-inf) with ``w.z + b <= 0`` and ``z`` in the box.

    Batched over rows. Points already satisfying the constraint come back
    unchanged; when no box point satisfies it, the box point minimising
    ``w.z + b`` is returned instead.

    The minimiser moves every coordinate toward ``-w`` until it hits the box:
    ``z(t) = clip(x - t * r)`` with ``r = w`` (l2) or ``r = sign(w)`` (l-inf).
    ``w.z(t)`` is piecewise linear and non-increasing in ``t``, so the
    smallest ``t`` reaching the constraint is found exactly by scanning the
    sorted clamp times.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    b = np.broadcast_to(np.asarray(b, dtype=np.float64), (len(x),)).copy()
    if x.shape != w.shape:
        raise InputError("x and w must have the same shape")
    norm = "Linf" if str(norm).lower() in ("linf", "inf") else "L2"
    rate = w if norm == "L2" else np.sign(w)

    bound = np.where(w > 0, lower, upper)
    moving = w != 0
    gap = np.abs(x - bound)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_clamp = np.where(moving, gap / np.abs(np.where(moving, rate, 1.0)), np.inf)

    order = np.argsort(t_clamp, axis=1, kind="stable")
    rows = np.arange(len(x))[:, None]
    ts = t_clamp[rows, order]
    wx = (w * x)[rows, order]
    wr = (w * rate)[rows, order]
    wb = np.where(moving, w * bound, 0.0)[rows, order]
    finite = np.isfinite(ts)

    # value at the k-th clamp time, with coordinates 0..k already clamped
    cum_wx = np.cumsum(np.where(finite, wx, 0.0), axis=1)
    cum_wr = np.cumsum(np.where(finite, wr, 0.0), axis=1)
    cum_wb = np.cumsum(np.where(finite, wb, 0.0), axis=1)
    tot_wx = np.sum(w * x, axis=1, keepdims=True)
    tot_wr = np.sum(w * rate, axis=1, keepdims=True)
    g_at = b[:, None] + cum_wb + (tot_wx - cum_wx) - np.where(finite, ts, 0.0) * (tot_wr - cum_wr)
    g_at = np.where(finite, g_at, np.inf)

    out = x.copy()
    g0 = b + tot_wx[:, 0]
    need = g0 > 0
    g_inf = b + np.sum(np.where(moving, w * bound, 0.0), axis=1)
    infeasible = need & (g_inf > 0)
    if infeasible.any():
        out[infeasible] = np.where(moving[infeasible], bound[infeasible], x[infeasible])
    solve = np.flatnonzero(need & ~infeasible)
    if solve.size:
        reached = g_at[solve] <= 0
        k = np.argmax(reached, axis=1)
        prev_wx = np.where(k > 0, cum_wx[solve, k - 1], 0.0)
        prev_wr = np.where(k > 0, cum_wr[solve, k - 1], 0.0)
        prev_wb = np.where(k > 0, cum_wb[solve, k - 1], 0.0)
        free_wx = tot_wx[solve, 0] - prev_wx
        free_wr = tot_wr[solve, 0] - prev_wr
        t = (b[solve] + prev_wb + free_wx) / free_wr
        t = np.clip(t, np.where(k > 0, ts[solve, k - 1], 0.0), ts[solve, k])
        out[solve] = np.clip(x[solve] - t[:, None] * rate[solve], lower, upper)
    return out


def _logit_gap(model, x, y, t):
    """``f = z_y - z_t`` and its input gradient at each row."""
    logits, vjp = model.linearize(x)
    rows = np.arange(len(x))
    u = np.zeros_like(logits)
    u[rows, y] = 1.0
    u[rows, t] -= 1.0
    return logits[rows, y] - logits[rows, t], vjp(u), logits


def fab_t_run(model, x_orig, y, target, tm, cfg=None, indices=None, trace=None):
    """FAB toward a fixed target class per example.

    ``f_best`` is the smallest perturbation norm among iterates classified
    as the target (``inf`` if none); ``success`` requires that norm to be
    within the budget of ``tm``. ``x_adv`` is that minimal-norm point, or
    ``x_orig`` when no iterate reached the target. Pass a list as ``trace``
    to record the running minimal norm and the iterates.
    """
    cfg = cfg or FabConfig()
    x_orig = model.check_inputs(x_orig)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    b = len(x_orig)
    target = np.broadcast_to(np.asarray(target, dtype=np.int64), (b,)).copy()
    if len(y) != b:
        raise InputError("one label per input required")
    if np.any(target == y) or np.any((target < 0) | (target >= model.num_classes)):
        raise InputError("targets must be valid classes different from the labels")
    if np.any(model.predict(x_orig) != y):
        raise InputError("FAB needs correctly classified inputs")
    indices = np.arange(b) if indices is None else np.asarray(indices)

    best = np.full(b, np.inf)
    x_best = x_orig.copy()
    first = np.full(b, -1)
    for r in range(cfg.n_restarts):
        x1 = x_orig.copy() if r == 0 else random_init(x_orig, tm, example_rngs(cfg.seed, indices, r, 0))
        for k in range(cfg.n_iter):
            f, g, _ = _logit_gap(model, x1, y, target)
            offset = f - np.sum(g * x1, axis=1)
            proj = box_hyperplane_projection(np.concatenate([x1, x_orig]), np.concatenate([g, g]),
                                             np.concatenate([offset, offset]), tm.norm, tm.lower, tm.upper)
            d_s = proj[:b] - x1
            d_o = proj[b:] - x_orig
            n_s = np.maximum(distance(np.zeros_like(d_s), d_s, tm.norm), 1e-8)
            n_o = np.maximum(distance(np.zeros_like(d_o), d_o, tm.norm), 1e-8)
            mix = np.minimum(np.maximum(n_s / (n_s + n_o), 0.0), cfg.alpha_max)[:, None]
            x1 = np.clip((1 - mix) * (x1 + cfg.eta * d_s) + mix * (x_orig + cfg.eta * d_o), tm.lower, tm.upper)

            adv = model.predict(x1) == target
            if adv.any():
                dist = distance(x_orig, x1, tm.norm)
                better = adv & (dist < best)
                best = np.where(better, dist, best)
                x_best[better] = x1[better]
                hit = better & (first < 0) & (dist <= tm.eps)
                first[hit] = r * cfg.n_iter + k + 1
                x1[adv] = x_orig[adv] + cfg.beta * (x1[adv] - x_orig[adv])
            if trace is not None:
                trace.append({"restart": r, "iteration": k + 1, "best": best.copy(), "x": x1.copy()})

    success = best <= tm.eps
    total = cfg.n_iter * cfg.n_restarts
    return AttackOutcome(
        success, x_best, best, np.full(b, total), np.full(b, total), first
    )


def target_classes(logits, y, n_targets):
    """Classes ranked by clean logit excluding the label, at most ``n_targets`` of them."""
    order = ordering(logits)
    k = logits.shape[1]
    n = min(n_targets, k - 1)
    out = np.empty((len(logits), n), dtype=np.int64)
    for i, (row, label) in enumerate(zip(order, y)):
        out[i] = row[row != label][:n]
    return out


def fab_t_multi(model, x_orig, y, tm, cfg=None, indices=None):
    """Run FAB toward each of the top clean-logit classes and keep the smallest adversarial norm."""
    cfg = cfg or FabConfig()
    x_orig = model.check_inputs(x_orig)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    targets = target_classes(model.forward(x_orig), y, cfg.n_targets)
    result = None
    for j in range(targets.shape[1]):
        out = fab_t_run(model, x_orig, y, targets[:, j], tm, cfg, indices)
        if result is None:
            result = out
            continue
        better = out.f_best < result.f_best
        result.f_best = np.where(better, out.f_best, result.f_best)
        result.x_adv[better] = out.x_adv[better]
        newly = out.success & ~result.success
        offset = j * cfg.n_iter * cfg.n_restarts
        result.first_success_iteration = np.where(
            newly, out.first_success_iteration + offset, result.first_success_iteration
        )
        result.success = result.success | out.success
        result.iterations_used = result.iterations_used + out.iterations_used
        result.queries_used = result.queries_used + out.queries_used
    return result
