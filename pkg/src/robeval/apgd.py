"""Auto-PGD and the fixed-step PGD baseline it is compared against.

Both attacks share one ascent loop. APGD adds budget-aware checkpoints at
which the step size is halved (and the iterate reset to the best point seen)
whenever progress since the previous checkpoint was too rare or stalled.
"""
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil

import numpy as np

from .errors import InputError
from .losses import loss_grad_logits, loss_value
from .threat import is_feasible, project, random_init, step_direction

log = logging.getLogger(__name__)


def checkpoints(n_iter):
    """Iterations at which APGD may halve its step size.

    ``w_j = ceil(p_j * n_iter)`` with ``p_0 = 0``, ``p_1 = 0.22`` and
    ``p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06)`` for all ``p_j <= 1``.
    The recurrence runs in exact rational arithmetic so that e.g. 0.41 * 100
    rounds up to 41 and not 42.
    """
    if n_iter < 2:
        raise InputError("n_iter must be at least 2")
    p = [Fraction(0), Fraction(22, 100)]
    while True:
        nxt = p[-1] + max(p[-1] - p[-2] - Fraction(3, 100), Fraction(6, 100))
        if nxt > 1:
            break
        p.append(nxt)
    return sorted({min(ceil(pj * n_iter), n_iter) for pj in p})


@dataclass
class ApgdConfig:
    n_iter: int = 100
    alpha: float = 0.75
    rho: float = 0.75
    initial_step_factor: float = 2.0
    loss: str = "ce"
    n_restarts: int = 1
    init: str = "original"
    eot_samples: int = 1
    seed: int = 0
    adaptive: bool = True

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise InputError("alpha must lie in [0, 1]")
        if not 0 < self.rho < 1:
            raise InputError("rho must lie in (0, 1)")
        if self.n_iter < 2:
            raise InputError("n_iter must be at least 2")
        if self.eot_samples < 1 or self.n_restarts < 1:
            raise InputError("eot_samples and n_restarts must be positive")
        if self.init not in ("original", "random"):
            raise InputError("init must be 'original' or 'random'")


@dataclass
class AttackOutcome:
    """Per-example attack results for a batch (all fields are arrays of length B).

    ``x_adv`` is the first adversarial iterate when ``success`` is set and the
    best point found otherwise. ``f_best`` is the best objective value (for
    FAB: the smallest adversarial norm, ``inf`` if none was found).
    """

    success: np.ndarray
    x_adv: np.ndarray
    f_best: np.ndarray
    iterations_used: np.ndarray
    queries_used: np.ndarray
    first_success_iteration: np.ndarray
    aborted: np.ndarray = None

    def __post_init__(self):
        if self.aborted is None:
            self.aborted = np.zeros(len(self.success), dtype=bool)

    def __len__(self):
        return len(self.success)


@dataclass
class RunLog:
    """Trajectory of one restart; ``rows`` maps columns back to batch positions.

    ``loss[k]`` is the objective at iterate k (after any reset to the best
    point), ``eta[k]`` the step size used to go from iterate k to k+1.
    """

    rows: np.ndarray
    loss: list = field(default_factory=list)
    loss_max: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    success: list = field(default_factory=list)
    events: list = field(default_factory=list)
    iterates: list = None

    def arrays(self):
        return {
            "loss": np.array(self.loss),
            "loss_max": np.array(self.loss_max),
            "eta": np.array(self.eta),
            "success": np.array(self.success),
        }


def eot_loss_grad(model, x, y, loss, samples=1, rng=None, target=None):
    """Loss, input gradient and logits averaged over ``samples`` stochastic passes.

    Deterministic models are evaluated once whatever ``samples`` is, since
    every pass would be identical. ``rng`` feeds the model's randomness (one
    generator per row, or a single generator).
    """
    passes = samples if model.stochastic else 1
    f_sum = g_sum = z_sum = None
    for _ in range(passes):
        logits, vjp = model.linearize(x, rng)
        f = loss_value(loss, logits, y, target)
        g = vjp(loss_grad_logits(loss, logits, y, target))
        if f_sum is None:
            f_sum, g_sum, z_sum = f, g, logits
        else:
            f_sum, g_sum, z_sum = f_sum + f, g_sum + g, z_sum + logits
    if passes == 1:
        return f_sum, g_sum, z_sum
    return f_sum / passes, g_sum / passes, z_sum / passes


class _Objective:
    """Objective of one batch; stochastic models draw from per-example streams."""

    def __init__(self, model, y, loss, target, eot_samples, noise_rngs):
        self.model = model
        self.y = y
        self.loss = loss
        self.target = target
        self.samples = eot_samples
        self.passes = eot_samples if model.stochastic else 1
        self.rngs = noise_rngs if model.stochastic else None

    def __call__(self, x, rows=None):
        y = self.y if rows is None else self.y[rows]
        t = None if self.target is None else (self.target if rows is None else self.target[rows])
        rngs = None
        if self.rngs is not None:
            rngs = self.rngs if rows is None else [self.rngs[i] for i in rows]
        return eot_loss_grad(self.model, x, y, self.loss, self.samples, rngs, t)


def _hit(logits, y, target):
    pred = np.argmax(logits, axis=-1)
    return pred == target if target is not None else pred != y


def _ascent(obj, x_orig, x0, y, target, tm, n_iter, eta0, alpha, rho, adaptive, runlog, keep_iterates):
    """One run of (A)PGD on a batch. Returns per-row state as a dict."""
    b = len(x0)
    ckpts = set(checkpoints(n_iter)[1:]) if adaptive else set()
    norm = tm.norm

    def bad(f, g):
        return ~np.isfinite(f) | ~np.all(np.isfinite(g), axis=1)

    f0, g0, z0 = obj(x0)
    dead = bad(f0, g0)
    g0 = np.where(dead[:, None], 0.0, g0)
    f0 = np.where(dead, -np.inf, f0)
    succ = _hit(z0, y, target) & ~dead
    first = np.where(succ, 0, -1)
    x_succ = x0.copy()

    eta = np.full(b, float(eta0))
    x1 = project(x_orig, x0 + eta[:, None] * step_direction(g0, norm), tm)
    x1 = np.where(dead[:, None], x0, x1)
    f1, g1, z1 = obj(x1)
    nd = bad(f1, g1) & ~dead
    dead |= nd
    f1 = np.where(dead, f0, f1)
    g1 = np.where(dead[:, None], 0.0, g1)
    x1 = np.where(dead[:, None], x0, x1)
    new = _hit(z1, y, target) & ~succ & ~dead
    x_succ[new] = x1[new]
    first[new] = 1
    succ |= new

    take1 = f1 > f0
    f_max = np.where(take1, f1, f0)
    x_max = np.where(take1[:, None], x1, x0)
    g_max = np.where(take1[:, None], g1, g0)

    hist = [f0, f1]
    if runlog is not None:
        runlog.loss += [f0.copy(), f1.copy()]
        runlog.loss_max += [f0.copy(), f_max.copy()]
        runlog.eta.append(eta.copy())
        runlog.success += [(first == 0), succ.copy()]
        if keep_iterates:
            runlog.iterates = [x0.copy(), x1.copy()]

    x_prev, x_k, g_k = x0, x1, g1
    last_w = 0
    eta_ck = eta.copy()
    fmax_ck = f_max.copy()
    for k in range(1, n_iter):
        z = project(x_orig, x_k + eta[:, None] * step_direction(g_k, norm), tm)
        if alpha == 1.0:
            x_new = z
        else:
            x_new = project(x_orig, x_k + alpha * (z - x_k) + (1.0 - alpha) * (x_k - x_prev), tm)
        x_new = np.where(dead[:, None], x_k, x_new)
        f_new, g_new, z_new = obj(x_new)
        nd = bad(f_new, g_new) & ~dead
        if nd.any():
            log.warning("non-finite objective at iteration %d for %d example(s); aborting them", k + 1, nd.sum())
        dead |= nd
        f_new = np.where(dead, hist[-1], f_new)
        g_new = np.where(dead[:, None], 0.0, g_new)
        x_new = np.where(dead[:, None], x_k, x_new)

        new = _hit(z_new, y, target) & ~succ & ~dead
        x_succ[new] = x_new[new]
        first[new] = k + 1
        succ |= new

        imp = f_new > f_max
        f_max = np.where(imp, f_new, f_max)
        x_max = np.where(imp[:, None], x_new, x_max)
        g_max = np.where(imp[:, None], g_new, g_max)
        hist.append(f_new)
        if runlog is not None:
            runlog.eta.append(eta.copy())
        x_prev, x_k, g_k = x_k, x_new, g_new

        if k in ckpts:
            window = np.array(hist[last_w : k + 1])
            count = np.sum(window[1:] > window[:-1], axis=0)
            cond1 = count < rho * (k - last_w)
            cond2 = (eta == eta_ck) & (f_max == fmax_ck)
            halve = (cond1 | cond2) & ~dead
            eta_ck = eta.copy()
            fmax_ck = f_max.copy()
            eta = np.where(halve, eta / 2.0, eta)
            x_k = np.where(halve[:, None], x_max, x_k)
            g_k = np.where(halve[:, None], g_max, g_k)
            hist[-1] = np.where(halve, f_max, hist[-1])
            if runlog is not None:
                runlog.events.append(
                    {"k": k, "window_start": last_w, "count": count, "cond1": cond1, "cond2": cond2, "halved": halve}
                )
            last_w = k

        if runlog is not None:
            runlog.loss.append(hist[-1].copy())
            runlog.loss_max.append(f_max.copy())
            runlog.success.append(succ.copy())
            if keep_iterates:
                runlog.iterates.append(x_k.copy())

    return {
        "success": succ,
        "x_succ": x_succ,
        "first": first,
        "f_max": f_max,
        "x_max": x_max,
        "aborted": dead,
    }


def example_rngs(seed, indices, restart, stream):
    """Independent generators keyed by (seed, example index, restart, stream)."""
    return [np.random.default_rng([int(seed), int(i), int(restart), int(stream)]) for i in indices]


def _check_batch(model, x_orig, y, tm, target):
    x_orig = model.check_inputs(x_orig)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if len(y) != len(x_orig):
        raise InputError("one label per input required")
    if np.any((y < 0) | (y >= model.num_classes)):
        raise InputError("label out of range")
    if not np.all(is_feasible(x_orig, x_orig, tm)):
        raise InputError("x_orig must lie in the input box")
    if target is not None:
        target = np.broadcast_to(np.asarray(target, dtype=np.int64), y.shape).copy()
        if np.any(target == y):
            raise InputError("target class must differ from the true class")
    return x_orig, y, target


def _run_restarts(model, x_orig, y, tm, *, loss, target, n_iter, n_restarts, init, eot_samples,
                  seed, indices, eta0, alpha, rho, adaptive, trace, keep_iterates):
    b = len(x_orig)
    indices = np.arange(b) if indices is None else np.asarray(indices)
    noise = example_rngs(seed, indices, 0, 1) if model.stochastic else None
    obj = _Objective(model, y, loss, target, eot_samples, noise)

    success = np.zeros(b, dtype=bool)
    x_adv = x_orig.copy()
    f_best = np.full(b, -np.inf)
    first = np.full(b, -1)
    iters = np.zeros(b, dtype=np.int64)
    queries = np.zeros(b, dtype=np.int64)
    aborted = np.zeros(b, dtype=bool)
    for r in range(n_restarts):
        rows = np.flatnonzero(~success)
        if rows.size == 0:
            break
        xo = x_orig[rows]
        if r == 0 and init == "original":
            x0 = xo.copy()
        else:
            x0 = random_init(xo, tm, example_rngs(seed, indices[rows], r, 0))
        sub_obj = _SubObjective(obj, rows)
        runlog = RunLog(rows=rows) if trace is not None else None
        res = _ascent(sub_obj, xo, x0, y[rows], None if target is None else target[rows], tm,
                      n_iter, eta0, alpha, rho, adaptive, runlog, keep_iterates)
        if trace is not None:
            trace.append(runlog)
        s = res["success"]
        better = ~s & (res["f_max"] > f_best[rows])
        upd_s = rows[s]
        x_adv[upd_s] = res["x_succ"][s]
        first[upd_s] = res["first"][s] + r * n_iter
        success[upd_s] = True
        f_best[upd_s] = np.maximum(f_best[upd_s], res["f_max"][s])
        upd_b = rows[better]
        x_adv[upd_b] = res["x_max"][better]
        f_best[upd_b] = res["f_max"][better]
        iters[rows] += n_iter
        queries[rows] += (n_iter + 1) * obj.passes
        aborted[rows] |= res["aborted"]
    return AttackOutcome(success, x_adv, f_best, iters, queries, first, aborted)


class _SubObjective:
    def __init__(self, obj, rows):
        self.obj = obj
        self.rows = rows

    def __call__(self, x):
        return self.obj(x, self.rows)


def apgd_run(model, x_orig, y, tm, cfg=None, target=None, indices=None, trace=None, keep_iterates=False):
    """Run APGD on a batch ``x_orig (B, d)`` with labels ``y``.

    ``target`` (scalar or per example) switches to the targeted setting:
    success then means the decision equals the target. ``indices`` are the
    dataset positions of the rows and key the per-example random streams, so
    results do not depend on how a dataset is split into batches. Pass a list
    as ``trace`` to collect one :class:`RunLog` per restart.
    """
    cfg = cfg or ApgdConfig()
    x_orig, y, target = _check_batch(model, x_orig, y, tm, target)
    return _run_restarts(
        model, x_orig, y, tm, loss=cfg.loss, target=target, n_iter=cfg.n_iter,
        n_restarts=cfg.n_restarts, init=cfg.init, eot_samples=cfg.eot_samples, seed=cfg.seed,
        indices=indices, eta0=cfg.initial_step_factor * tm.eps, alpha=cfg.alpha, rho=cfg.rho,
        adaptive=cfg.adaptive, trace=trace, keep_iterates=keep_iterates,
    )


def pgd_fixed_run(model, x_orig, y, tm, step_size, use_momentum=False, n_iter=100, n_restarts=1, loss="ce",
        seed=0, target=None, init="original", alpha=0.75, eot_samples=1, indices=None, trace=None,
        keep_iterates=False):
    """Fixed-step PGD; with ``use_momentum`` the update mixes in the previous step like APGD."""
    if step_size < 0:
        raise InputError("step size must be non-negative")
    if n_iter < 2:
        raise InputError("n_iter must be at least 2")
    x_orig, y, target = _check_batch(model, x_orig, y, tm, target)
    return _run_restarts(
        model, x_orig, y, tm, loss=loss, target=target, n_iter=n_iter, n_restarts=n_restarts,
        init=init, eot_samples=eot_samples, seed=seed, indices=indices, eta0=step_size,
        alpha=alpha if use_momentum else 1.0, rho=0.75, adaptive=False, trace=trace,
        keep_iterates=keep_iterates,
    )
