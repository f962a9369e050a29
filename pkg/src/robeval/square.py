"""Square Attack: score-based random search over localized square updates.

The attack sees the model only through :class:`ForwardOnly`, so no gradient
information can leak in. Inputs are flat rows holding ``(C, H, W)`` images
in row-major order.
"""
from dataclasses import dataclass, field

import numpy as np

from .apgd import AttackOutcome, example_rngs
from .errors import InputError
from .losses import margin
from .threat import is_feasible, project

P_THRESHOLDS = (10, 50, 200, 1000, 2000, 4000, 6000, 8000)

# random numbers are drawn per example in blocks of this many queries so that a
# run with a larger budget replays the exact prefix of a smaller one
_CHUNK = 100
_MAX_RESAMPLE = 100


def p_schedule(i, p_init=0.8):
    """Fraction of the image covered by the square at query ``i`` (unscaled schedule)."""
    if i < 0:
        raise InputError("query index must be non-negative")
    halvings = sum(1 for t in P_THRESHOLDS if i > t)
    return p_init / 2**halvings


@dataclass
class SquareConfig:
    n_queries: int = 5000
    p_init: float = 0.8
    avg_samples: int = 1
    seed: int = 0
    image_shape: tuple = None

    def __post_init__(self):
        if not 0 < self.p_init <= 1:
            raise InputError("p_init must lie in (0, 1]")
        if self.n_queries < 1 or self.avg_samples < 1:
            raise InputError("n_queries and avg_samples must be positive")


class ForwardOnly:
    """Exposes only the logits of a classifier."""

    def __init__(self, model):
        self._forward = model.forward
        self.num_classes = model.num_classes
        self.input_dim = model.input_dim
        self.stochastic = model.stochastic

    def forward(self, x, rng=None):
        return self._forward(x, rng)


@dataclass
class SquareTrace:
    """Per-query log: best margin of active rows, acceptance flags and (optionally) proposals."""

    margin: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    proposals: list = None


def image_shape_for(d, image_shape=None):
    if image_shape is not None:
        c, h, w = (int(v) for v in image_shape)
        if c * h * w != d:
            raise InputError(f"image shape {image_shape} does not match input size {d}")
        return c, h, w
    for c in (1, 3):
        if d % c == 0:
            r = int(round(np.sqrt(d // c)))
            if r * r * c == d:
                return c, r, r
    raise InputError(f"cannot view inputs of size {d} as square images; pass image_shape")


def _pseudo_gaussian(rows, cols):
    delta = np.zeros((rows, cols))
    rc, cc = rows // 2 + 1, cols // 2 + 1
    r0, c0 = rc - 1, cc - 1
    for k in range(max(rc, cc)):
        delta[max(r0, 0) : min(r0 + 2 * k + 1, rows), max(c0, 0) : min(c0 + 2 * k + 1, cols)] += 1.0 / (k + 1) ** 2
        r0 -= 1
        c0 -= 1
    return delta / np.sqrt(np.sum(delta**2))


def bump_pattern(s, transpose=False):
    """Two adjacent opposite-sign bumps on an ``s x s`` window with unit l2 norm."""
    delta = np.zeros((s, s))
    delta[: s // 2] = _pseudo_gaussian(s // 2, s)
    delta[s // 2 :] = -_pseudo_gaussian(s - s // 2, s)
    delta /= np.sqrt(np.sum(delta**2))
    return delta.T if transpose else delta


class _Stream:
    """Per-example random numbers for the proposals, pre-drawn in blocks."""

    def __init__(self, gens, c):
        self.gens = gens
        self.c = c
        self.block = -1

    def at(self, i, rows):
        blk = i // _CHUNK
        if blk != self.block:
            self.block = blk
            draws = [
                (g.random((_CHUNK, 4)), g.choice((-1.0, 1.0), size=(_CHUNK, self.c)), g.random(_CHUNK))
                for g in self.gens
            ]
            self.pos = np.stack([d[0] for d in draws])
            self.sign = np.stack([d[1] for d in draws])
            self.coin = np.stack([d[2] for d in draws])
        j = i % _CHUNK
        return self.pos[rows, j], self.sign[rows, j], self.coin[rows, j]


def _offsets(u, span):
    return np.minimum((u * span).astype(np.int64), span - 1)


def _window_index(rows, c, oh, ow, s):
    hh = oh[:, None] + np.arange(s)
    ww = ow[:, None] + np.arange(s)
    return (
        rows[:, None, None, None],
        np.arange(c)[None, :, None, None],
        hh[:, None, :, None],
        ww[:, None, None, :],
    )


def square_attack(model, x_orig, y, tm, cfg=None, indices=None, trace=None):
    """Minimise the margin ``z_y - max_{i != y} z_i`` by random search.

    A proposal is accepted only if it strictly lowers the margin (averaged
    over ``avg_samples`` forward passes for stochastic models, with the
    current best re-evaluated on fresh draws at each comparison). The search
    stops for an example as soon as it is misclassified. ``queries_used``
    counts evaluated points, the initial perturbation being query 1; each
    costs ``avg_samples`` forward passes.
    """
    cfg = cfg or SquareConfig()
    model = model if isinstance(model, ForwardOnly) else ForwardOnly(model)
    x_orig = np.asarray(x_orig, dtype=np.float64)
    if x_orig.ndim != 2 or x_orig.shape[1] != model.input_dim:
        raise InputError(f"inputs must have shape (B, {model.input_dim})")
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if len(y) != len(x_orig):
        raise InputError("one label per input required")
    if not np.all(is_feasible(x_orig, x_orig, tm)):
        raise InputError("x_orig must lie in the input box")
    c, h, w = image_shape_for(x_orig.shape[1], cfg.image_shape)
    if tm.norm == "L2" and min(h, w) < 3:
        raise InputError("l2 square proposals need images of side at least 3")
    b = len(x_orig)
    indices = np.arange(b) if indices is None else np.asarray(indices)
    gens = example_rngs(cfg.seed, indices, 0, 0)
    spare = example_rngs(cfg.seed, indices, 0, 3)
    noise = example_rngs(cfg.seed, indices, 0, 2) if model.stochastic else None
    passes = cfg.avg_samples if model.stochastic else 1

    def evaluate(x, rows):
        rngs = None if noise is None else [noise[r] for r in rows]
        z = model.forward(x, rngs)
        for _ in range(passes - 1):
            z = z + model.forward(x, rngs)
        if passes > 1:
            z = z / passes
        return margin(z, y[rows]), np.argmax(z, axis=1) != y[rows]

    img = x_orig.reshape(b, c, h, w)
    all_rows = np.arange(b)
    m_best, done = evaluate(x_orig, all_rows)
    queries = np.zeros(b, dtype=np.int64)
    first = np.where(done, 0, -1)
    x_best = x_orig.copy()

    active = np.flatnonzero(~done)
    if active.size:
        x0 = _initial_point(img[active], tm, [gens[r] for r in active], c, h, w).reshape(len(active), -1)
        x0 = project(x_orig[active], x0, tm)
        m0, hit0 = evaluate(x0, active)
        x_best[active] = x0
        m_best[active] = m0
        queries[active] = 1
        done[active] = hit0
        first[active[hit0]] = 1
        if trace is not None:
            trace.margin.append(m_best[active].copy())
            trace.accepted.append(np.ones(len(active), dtype=bool))
            trace.rows.append(active)
            if trace.proposals is not None:
                trace.proposals.append(x0.copy())

    stream = _Stream(gens, c)
    for i in range(cfg.n_queries - 1):
        rows = np.flatnonzero(~done)
        if rows.size == 0:
            break
        pos, sign, coin = stream.at(i, rows)
        p = p_schedule(i, cfg.p_init)
        xo = x_orig[rows]
        if tm.norm == "Linf":
            prop = _linf_proposal(img[rows], x_best[rows].reshape(-1, c, h, w), tm, p, pos, sign,
                                  [spare[r] for r in rows], c, h, w)
        else:
            prop = _l2_proposal(img[rows], x_best[rows].reshape(-1, c, h, w), tm, p, pos, sign, coin, c, h, w)
        prop = project(xo, prop.reshape(len(rows), -1), tm)
        m_new, hit = evaluate(prop, rows)
        if model.stochastic and passes > 1:
            m_cur, _ = evaluate(x_best[rows], rows)
        else:
            m_cur = m_best[rows]
        accept = m_new < m_cur
        m_best[rows] = np.where(accept, m_new, m_cur)
        x_best[rows[accept]] = prop[accept]
        queries[rows] += 1
        won = accept & hit
        done[rows[won]] = True
        first[rows[won]] = queries[rows[won]]
        if trace is not None:
            trace.margin.append(m_best[rows].copy())
            trace.accepted.append(accept)
            trace.rows.append(rows)
            if trace.proposals is not None:
                trace.proposals.append(prop.copy())

    iters = np.maximum(queries - 1, 0)
    return AttackOutcome(done, x_best, m_best, iters, queries, first)


def _initial_point(img, tm, gens, c, h, w):
    n = len(img)
    if tm.norm == "Linf":
        stripes = np.stack([g.choice((-tm.eps, tm.eps), size=(c, 1, w)) for g in gens])
        return np.clip(img + stripes, tm.lower, tm.upper)
    delta = np.zeros((n, c, h, w))
    s = h // 5
    if s == 0:
        signs = np.stack([g.choice((-1.0, 1.0), size=(c, h, w)) for g in gens])
        delta = signs
    else:
        start = (h - 5 * s) // 2
        signs = np.stack([g.choice((-1.0, 1.0), size=(h // s, w // s, c)) for g in gens])
        bump = bump_pattern(s)
        for a in range(h // s):
            for bcol in range(w // s):
                r0, c0 = start + a * s, start + bcol * s
                if r0 + s > h or c0 + s > w:
                    continue
                delta[:, :, r0 : r0 + s, c0 : c0 + s] += bump * signs[:, a, bcol, :, None, None]
    norms = np.sqrt(np.sum(delta**2, axis=(1, 2, 3), keepdims=True))
    return np.clip(img + delta / np.maximum(norms, 1e-12) * tm.eps, tm.lower, tm.upper)


def _linf_proposal(img, cur, tm, p, pos, sign, spare, c, h, w):
    n = len(img)
    s = int(np.floor(np.sqrt(p * h * w)))
    s = min(max(s, 1), min(h, w))
    oh = _offsets(pos[:, 0], h - s + 1)
    ow = _offsets(pos[:, 1], w - s + 1)
    idx = _window_index(np.arange(n), c, oh, ow, s)
    base = img[idx]
    old = cur[idx]
    signs = sign.copy()

    def window(sg):
        return np.clip(base + tm.eps * sg[:, :, None, None], tm.lower, tm.upper)

    new = window(signs)
    same = np.all((new == old).reshape(n, -1), axis=1)
    for _ in range(_MAX_RESAMPLE):
        if not same.any():
            break
        for r in np.flatnonzero(same):
            signs[r] = spare[r].choice((-1.0, 1.0), size=c)
        new = window(signs)
        same = np.all((new == old).reshape(n, -1), axis=1)
    out = cur.copy()
    out[idx] = new
    return out


def _l2_proposal(img, cur, tm, p, pos, sign, coin, c, h, w):
    n = len(img)
    s = max(int(round(np.sqrt(p * h * w))), 3)
    if s % 2 == 0:
        s += 1
    s = min(s, min(h, w))
    oh1 = _offsets(pos[:, 0], h - s + 1)
    ow1 = _offsets(pos[:, 1], w - s + 1)
    oh2 = _offsets(pos[:, 2], h - s + 1)
    ow2 = _offsets(pos[:, 3], w - s + 1)
    rows = np.arange(n)
    idx1 = _window_index(rows, c, oh1, ow1, s)
    idx2 = _window_index(rows, c, oh2, ow2, s)
    delta = cur - img

    mask = np.zeros_like(delta, dtype=bool)
    mask[idx1] = True
    mask[idx2] = True
    norm_image = np.sqrt(np.sum(delta**2, axis=(1, 2, 3)))[:, None, None, None]
    norm_windows = np.sqrt(np.sum((delta * mask) ** 2, axis=(2, 3), keepdims=True))
    old = delta[idx1]
    norm_w1 = np.sqrt(np.sum(old**2, axis=(2, 3), keepdims=True))

    bumps = np.stack([bump_pattern(s, transpose=cc > 0.5) for cc in coin])
    new = bumps[:, None] * sign[:, :, None, None] + old / (1e-10 + norm_w1)
    new_norm = np.sqrt(np.sum(new**2, axis=(2, 3), keepdims=True))
    budget = np.sqrt(np.maximum(tm.eps**2 - norm_image**2, 0.0) / c + norm_windows**2)
    new = new / np.maximum(new_norm, 1e-12) * budget

    delta[idx2] = 0.0
    delta[idx1] = new
    total = np.sqrt(np.sum(delta**2, axis=(1, 2, 3), keepdims=True))
    out = img + delta / np.maximum(total, 1e-12) * tm.eps
    return np.clip(out, tm.lower, tm.upper)
