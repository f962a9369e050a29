"""The AutoAttack ensemble: a fixed set of complementary attacks with worst-case aggregation.

Every attack is run on every clean-correct point, which yields each
attack's stand-alone robust accuracy. A point counts as broken if any attack
breaks it, and its breaking attack is the first one in cascade order that
did. Broken points are re-verified by a fresh forward pass and a feasibility
check before they count.
"""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ._parallel import map_chunks
from .apgd import ApgdConfig, AttackOutcome, apgd_run, example_rngs
from .errors import InputError
from .fab import FabConfig, fab_t_multi, target_classes
from .square import SquareConfig, square_attack
from .threat import distance, is_feasible

log = logging.getLogger(__name__)

STANDARD_ATTACKS = ("apgd-ce", "apgd-t", "fab-t", "square")
RANDOMIZED_ATTACKS = ("apgd-ce", "apgd-dlr", "square")
ALL_ATTACKS = ("apgd-ce", "apgd-t", "apgd-dlr", "fab-t", "square")

# fixed per-attack seed offsets keep each attack's randomness independent of its position in the cascade
_SEED_OFFSET = {"apgd-ce": 0, "apgd-t": 1, "apgd-dlr": 2, "fab-t": 3, "square": 4}


@dataclass
class EnsembleConfig:
    mode: str = "standard"
    attacks: tuple = None
    apgd_iter: int = 100
    n_target_classes: int = 9
    fab_iter: int = 100
    square_queries: int = 5000
    square_p_init: float = 0.8
    eot_samples: int = 20
    rand_square_queries: int = 1000
    avg_samples: int = 20
    eval_repeats: int = 5
    seed: int = 0
    chunk_size: int = 64
    image_shape: tuple = None

    def __post_init__(self):
        if self.mode not in ("standard", "randomized"):
            raise InputError(f"unknown mode {self.mode!r}")
        if self.attacks is None:
            self.attacks = STANDARD_ATTACKS if self.mode == "standard" else RANDOMIZED_ATTACKS
        self.attacks = tuple(self.attacks)
        unknown = set(self.attacks) - set(ALL_ATTACKS)
        if unknown or not self.attacks or len(set(self.attacks)) != len(self.attacks):
            raise InputError(f"attack list must name distinct attacks from {ALL_ATTACKS}")
        if self.chunk_size < 1 or self.eval_repeats < 1:
            raise InputError("chunk_size and eval_repeats must be positive")


@dataclass
class EvaluationReport:
    """Accuracies are fractions of all evaluated points.

    ``records`` hold one dict per point and are enough to recompute every
    accuracy. ``x_adv`` has the stored adversarial input for broken points
    and the clean input otherwise. In randomized mode the ``*_std`` fields
    carry the spread over the evaluation repeats.
    """

    mode: str
    norm: str
    eps: float
    attacks: list
    clean_accuracy: float
    robust_accuracy: dict
    combined_robust_accuracy: float
    records: list
    x_adv: np.ndarray
    runtimes: dict = field(default_factory=dict)
    substitutions: list = field(default_factory=list)
    clean_accuracy_std: float = 0.0
    robust_accuracy_std: dict = field(default_factory=dict)
    combined_robust_accuracy_std: float = 0.0
    run_accuracies: list = field(default_factory=list)

    @property
    def n_points(self):
        return len(self.records)


def _concat(outcomes):
    return AttackOutcome(*(np.concatenate([getattr(o, f) for o in outcomes]) for f in (
        "success", "x_adv", "f_best", "iterations_used", "queries_used", "first_success_iteration", "aborted")))


def _run_attack(name, model, x, y, idx, tm, cfg, substitutions):
    """One attack over the points ``idx`` in fixed chunks. Returns an AttackOutcome for those points."""
    k = model.num_classes
    seed = cfg.seed + _SEED_OFFSET[name]
    eot = cfg.eot_samples if cfg.mode == "randomized" else 1

    if name == "apgd-t" and k < 4:
        loss = "dlr" if k >= 3 else "cw"
        substitutions.append(f"apgd-t replaced by untargeted apgd-{loss} with 5 restarts (K={k})")

    def chunk(ids):
        xs, ys = x[ids], y[ids]
        if name == "apgd-ce":
            return apgd_run(model, xs, ys, tm, ApgdConfig(n_iter=cfg.apgd_iter, loss="ce", eot_samples=eot, seed=seed), indices=ids)
        if name == "apgd-dlr":
            loss = "dlr" if k >= 3 else "cw"
            return apgd_run(model, xs, ys, tm, ApgdConfig(n_iter=cfg.apgd_iter, loss=loss, eot_samples=eot, seed=seed), indices=ids)
        if name == "apgd-t":
            if k < 4:
                loss = "dlr" if k >= 3 else "cw"
                c = ApgdConfig(n_iter=cfg.apgd_iter, loss=loss, n_restarts=5, init="random", seed=seed)
                return apgd_run(model, xs, ys, tm, c, indices=ids)
            return _apgd_targeted(model, xs, ys, tm, cfg, seed, ids)
        if name == "fab-t":
            return fab_t_multi(model, xs, ys, tm, FabConfig(n_iter=cfg.fab_iter, n_targets=cfg.n_target_classes, seed=seed), indices=ids)
        if name == "square":
            if cfg.mode == "randomized":
                c = SquareConfig(n_queries=cfg.rand_square_queries, p_init=cfg.square_p_init,
                                 avg_samples=cfg.avg_samples, seed=seed, image_shape=cfg.image_shape)
            else:
                c = SquareConfig(n_queries=cfg.square_queries, p_init=cfg.square_p_init, seed=seed,
                                 image_shape=cfg.image_shape)
            return square_attack(model, xs, ys, tm, c, indices=ids)
        raise InputError(f"unknown attack {name!r}")

    return _concat(map_chunks(chunk, idx, cfg.chunk_size))


def _apgd_targeted(model, x, y, tm, cfg, seed, ids):
    targets = target_classes(model.forward(x), y, cfg.n_target_classes)
    result = None
    for j in range(targets.shape[1]):
        c = ApgdConfig(n_iter=cfg.apgd_iter, loss="dlr-targeted", seed=seed + 1000 * j)
        out = apgd_run(model, x, y, tm, c, target=targets[:, j], indices=ids)
        # success still means leaving the true class; the target only shapes the loss
        out.success = model.predict(out.x_adv) != y
        if result is None:
            result = out
            continue
        take = out.success & ~result.success
        keep_best = ~result.success & ~out.success & (out.f_best > result.f_best)
        upd = take | keep_best
        result.x_adv[upd] = out.x_adv[upd]
        result.f_best = np.where(upd, out.f_best, result.f_best)
        result.first_success_iteration = np.where(
            take, out.first_success_iteration + j * cfg.apgd_iter, result.first_success_iteration)
        result.success = result.success | out.success
        result.iterations_used = result.iterations_used + out.iterations_used
        result.queries_used = result.queries_used + out.queries_used
    return result


def _validate(model, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if len(x) == 0:
        raise InputError("refusing to evaluate zero points")
    x = model.check_inputs(x)
    if len(y) != len(x):
        raise InputError("one label per input required")
    if np.any((y < 0) | (y >= model.num_classes)):
        raise InputError(f"labels must lie in [0, {model.num_classes})")
    return x, y


def run_autoattack(model, x, y, tm, cfg=None):
    """Standard-mode ensemble evaluation of ``model`` on ``(x, y)``."""
    cfg = cfg or EnsembleConfig()
    x, y = _validate(model, x, y)
    if model.stochastic:
        log.warning("standard mode on a stochastic model; consider the randomized mode")
    n = len(x)
    clean_pred = np.concatenate(map_chunks(lambda ids: model.predict(x[ids]), np.arange(n), cfg.chunk_size))
    correct = clean_pred == y
    idx = np.flatnonzero(correct)

    broken = {}
    adv = {}
    runtimes = {}
    substitutions = []
    for name in cfg.attacks:
        start = time.perf_counter()
        hit = np.zeros(n, dtype=bool)
        xa = x.copy()
        if idx.size:
            out = _run_attack(name, model, x, y, idx, tm, cfg, substitutions)
            ok = out.success & _verify(model, x[idx], out.x_adv, y[idx], tm)
            if np.any(out.success & ~ok):
                log.warning("%s: %d reported adversarial example(s) failed re-verification", name, np.sum(out.success & ~ok))
            hit[idx] = ok
            xa[idx[ok]] = out.x_adv[ok]
        broken[name] = hit
        adv[name] = xa
        runtimes[name] = time.perf_counter() - start

    return _assemble(cfg, tm, x, y, clean_pred, correct, broken, adv, runtimes, substitutions)


def _verify(model, x_orig, x_adv, y, tm):
    return (model.predict(x_adv) != y) & is_feasible(x_orig, x_adv, tm)


def _assemble(cfg, tm, x, y, clean_pred, correct, broken, adv, runtimes, substitutions):
    n = len(x)
    names = list(cfg.attacks)
    x_out = x.copy()
    records = []
    any_broken = np.zeros(n, dtype=bool)
    for i in range(n):
        by = next((a for a in names if broken[a][i]), None)
        rec = {
            "index": i,
            "label": int(y[i]),
            "clean_prediction": int(clean_pred[i]),
            "clean_correct": bool(correct[i]),
            "broken_by": by,
            "attacks": {a: bool(broken[a][i]) for a in names},
            "perturbation_norm": None,
        }
        if by is not None:
            x_out[i] = adv[by][i]
            rec["perturbation_norm"] = float(distance(x[i], x_out[i], tm.norm))
            any_broken[i] = True
        records.append(rec)
    robust = {a: float(np.mean(correct & ~broken[a])) for a in names}
    return EvaluationReport(
        mode=cfg.mode, norm=tm.norm, eps=tm.eps, attacks=names,
        clean_accuracy=float(np.mean(correct)), robust_accuracy=robust,
        combined_robust_accuracy=float(np.mean(correct & ~any_broken)), records=records,
        x_adv=x_out, runtimes=runtimes, substitutions=sorted(set(substitutions)),
    )


def run_single_attack(model, x, y, tm, name, cfg=None):
    """Evaluate with one attack only; the combined column then equals that attack's column."""
    cfg = cfg or EnsembleConfig()
    cfg = EnsembleConfig(**{**cfg.__dict__, "attacks": (name,)})
    if cfg.mode == "randomized":
        return run_randomized_mode(model, x, y, tm, cfg)
    return run_autoattack(model, x, y, tm, cfg)


def run_randomized_mode(model, x, y, tm, cfg=None):
    """Ensemble evaluation of a randomized defense.

    Attacks average gradients (APGD) or acceptance decisions (Square) over
    repeated stochastic passes. Every candidate point, the clean input
    included, is then classified ``eval_repeats`` times with fresh
    randomness. Per example the candidate misclassified most often is kept
    (ties go to the earlier candidate) and the robust accuracy is reported
    as mean and standard deviation over the repeats.
    """
    cfg = cfg or EnsembleConfig(mode="randomized")
    if cfg.mode != "randomized":
        cfg = EnsembleConfig(**{**cfg.__dict__, "mode": "randomized", "attacks": None})
    x, y = _validate(model, x, y)
    if not model.stochastic:
        log.warning("randomized mode on a deterministic model; repeats will agree exactly")
    n = len(x)
    idx = np.arange(n)
    reps = cfg.eval_repeats
    names = list(cfg.attacks)

    runtimes = {}
    substitutions = []
    candidates = [x]
    for name in names:
        start = time.perf_counter()
        out = _run_attack(name, model, x, y, idx, tm, cfg, substitutions)
        feasible = is_feasible(x, out.x_adv, tm)
        candidates.append(np.where(feasible[:, None], out.x_adv, x))
        runtimes[name] = time.perf_counter() - start

    # correct[c, r, i]: candidate c of example i classified correctly in repeat r
    correct = np.empty((len(candidates), reps, n), dtype=bool)
    for c, xc in enumerate(candidates):
        for r in range(reps):
            rngs = example_rngs(cfg.seed, idx, 100 + r, 10 + c) if model.stochastic else None
            pred = np.concatenate(map_chunks(
                lambda ids: model.predict(xc[ids], None if rngs is None else [rngs[i] for i in ids]),
                idx, cfg.chunk_size))
            correct[c, r] = pred == y

    miss = (~correct).sum(axis=1)
    clean_runs = _run_stats(correct[0])

    def pick(cands):
        best = np.array(cands)[np.argmax(miss[cands], axis=0)]
        return correct[best, :, idx].T, best

    per_attack = {name: pick([0, j + 1])[0] for j, name in enumerate(names)}
    runs = {name: _run_stats(v) for name, v in per_attack.items()}
    chosen_correct, chosen = pick(list(range(len(candidates))))
    combined_runs = _run_stats(chosen_correct)

    labels = ["clean"] + names
    records = []
    for i in range(n):
        records.append({
            "index": i,
            "label": int(y[i]),
            "clean_correct_runs": [bool(v) for v in correct[0, :, i]],
            "chosen_candidate": labels[chosen[i]],
            "correct_runs": [bool(v) for v in chosen_correct[:, i]],
            "attacks": {a: [bool(v) for v in per_attack[a][:, i]] for a in names},
            "perturbation_norm": float(distance(x[i], candidates[chosen[i]][i], tm.norm)),
        })
    x_out = np.stack([candidates[chosen[i]][i] for i in range(n)]) if n else x.copy()
    return EvaluationReport(
        mode="randomized", norm=tm.norm, eps=tm.eps, attacks=names,
        clean_accuracy=clean_runs[0], robust_accuracy={a: v[0] for a, v in runs.items()},
        combined_robust_accuracy=combined_runs[0], records=records, x_adv=x_out,
        runtimes=runtimes, substitutions=sorted(set(substitutions)),
        clean_accuracy_std=clean_runs[1],
        robust_accuracy_std={a: v[1] for a, v in runs.items()},
        combined_robust_accuracy_std=combined_runs[1],
        run_accuracies=combined_runs[2],
    )


def _run_stats(correct):
    """Mean, std and per-repeat accuracy of a ``(repeats, n)`` correctness table.

    Statistics are taken over integer counts so identical repeats give a spread of exactly zero.
    """
    n = correct.shape[1]
    counts = correct.sum(axis=1)
    return float(counts.mean() / n), float(counts.std() / n), [float(c / n) for c in counts]
