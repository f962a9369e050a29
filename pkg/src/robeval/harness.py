"""Experiment drivers and report files.

* :func:`compare_pgd_apgd` writes per-iteration curves of APGD against
  fixed-step PGD with and without momentum.
* :func:`gradient_masking_diagnostic` sweeps a logit scale and measures how
  much of the cross-entropy input gradient becomes exactly zero.
* :func:`emit_report` writes an :class:`~robeval.ensemble.EvaluationReport`
  as a text table, CSV, JSON and an ``AATNv1`` tensor of adversarial inputs.
"""
import csv
import io
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .apgd import ApgdConfig, apgd_run, pgd_fixed_run
from .data import save_tensor
from .errors import ConfigError, InputError
from .losses import loss_grad_logits
from .nn import wrap_scaled
from .threat import canonical_norm


@dataclass
class RunConfig:
    """Flat run configuration; command-line flags override file values."""

    dataset_images: str = None
    dataset_labels: str = None
    dataset_format: str = "mnist_idx"
    model: str = None
    norm: str = "Linf"
    eps: float = 0.3
    mode: str = "standard"
    subset: int = None
    seed: int = 0
    out: str = "out"
    attack: str = "apgd-ce"
    apgd_iter: int = 100
    n_target_classes: int = 9
    fab_iter: int = 100
    square_queries: int = 5000
    eot_samples: int = 20
    avg_samples: int = 20
    rand_square_queries: int = 1000
    eval_repeats: int = 5
    chunk_size: int = 64
    image_shape: list = None
    budgets: list = field(default_factory=lambda: [25, 50, 100, 200, 400, 1000])
    losses: list = field(default_factory=lambda: ["ce"])
    restarts: int = 1
    scales: list = field(default_factory=lambda: [1.0, 10.0, 100.0, 1000.0])
    arch: str = "mlp"
    train_mode: str = "plain"
    epochs: int = 10
    train_eps: float = 0.3
    train_steps: int = 10
    lr: float = 1e-3
    batch_size: int = 64
    gradcheck_points: int = 10

    @classmethod
    def from_dict(cls, raw):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides=None):
        raw = {}
        if path is not None:
            try:
                raw = json.loads(Path(path).read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
            if not isinstance(raw, dict):
                raise ConfigError(f"config {path} must be a JSON object")
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(raw)

    def validate(self):
        try:
            self.norm = canonical_norm(self.norm)
        except InputError as exc:
            raise ConfigError(str(exc)) from None
        if self.mode in ("rand", "randomized"):
            self.mode = "randomized"
        if self.mode not in ("standard", "randomized"):
            raise ConfigError(f"mode must be standard or rand, got {self.mode!r}")
        if not isinstance(self.eps, (int, float)) or not np.isfinite(self.eps) or self.eps < 0:
            raise ConfigError("eps must be a non-negative number")
        if self.subset is not None and self.subset < 1:
            raise ConfigError("subset must be positive")
        if self.dataset_format not in ("mnist_idx", "raw_tensor"):
            raise ConfigError(f"unknown dataset format {self.dataset_format!r}")
        if any(s <= 0 for s in self.scales):
            raise ConfigError("scales must be positive")
        if self.arch not in ("mlp", "cnn") or self.train_mode not in ("plain", "pgd"):
            raise ConfigError("arch must be mlp or cnn and train_mode plain or pgd")

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) in (None, "")]
        if missing:
            raise ConfigError(f"missing required setting(s): {', '.join(missing)}")


# PGD vs APGD --------------------------------------------------------------


def _curves(trace, n_points, attacked, n_iter):
    """Per-iteration mean best loss over attacked points and robust accuracy over all points."""
    best = np.full((n_iter + 1, len(attacked)), -np.inf)
    broken = np.zeros((n_iter + 1, len(attacked)), dtype=bool)
    for run in trace:
        arr = run.arrays()
        best[:, run.rows] = np.maximum(best[:, run.rows], np.maximum.accumulate(arr["loss_max"], axis=0))
        broken[:, run.rows] |= np.logical_or.accumulate(arr["success"], axis=0)
    # a point broken in an earlier restart stays broken for the later ones
    best_loss = best.mean(axis=1) if len(attacked) else np.zeros(n_iter + 1)
    robust = (len(attacked) - broken.sum(axis=1)) / n_points
    return np.maximum.accumulate(best_loss), np.minimum.accumulate(robust)


def _write_curve(path, best_loss, robust):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "best_loss", "robust_accuracy"])
        for k, (l, r) in enumerate(zip(best_loss, robust)):
            w.writerow([k, repr(float(l)), repr(float(r))])


def _step_sizes(eps):
    return {"eps/10": eps / 10, "eps/4": eps / 4, "2eps": 2 * eps}


def compare_pgd_apgd(model, x, y, tm, budgets=(25, 50, 100, 200, 400, 1000), losses=("ce",), out=None,
                     n_restarts=1, baseline_iter=100, seed=0):
    """APGD at several budgets against six fixed-step PGD baselines.

    Baselines are PGD and PGD with momentum at step sizes eps/10, eps/4 and
    2 eps, each with ``baseline_iter`` iterations. Only clean-correct points
    are attacked; robust accuracy is over all points. With ``out`` set, one
    curve CSV per run plus ``summary.csv`` and ``summary.txt`` are written.
    Returns ``{"rows": [...], "curves": {name: (best_loss, robust)}}``.
    """
    x = model.check_inputs(x)
    y = np.asarray(y, dtype=np.int64)
    correct = model.predict(x) == y
    idx = np.flatnonzero(correct)
    xa, ya = x[idx], y[idx]
    n = len(x)

    runs = []
    for loss in losses:
        for step_name, step in _step_sizes(tm.eps).items():
            for mom in (False, True):
                runs.append((loss, f"pgd{'-momentum' if mom else ''}", step_name, baseline_iter,
                             dict(step_size=step, use_momentum=mom)))
        for budget in budgets:
            runs.append((loss, "apgd", "adaptive", budget, None))

    rows, curves = [], {}
    for loss, method, step_name, n_iter, kw in runs:
        trace = []
        if len(idx):
            if kw is None:
                cfg = ApgdConfig(n_iter=n_iter, loss=loss, n_restarts=n_restarts, seed=seed)
                apgd_run(model, xa, ya, tm, cfg, indices=idx, trace=trace)
            else:
                pgd_fixed_run(model, xa, ya, tm, n_iter=n_iter, n_restarts=n_restarts, loss=loss, seed=seed,
                    indices=idx, trace=trace, **kw)
        best_loss, robust = _curves(trace, n, idx, n_iter)
        name = f"{loss}_{method}_{step_name.replace('/', '_')}_{n_iter}"
        curves[name] = (best_loss, robust)
        if out is not None:
            Path(out).mkdir(parents=True, exist_ok=True)
            _write_curve(Path(out) / f"curve_{name}.csv", best_loss, robust)
        rows.append({"loss": loss, "method": method, "step": step_name, "iterations": n_iter,
                     "best_loss": float(best_loss[-1]), "robust_accuracy": float(robust[-1])})

    for loss in losses:
        mine = [r for r in rows if r["loss"] == loss]
        key = lambda r: (r["robust_accuracy"], -r["best_loss"])  # noqa: E731
        best_pgd = min((r for r in mine if r["method"] != "apgd"), key=key)
        best_all = min(mine, key=key)
        for r in mine:
            r["best_pgd"] = r is best_pgd
            r["best_overall"] = r is best_all
    if out is not None:
        _write_summary(Path(out), rows)
    return {"rows": rows, "curves": curves}


def _write_summary(out, rows):
    cols = ["loss", "method", "step", "iterations", "best_loss", "robust_accuracy", "best_pgd", "best_overall"]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "best_loss": repr(r["best_loss"]), "robust_accuracy": repr(r["robust_accuracy"])})
    lines = [f"{'loss':<6}{'method':<14}{'step':<10}{'iters':>6}{'best loss':>12}{'robust %':>10}  flags"]
    for r in rows:
        flags = ("best-pgd " if r["best_pgd"] else "") + ("best" if r["best_overall"] else "")
        lines.append(f"{r['loss']:<6}{r['method']:<14}{r['step']:<10}{r['iterations']:>6}"
                     f"{r['best_loss']:>12.4f}{100 * r['robust_accuracy']:>10.2f}  {flags}".rstrip())
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


# logit scaling -------------------------------------------------------------


def zero_gradient_fraction(model, x, y):
    """Fraction of exactly-zero entries of the input gradient of the CE loss."""
    logits, vjp = model.linearize(x)
    g = vjp(loss_grad_logits("ce", logits, y))
    return float(np.mean(g == 0.0)) if g.size else 0.0


def gradient_masking_diagnostic(model, x, y, tm, scales=(1.0, 10.0, 100.0, 1000.0), out=None, n_iter=100, seed=0):
    """Sweep logits multiplied by each scale; measure gradient sparsity and APGD robust accuracy.

    Returns a list of rows with the zero-gradient fraction (over correctly
    classified points), APGD-CE and APGD-DLR robust accuracy, and the
    per-example APGD-DLR success flags. With ``out`` set the rows go to
    ``maskdiag.csv``.
    """
    if any(s <= 0 for s in scales):
        raise InputError("scales must be positive")
    x = model.check_inputs(x)
    y = np.asarray(y, dtype=np.int64)
    correct = model.predict(x) == y
    idx = np.flatnonzero(correct)
    n = len(x)
    rows = []
    for s in scales:
        scaled = wrap_scaled(model, s)
        row = {"scale": float(s), "zero_gradient_fraction": 0.0,
               "apgd_ce_robust_accuracy": 0.0, "apgd_dlr_robust_accuracy": 0.0, "dlr_success": np.zeros(0, bool)}
        if len(idx):
            row["zero_gradient_fraction"] = zero_gradient_fraction(scaled, x[idx], y[idx])
            for loss in ("ce", "dlr"):
                o = apgd_run(scaled, x[idx], y[idx], tm, ApgdConfig(n_iter=n_iter, loss=loss, seed=seed), indices=idx)
                row[f"apgd_{loss}_robust_accuracy"] = float((len(idx) - o.success.sum()) / n)
                if loss == "dlr":
                    row["dlr_success"] = o.success
        rows.append(row)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        with open(Path(out) / "maskdiag.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scale", "zero_gradient_fraction", "apgd_ce_robust_accuracy", "apgd_dlr_robust_accuracy"])
            for r in rows:
                w.writerow([repr(r["scale"]), repr(r["zero_gradient_fraction"]),
                            repr(r["apgd_ce_robust_accuracy"]), repr(r["apgd_dlr_robust_accuracy"])])
    return rows


# reports -------------------------------------------------------------------


def report_rows(report):
    """``(name, accuracy, std)`` rows shared by every output format."""
    rows = [("clean", report.clean_accuracy, report.clean_accuracy_std)]
    rows += [(a, report.robust_accuracy[a], report.robust_accuracy_std.get(a, 0.0)) for a in report.attacks]
    rows.append(("combined", report.combined_robust_accuracy, report.combined_robust_accuracy_std))
    return rows


def report_json(report):
    doc = {
        "mode": report.mode,
        "norm": report.norm,
        "eps": report.eps,
        "n_points": report.n_points,
        "attacks": list(report.attacks),
        "substitutions": list(report.substitutions),
        "clean_accuracy": report.clean_accuracy,
        "robust_accuracy": dict(report.robust_accuracy),
        "combined_robust_accuracy": report.combined_robust_accuracy,
        "records": report.records,
    }
    if report.mode == "randomized":
        doc["clean_accuracy_std"] = report.clean_accuracy_std
        doc["robust_accuracy_std"] = dict(report.robust_accuracy_std)
        doc["combined_robust_accuracy_std"] = report.combined_robust_accuracy_std
        doc["run_accuracies"] = list(report.run_accuracies)
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def report_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "accuracy", "std"])
    for name, acc, std in report_rows(report):
        w.writerow([name, repr(float(acc)), repr(float(std))])
    return buf.getvalue()


def report_table(report):
    lines = [f"mode {report.mode}, {report.norm} eps={report.eps:g}, {report.n_points} points"]
    for s in report.substitutions:
        lines.append(f"note: {s}")
    randomized = report.mode == "randomized"
    for name, acc, std in report_rows(report):
        extra = f" +- {100 * std:.2f}" if randomized else ""
        lines.append(f"{name:<12}{100 * acc:>8.2f}%{extra}")
    return "\n".join(lines) + "\n"


def emit_report(report, out):
    """Write ``report.txt``, ``report.csv``, ``report.json``, ``adversarial.aatn`` and ``timing.json``.

    Wall-clock times live only in ``timing.json`` so the other files are
    reproducible byte for byte.
    """
    if report.n_points == 0:
        raise InputError("refusing to write a report for zero points")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report_table(report))
    (out / "report.csv").write_text(report_csv(report))
    (out / "report.json").write_text(report_json(report))
    save_tensor(out / "adversarial.aatn", report.x_adv)
    (out / "timing.json").write_text(json.dumps(report.runtimes, indent=1, sort_keys=True) + "\n")
    return {name: out / name for name in ("report.txt", "report.csv", "report.json", "adversarial.aatn", "timing.json")}


def recompute_accuracies(doc):
    """Accuracies implied by the per-example records of a standard-mode JSON report."""
    recs = doc["records"]
    n = len(recs)
    clean = sum(r["clean_correct"] for r in recs) / n
    per = {a: sum(r["clean_correct"] and not r["attacks"][a] for r in recs) / n for a in doc["attacks"]}
    combined = sum(r["clean_correct"] and r["broken_by"] is None for r in recs) / n
    return clean, per, combined


__all__ = [
    "RunConfig",
    "compare_pgd_apgd",
    "emit_report",
    "gradient_masking_diagnostic",
    "recompute_accuracies",
    "report_csv",
    "report_json",
    "report_table",
    "zero_gradient_fraction",
]
