"""Command-line entry point.

Settings come from a flat JSON file (``--config``); any flag given on the
command line overrides the file. Exit codes: 0 success, 2 configuration
error, 3 data or file-format error, 4 attack or internal failure.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .data import load_dataset, mnist_subset, validate_labels
from .ensemble import ALL_ATTACKS, EnsembleConfig, run_autoattack, run_randomized_mode, run_single_attack
from .errors import ConfigError, FormatError, InputError, RobevalError
from .harness import RunConfig, compare_pgd_apgd, emit_report, gradient_masking_diagnostic
from .losses import loss_grad_logits
from .nn import cnn, finite_difference_vjp, load_weights, mlp, save_weights, train_toy
from .threat import ThreatModel

log = logging.getLogger("robeval")

BUNDLED = "bundled"


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def _strs(text):
    return [v for v in text.split(",") if v]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--images", dest="dataset_images", help=f"image file, or '{BUNDLED}' for the packaged MNIST subset")
    common.add_argument("--labels", dest="dataset_labels", help="label file")
    common.add_argument("--format", dest="dataset_format", choices=["mnist_idx", "raw_tensor"])
    common.add_argument("--model", help="weight file")
    common.add_argument("--norm", choices=["linf", "l2", "Linf", "L2"])
    common.add_argument("--eps", type=float)
    common.add_argument("--subset", type=int, help="evaluate the first N points only")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="robeval", description="Adversarial robustness evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="full attack ensemble")
    p.add_argument("--mode", choices=["standard", "rand"])

    p = sub.add_parser("attack", parents=[common], help="run a single attack")
    p.add_argument("--attack", choices=list(ALL_ATTACKS))
    p.add_argument("--mode", choices=["standard", "rand"])

    p = sub.add_parser("compare", parents=[common], help="PGD versus APGD curves")
    p.add_argument("--budgets", type=_ints, help="comma-separated APGD iteration budgets")
    p.add_argument("--losses", type=_strs, help="comma-separated losses, e.g. ce,dlr")
    p.add_argument("--restarts", type=int)

    p = sub.add_parser("maskdiag", parents=[common], help="logit-scale gradient masking sweep")
    p.add_argument("--scales", type=_floats, help="comma-separated logit scales")

    p = sub.add_parser("train", parents=[common], help="train a reference architecture")
    p.add_argument("--arch", choices=["mlp", "cnn"])
    p.add_argument("--train-mode", dest="train_mode", choices=["plain", "pgd"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--train-eps", dest="train_eps", type=float)

    p = sub.add_parser("gradcheck", parents=[common], help="compare backprop against finite differences")
    p.add_argument("--points", dest="gradcheck_points", type=int)
    return parser


def _config(args):
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    return RunConfig.load(args.config, overrides)


def _dataset(cfg, split="test"):
    if cfg.dataset_images == BUNDLED:
        x, y = mnist_subset(split)
    else:
        cfg.require("dataset_images", "dataset_labels")
        for p in (cfg.dataset_images, cfg.dataset_labels):
            if not Path(p).is_file():
                raise FormatError("file not found", None, p)
        x, y = load_dataset(cfg.dataset_images, cfg.dataset_labels, cfg.dataset_format)
    if cfg.subset is not None:
        x, y = x[: cfg.subset], y[: cfg.subset]
    if len(x) == 0:
        raise InputError("refusing to evaluate zero points")
    return x, y


def _model(cfg, x, y):
    cfg.require("model")
    if not Path(cfg.model).is_file():
        raise FormatError("file not found", None, cfg.model)
    model = load_weights(cfg.model)
    if model.input_dim != x.shape[1]:
        raise InputError(f"model expects {model.input_dim} inputs, dataset has {x.shape[1]}")
    validate_labels(y, model.num_classes)
    return model


def _ensemble_config(cfg, **extra):
    return EnsembleConfig(
        mode=cfg.mode, apgd_iter=cfg.apgd_iter, n_target_classes=cfg.n_target_classes, fab_iter=cfg.fab_iter,
        square_queries=cfg.square_queries, eot_samples=cfg.eot_samples, avg_samples=cfg.avg_samples,
        rand_square_queries=cfg.rand_square_queries, eval_repeats=cfg.eval_repeats, seed=cfg.seed,
        chunk_size=cfg.chunk_size, image_shape=None if cfg.image_shape is None else tuple(cfg.image_shape), **extra,
    )


def cmd_evaluate(cfg):
    x, y = _dataset(cfg)
    model = _model(cfg, x, y)
    tm = ThreatModel(cfg.norm, cfg.eps)
    ecfg = _ensemble_config(cfg)
    report = run_randomized_mode(model, x, y, tm, ecfg) if cfg.mode == "randomized" else run_autoattack(model, x, y, tm, ecfg)
    emit_report(report, cfg.out)
    print(Path(cfg.out, "report.txt").read_text(), end="")


def cmd_attack(cfg):
    x, y = _dataset(cfg)
    model = _model(cfg, x, y)
    tm = ThreatModel(cfg.norm, cfg.eps)
    report = run_single_attack(model, x, y, tm, cfg.attack, _ensemble_config(cfg))
    emit_report(report, cfg.out)
    print(Path(cfg.out, "report.txt").read_text(), end="")


def cmd_compare(cfg):
    x, y = _dataset(cfg)
    model = _model(cfg, x, y)
    res = compare_pgd_apgd(model, x, y, ThreatModel(cfg.norm, cfg.eps), budgets=cfg.budgets, losses=cfg.losses,
                           out=cfg.out, n_restarts=cfg.restarts, seed=cfg.seed)
    print(Path(cfg.out, "summary.txt").read_text(), end="")
    return res


def cmd_maskdiag(cfg):
    x, y = _dataset(cfg)
    model = _model(cfg, x, y)
    rows = gradient_masking_diagnostic(model, x, y, ThreatModel(cfg.norm, cfg.eps), cfg.scales, out=cfg.out, seed=cfg.seed)
    for r in rows:
        print(f"scale {r['scale']:g}: zero-gradient fraction {r['zero_gradient_fraction']:.4f}, "
              f"APGD-CE {100 * r['apgd_ce_robust_accuracy']:.2f}%, APGD-DLR {100 * r['apgd_dlr_robust_accuracy']:.2f}%")


def cmd_train(cfg):
    x, y = _dataset(cfg, split="train")
    k = int(y.max()) + 1 if len(y) else 10
    k = max(k, 2)
    if cfg.arch == "mlp":
        arch = mlp(x.shape[1], k, seed=cfg.seed)
    else:
        side = int(round(np.sqrt(x.shape[1])))
        if side * side != x.shape[1]:
            raise InputError("the CNN needs square single-channel images")
        arch = cnn((1, side, side), k, seed=cfg.seed)
    model = train_toy(arch, x, y, mode=cfg.train_mode, epochs=cfg.epochs, seed=cfg.seed, batch_size=cfg.batch_size,
                      lr=cfg.lr, eps=cfg.train_eps, steps=cfg.train_steps)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(model, out / "model.aafw")
    acc = float(np.mean(model.predict(x) == y))
    print(f"saved {out / 'model.aafw'} (train accuracy {100 * acc:.2f}%)")


def cmd_gradcheck(cfg, tol=1e-4):
    x, y = _dataset(cfg)
    model = _model(cfg, x, y)
    n = min(cfg.gradcheck_points, len(x))
    xs, ys = x[:n], y[:n]
    losses = ["ce", "cw"] + (["dlr"] if model.num_classes >= 3 else [])
    worst = 0.0
    for loss in losses:
        logits, vjp = model.linearize(xs)
        u = loss_grad_logits(loss, logits, ys)
        g = vjp(u)
        fd, unreliable = finite_difference_vjp(model, xs, u)
        ok = ~unreliable
        err = np.abs(g - fd)[ok]
        rel = float(err.max() / max(np.abs(fd).max(), 1e-12)) if err.size else 0.0
        worst = max(worst, rel)
        print(f"{loss}: max relative error {rel:.3e} over {int(ok.sum())} coordinates ({int(unreliable.sum())} skipped at kinks)")
    if worst > tol:
        raise RobevalError(f"gradient check failed: relative error {worst:.3e} > {tol:g}")


COMMANDS = {
    "evaluate": cmd_evaluate,
    "attack": cmd_attack,
    "compare": cmd_compare,
    "maskdiag": cmd_maskdiag,
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, InputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except RobevalError as exc:
        print(f"attack failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
