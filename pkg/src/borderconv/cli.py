"""Command-line entry point: ``borderconv <subcommand> ...``.

Every subcommand exits 0 on success.  Failures print one JSON object
``{"error": <kind>, "message": <text>}`` to stderr and exit 2 for bad input
(config, shapes, files) or 1 for anything that went wrong while running.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .coverage import coverage_2d, network_coverage
from .errors import BorderConvError, ConfigError, FormatError, TrainingDivergedError
from .experiments import (MODES, RUNNERS, load_report, make_config, report_emit,
                          run_consistency)
from .nn import (ARCHITECTURES, Model, SgdConfig, accuracy, load_model, quadrant_net,
                 redgreen_net, save_model, train, write_history_csv)
from .synthdata import gen_quadrant, gen_red_green, load_dataset, save_dataset

log = logging.getLogger("borderconv")

TRAIN_DEFAULTS = {"arch": "quadrant", "boundary": "same", "pad": "zero", "lr": 0.01,
                  "momentum": 0.9, "epochs": 30, "batch": 32}


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config JSON must be an object")
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# -- subcommands ------------------------------------------------------------

def cmd_gen_data(args, cfg):
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    task = args.task or cfg.get("task", "quadrant")
    out = _out_dir(args)
    if task == "quadrant":
        border = args.border if args.border is not None else cfg.get("border", 0)
        if isinstance(border, list):
            border = border[0]
        n = args.n or cfg.get("n", 500)
        splits = {name: gen_quadrant(seed, n // 2, border=border, stream=s)
                  for name, s in (("train", 1), ("val", 2), ("test", 3))}
    elif task == "redgreen":
        variant = args.variant or cfg.get("variant", "similar")
        splits = gen_red_green(seed, variant=variant)
    else:
        raise ConfigError(f"unknown task {task!r}")
    written = {name: str(save_dataset(ds, out / name)) for name, ds in splits.items()}
    _print_json({"task": task, "seed": seed, "splits": written,
                 "sizes": {k: len(v) for k, v in splits.items()}})


def cmd_coverage(args, cfg):
    boundary = args.boundary or cfg.get("boundary", "same")
    pad = args.pad or cfg.get("pad", "zero")
    h = args.height or args.size
    w = args.width or args.size
    if args.arch:
        spec = _arch(args.arch, boundary, pad)
        net = network_coverage(spec, (h, w))
        counts = net.layers[-1].counts
        summary = net.summary()
    else:
        cmap = coverage_2d(h, w, args.k, args.k, boundary, pad)
        counts = cmap.counts
        summary = {"plateau": int(cmap.plateau),
                   "boundary_reach": network_coverage(_single_layer(args.k, boundary, pad),
                                                      (h, w)).boundary_reach,
                   "receptive_field": 2 * args.k + 1}
    out = _out_dir(args)
    with open(out / "coverage.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["position_h", "position_w", "count"])
        for i in range(counts.shape[0]):
            for j in range(counts.shape[1]):
                wr.writerow([i + 1, j + 1, int(counts[i, j])])
    (out / "coverage_summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    if args.figures:
        from .plotting import plot_coverage

        plot_coverage(counts, out / "coverage.png", f"{boundary}+{pad}")
    _print_json(summary)


def _single_layer(k, boundary, pad):
    from .convops import ConvSpec
    from .nn import Conv, GlobalMaxPool, Logits1x1, NetworkSpec

    return NetworkSpec((Conv(ConvSpec.square(boundary, pad, k, 1), 1, 1), Logits1x1(1, 1),
                        GlobalMaxPool()))


def _arch(name, boundary, pad, **kw):
    if name not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}")
    return ARCHITECTURES[name](boundary, pad, **kw)


def cmd_train(args, cfg):
    cfg = dict(TRAIN_DEFAULTS, **{k: v for k, v in cfg.items() if k in TRAIN_DEFAULTS})
    for key in ("arch", "boundary", "pad", "lr", "epochs", "batch"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    seed = args.seed if args.seed is not None else 0
    data = Path(args.data)
    tr, va = load_dataset(data / "train"), load_dataset(data / "val")
    spec = _arch(cfg["arch"], cfg["boundary"], cfg["pad"], in_channels=tr.images.shape[1])
    model = Model.init(spec, seed)
    sgd = SgdConfig(cfg["lr"], cfg["momentum"], cfg["epochs"], cfg["batch"], seed)
    best, history = train(model, tr.images, tr.labels, sgd, va.images, va.labels)
    out = _out_dir(args)
    save_model(best, out / "model.ckpt")
    write_history_csv(history, out / "history.csv")
    _print_json({"model": str(out / "model.ckpt"), "history": str(out / "history.csv"),
                 "best_val_acc": max(h.val_acc for h in history)})


def cmd_eval(args, cfg):
    model = load_model(args.model)
    ds = load_dataset(args.data)
    _print_json({"n": len(ds), "accuracy": 100.0 * accuracy(model, ds.images, ds.labels)})


def cmd_consistency(args, cfg):
    model = load_model(args.model)
    ds = load_dataset(args.data)
    shift = args.shift_range if args.shift_range is not None else cfg.get("shift_range", 8)
    seed = args.seed if args.seed is not None else 0
    res = run_consistency(model, ds, shift, args.pairs, seed)
    _print_json(res)


def cmd_exp(args, cfg):
    overrides = dict(cfg)
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    report = RUNNERS[args.experiment](overrides, threads=args.threads)
    paths = report_emit(report, _out_dir(args), figures=args.figures)
    sys.stdout.write(_summary_text(report))
    log.info("wrote %s", ", ".join(str(p) for p in paths))


def cmd_report(args, cfg):
    report = load_report(args.input)
    if args.out:
        report_emit(report, _out_dir(args), figures=args.figures)
    sys.stdout.write(_summary_text(report))


def _summary_text(report) -> str:
    from .experiments import _csv_text

    return _csv_text(report.aggregate)


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for data, init and sampling")
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for repeats")
    common.add_argument("-v", "--verbose", action="store_true")

    # global flags live on each subcommand so they can follow it on the command line
    p = argparse.ArgumentParser(prog="borderconv",
                                description="Boundary handling and absolute position in CNNs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--task", choices=["quadrant", "redgreen"])
    g.add_argument("--variant", choices=["similar", "dissimilar"])
    g.add_argument("--border", type=int)
    g.add_argument("--n", type=int, help="images per quadrant split")
    g.set_defaults(fn=cmd_gen_data)

    c = sub.add_parser("coverage", parents=[common], help="per-position coverage counts")
    c.add_argument("--size", type=int, default=32)
    c.add_argument("--height", type=int)
    c.add_argument("--width", type=int)
    c.add_argument("--k", type=int, default=1, help="kernel half-width")
    c.add_argument("--boundary", choices=["valid", "same", "full"])
    c.add_argument("--pad", choices=["zero", "circular"])
    c.add_argument("--arch", help="compose through a named network instead of one layer")
    c.add_argument("--no-figures", dest="figures", action="store_false")
    c.set_defaults(fn=cmd_coverage)

    t = sub.add_parser("train", parents=[common], help="train one model on a gen-data directory")
    t.add_argument("--data", required=True)
    t.add_argument("--arch", choices=sorted(ARCHITECTURES))
    t.add_argument("--boundary", choices=["valid", "same", "full"])
    t.add_argument("--pad", choices=["zero", "circular"])
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="accuracy of a checkpoint on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("consistency", parents=[common], help="diagonal-shift consistency")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--shift-range", type=int)
    s.add_argument("--pairs", type=int, default=5)
    s.set_defaults(fn=cmd_consistency)

    x = sub.add_parser("exp", parents=[common], help="run an experiment and write its report")
    x.add_argument("experiment", choices=sorted(RUNNERS))
    x.add_argument("--no-figures", dest="figures", action="store_false")
    x.set_defaults(fn=cmd_exp)

    r = sub.add_parser("report", parents=[common], help="reload a report and print its summary")
    r.add_argument("input", help="report .json or *_repeats.csv")
    r.add_argument("--no-figures", dest="figures", action="store_false")
    r.set_defaults(fn=cmd_report, out=None)
    return p


def _fail(kind: str, exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc)}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        args.fn(args, cfg)
    except TrainingDivergedError as exc:
        return _fail("training_diverged", exc, 1)
    except (FormatError, ConfigError) as exc:
        return _fail(type(exc).__name__, exc, 2)
    except (BorderConvError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, exc, 2)
    except OSError as exc:
        return _fail("io_error", exc, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
