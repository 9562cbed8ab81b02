"""Experiment runners and their reports.

Each runner takes a plain config dict (defaults below, overridable from a
JSON file), trains one model per (condition, seed) job and returns an
:class:`ExperimentReport` holding per-repeat rows and a mean / sample-stddev
aggregate per condition.  Reports are a pure function of their config, so the
emitted CSV/JSON files are byte-identical across re-runs; wall-clock time is
kept out of them and written to a separate timing file.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .coverage import network_coverage
from .errors import ConfigError, CorruptFileError
from .nn import (Model, SgdConfig, accuracy, predict, quadrant_net, redgreen_net, save_model,
                 train)
from .synthdata import LabeledDataset, gen_quadrant, gen_red_green
from .tensor import Rng, derive_stream

log = logging.getLogger(__name__)

MODES = {
    "valid": ("valid", "zero"),
    "same+zero": ("same", "zero"),
    "same+circular": ("same", "circular"),
    "full+zero": ("full", "zero"),
}

# accuracies (percent) reported for the 4-layer net on the Red-Green data
PAPER_TABLE1 = {
    "valid": {"similar": 100.0, "dissimilar": 0.2},
    "same+zero": {"similar": 99.8, "dissimilar": 8.4},
    "same+circular": {"similar": 73.7, "dissimilar": 73.7},
    "full+zero": {"similar": 89.7, "dissimilar": 89.7},
}

DEFAULTS = {
    "quadrant": {
        "modes": ["same+zero", "full+zero", "same+circular"],
        "seeds": [0], "lr": 0.01, "momentum": 0.9, "epochs": 100, "batch": 32,
        "n_train": 1000, "n_val": 250, "n_test": 250,
        "canvas": 32, "patch": 8, "border": [0], "channels": 3,
    },
    "border": {
        "modes": ["same+zero", "full+zero"],
        "seeds": [0], "lr": 0.01, "momentum": 0.9, "epochs": 10, "batch": 32,
        "n_train": 200, "n_val": 100, "n_test": 100,
        "canvas": 32, "patch": 8, "border": [0, 4, 8, 16, 32], "channels": 3,
    },
    "redgreen": {
        "modes": ["valid", "same+zero", "same+circular", "full+zero"],
        "seeds": list(range(10)), "lr": 0.01, "momentum": 0.9, "epochs": 5, "batch": 64,
        "n_train": 2000, "n_val": 1000, "n_test": 1000, "data_seed": 0,
    },
    "consistency": {
        "shift_range": 8, "pairs_per_image": 5, "n_images": 1000,
    },
}


def make_config(experiment: str, overrides: Optional[dict] = None) -> dict:
    if experiment not in DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    cfg = json.loads(json.dumps(DEFAULTS[experiment]))
    for key, value in (overrides or {}).items():
        if key in ("task", "experiment"):
            continue
        cfg[key] = value
    # single-condition shorthands from the documented config keys
    if "boundary" in cfg:
        b = cfg.pop("boundary")
        p = cfg.pop("pad", "zero")
        cfg["modes"] = ["valid" if b == "valid" else f"{b}+{p}"]
    for mode in cfg.get("modes", []):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; choose from {sorted(MODES)}")
    if isinstance(cfg.get("border"), int):
        cfg["border"] = [cfg["border"]]
    cfg["experiment"] = experiment
    return cfg


# -- report -----------------------------------------------------------------

def _sample_std(values: Sequence[float]) -> float:
    return statistics.stdev(values) if len(values) > 1 else 0.0


def aggregate(rows: List[dict], group_keys: Sequence[str], metric_keys: Sequence[str]) -> List[dict]:
    """Mean and sample stddev of each metric per group, groups in first-seen order."""
    if not rows:
        raise ConfigError("cannot aggregate an empty set of repeats")
    groups: Dict[tuple, List[dict]] = {}
    for r in sorted(rows, key=lambda r: r.get("repeat", 0)):
        groups.setdefault(tuple(r[k] for k in group_keys), []).append(r)
    out = []
    for key, members in groups.items():
        row = dict(zip(group_keys, key))
        row["n"] = len(members)
        for m in metric_keys:
            vals = [float(x[m]) for x in members]
            row[f"{m}_mean"] = statistics.fmean(vals)
            row[f"{m}_std"] = _sample_std(vals)
        out.append(row)
    return out


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    repeats: List[dict]
    group_keys: List[str]
    metric_keys: List[str]
    aggregate: List[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    version: str = __version__
    wall_clock: float = 0.0
    models: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.aggregate:
            self.aggregate = aggregate(self.repeats, self.group_keys, self.metric_keys)

    def summary(self, **match) -> dict:
        for row in self.aggregate:
            if all(row.get(k) == v for k, v in match.items()):
                return row
        raise KeyError(match)

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "version": self.version, "config": self.config,
                "group_keys": self.group_keys, "metric_keys": self.metric_keys,
                "repeats": self.repeats, "aggregate": self.aggregate, "extra": self.extra}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        rep = cls(d["experiment"], d["config"], d["repeats"], d["group_keys"], d["metric_keys"],
                  aggregate=[], extra=d.get("extra", {}), version=d.get("version", ""))
        if not _rows_close(rep.aggregate, d["aggregate"]):
            raise CorruptFileError("stored aggregate does not match the per-repeat rows")
        return rep


def _rows_close(a: List[dict], b: List[dict], tol: float = 1e-12) -> bool:
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if set(x) != set(y):
            return False
        for k in x:
            if isinstance(x[k], float) or isinstance(y[k], float):
                if not math.isclose(float(x[k]), float(y[k]), rel_tol=tol, abs_tol=tol):
                    return False
            elif x[k] != y[k]:
                return False
    return True


def _csv_text(rows: List[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [c for c in r if c not in cols]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in cols])
    return buf.getvalue()


def report_emit(report: ExperimentReport, out_dir, formats=("csv", "json"), figures: bool = True):
    """Write report files into ``out_dir``; returns the list of paths."""
    if not report.repeats:
        raise ConfigError("report has no repeats")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = report.experiment
    paths = []
    if "json" in formats:
        p = out / f"{name}.json"
        # insertion order keeps the CSV column order; it is fixed by the runners
        p.write_text(json.dumps(report.to_dict(), indent=1) + "\n")
        paths.append(p)
    if "csv" in formats:
        for suffix, rows in (("repeats", report.repeats), ("summary", report.aggregate)):
            p = out / f"{name}_{suffix}.csv"
            p.write_text(_csv_text(rows))
            paths.append(p)
    if figures:
        from .plotting import plot_report

        paths += plot_report(report, out)
    timing = out / f"{name}_timing.json"
    timing.write_text(json.dumps({"wall_clock_seconds": report.wall_clock}) + "\n")
    return paths


def load_report(path) -> ExperimentReport:
    """Load a JSON report, or a ``*_repeats.csv`` next to its ``*_summary.csv``."""
    path = Path(path)
    if path.suffix == ".json":
        return ExperimentReport.from_dict(json.loads(path.read_text()))
    stem = path.name[: -len("_repeats.csv")] if path.name.endswith("_repeats.csv") else None
    if stem is None:
        raise ConfigError("CSV reports are loaded from their *_repeats.csv file")
    meta = json.loads((path.parent / f"{stem}.json").read_text()) \
        if (path.parent / f"{stem}.json").exists() else None
    repeats = _read_csv(path)
    summary = _read_csv(path.parent / f"{stem}_summary.csv")
    if meta is None:
        raise ConfigError("CSV reports need their JSON sidecar for the column roles")
    d = dict(meta, repeats=repeats, aggregate=summary)
    return ExperimentReport.from_dict(d)


def _parse_cell(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _read_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# -- job execution ----------------------------------------------------------

def _run_jobs(fn: Callable, jobs: List[dict], threads: int = 1) -> List:
    """Run ``fn(job)`` for every job; results come back in job order."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def _sgd(cfg: dict, seed: int) -> SgdConfig:
    return SgdConfig(cfg["lr"], cfg["momentum"], cfg["epochs"], cfg["batch"], seed)


def _pct(x: float) -> float:
    return 100.0 * x


# -- quadrant / border ------------------------------------------------------

def _quadrant_splits(cfg: dict, border: int, seed: int) -> Dict[str, LabeledDataset]:
    kw = dict(canvas=cfg["canvas"], patch=cfg["patch"], border=border, channels=cfg["channels"])
    return {split: gen_quadrant(seed, cfg[f"n_{split}"] // 2, stream=s, **kw)
            for split, s in (("train", 1), ("val", 2), ("test", 3))}


def _quadrant_job(job: dict) -> dict:
    cfg = job["cfg"]
    boundary, pad_mode = MODES[job["mode"]]
    data = _quadrant_splits(cfg, job["border"], job.get("data_seed", cfg.get("data_seed", 0)))
    if job["arch"] == "quadrant":
        spec = quadrant_net(boundary, pad_mode, cfg["channels"])
    else:
        spec = redgreen_net(boundary, pad_mode, cfg["channels"])
    model = Model.init(spec, job["seed"])
    best, history = train(model, data["train"].images, data["train"].labels,
                          _sgd(cfg, job["seed"]), data["val"].images, data["val"].labels)
    row = {"repeat": job["repeat"], "mode": job["mode"], "border": job["border"],
           "seed": job["seed"],
           "train_acc": _pct(accuracy(best, data["train"].images, data["train"].labels)),
           "test_acc": _pct(accuracy(best, data["test"].images, data["test"].labels)),
           "epochs_run": len(history)}
    return row


def run_quadrant(config: Optional[dict] = None, threads: int = 1) -> ExperimentReport:
    """One 5x5 kernel per boundary mode on the top-left / bottom-right task."""
    cfg = make_config("quadrant", config)
    t0 = time.perf_counter()
    jobs = []
    for mode in cfg["modes"]:
        for border in cfg["border"]:
            for seed in cfg["seeds"]:
                jobs.append({"cfg": cfg, "arch": "quadrant", "mode": mode, "border": border,
                             "seed": seed, "repeat": len(jobs)})
    rows = _run_jobs(_quadrant_job, jobs, threads)
    rep = ExperimentReport("quadrant", cfg, rows, ["mode", "border"], ["train_acc", "test_acc"])
    rep.wall_clock = time.perf_counter() - t0
    return rep


def run_border_distance(config: Optional[dict] = None, threads: int = 1) -> ExperimentReport:
    """Accuracy of the 4-layer net on the quadrant task as the border grows.

    The extra section records, per mode and border, the composed boundary
    reach and receptive field of the network on that image size.
    """
    cfg = make_config("border", config)
    t0 = time.perf_counter()
    jobs = []
    for mode in cfg["modes"]:
        for border in cfg["border"]:
            for seed in cfg["seeds"]:
                jobs.append({"cfg": cfg, "arch": "redgreen", "mode": mode, "border": border,
                             "seed": seed, "repeat": len(jobs)})
    rows = _run_jobs(_quadrant_job, jobs, threads)
    prediction = []
    for mode in cfg["modes"]:
        spec = redgreen_net(*MODES[mode], cfg["channels"])
        for border in cfg["border"]:
            size = cfg["canvas"] + 2 * border
            cov = network_coverage(spec, (size, size)).summary()
            prediction.append({"mode": mode, "border": border, "image_size": size,
                               "boundary_reach": cov["boundary_reach"],
                               "receptive_field": cov["receptive_field"]})
    rep = ExperimentReport("border", cfg, rows, ["mode", "border"], ["test_acc"],
                           extra={"coverage_prediction": prediction})
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- red/green --------------------------------------------------------------

def _redgreen_job(job: dict) -> dict:
    cfg = job["cfg"]
    sim = gen_red_green(cfg["data_seed"], cfg["n_train"], cfg["n_val"], cfg["n_test"], "similar")
    dis_test = gen_red_green(cfg["data_seed"], 0, 0, cfg["n_test"], "dissimilar")["test"]
    model = Model.init(redgreen_net(*MODES[job["mode"]]), job["seed"])
    best, history = train(model, sim["train"].images, sim["train"].labels,
                          _sgd(cfg, job["seed"]), sim["val"].images, sim["val"].labels)
    row = {"repeat": job["repeat"], "mode": job["mode"], "seed": job["seed"],
           "similar": _pct(accuracy(best, sim["test"].images, sim["test"].labels)),
           "dissimilar": _pct(accuracy(best, dis_test.images, dis_test.labels)),
           "val": _pct(max([h.val_acc for h in history], default=float("nan"))),
           "epochs_run": len(history)}
    if job.get("keep_model"):
        row = dict(row, _model=best)
    return row


def run_red_green(config: Optional[dict] = None, threads: int = 1, keep_models: bool = False,
                  model_dir=None) -> ExperimentReport:
    """Train the 4-layer net per boundary mode and seed; score both test sets."""
    cfg = make_config("redgreen", config)
    t0 = time.perf_counter()
    jobs = []
    for mode in cfg["modes"]:
        for seed in cfg["seeds"]:
            jobs.append({"cfg": cfg, "mode": mode, "seed": seed, "repeat": len(jobs),
                         "keep_model": keep_models or model_dir is not None})
    rows = _run_jobs(_redgreen_job, jobs, threads)
    models = {}
    for r in rows:
        m = r.pop("_model", None)
        if m is not None:
            models[(r["mode"], r["seed"])] = m
            if model_dir is not None:
                Path(model_dir).mkdir(parents=True, exist_ok=True)
                save_model(m, Path(model_dir) / f"redgreen_{r['mode']}_seed{r['seed']}.ckpt")
    for r in rows:
        r["gap"] = r["similar"] - r["dissimilar"]
    ref = [{"mode": m, **PAPER_TABLE1[m]} for m in cfg["modes"]]
    rep = ExperimentReport("redgreen", cfg, rows, ["mode"], ["similar", "dissimilar", "gap"],
                           extra={"paper_reference": ref})
    rep.wall_clock = time.perf_counter() - t0
    rep.models = models if keep_models else {}
    return rep


# -- consistency ------------------------------------------------------------

def _pair_for(ds: LabeledDataset, index: int, shift_range: int, pairs: int, seed: int):
    uid = ds.records[index]["uid"]
    rng = Rng(seed, derive_stream(0xC0, uid))
    options = ds.feasible_diagonal_shifts(index, shift_range)
    out = []
    for _ in range(pairs):
        if len(options) == 1:
            out.append((options[0], options[0]))
            continue
        a = options[rng.choice(len(options))]
        b = a
        while b == a:
            b = options[rng.choice(len(options))]
        out.append((a, b))
    return out


def run_consistency(model: Model, dataset: LabeledDataset, shift_range: int,
                    pairs_per_image: int = 5, seed: int = 0, batch_size: int = 500) -> dict:
    """Percentage of shift pairs that receive the same predicted class.

    For every image, ``pairs_per_image`` pairs of distinct diagonal offsets
    ``(d, d)`` are drawn from those in ``[-shift_range, shift_range]`` that keep
    the content in frame; shifted copies are re-rendered from the placement
    records.  The draw for an image depends only on its record ``uid``, so the
    result does not depend on dataset order.  Also reports the accuracy over
    all shifted copies.
    """
    if shift_range < 0 or pairs_per_image < 1:
        raise ConfigError("shift_range must be >= 0 and pairs_per_image >= 1")
    if len(dataset) == 0:
        raise ConfigError("consistency needs a non-empty dataset")
    agree = total = correct = shown = 0
    batch, owners = [], []

    def flush():
        nonlocal agree, total, correct, shown
        if not batch:
            return
        pred = predict(model, np.concatenate(batch, axis=0)).argmax(axis=1)
        for (label, _), p1, p2 in zip(owners, pred[0::2], pred[1::2]):
            agree += int(p1 == p2)
            total += 1
            correct += int(p1 == label) + int(p2 == label)
            shown += 2
        batch.clear()
        owners.clear()

    for i in range(len(dataset)):
        for a, b in _pair_for(dataset, i, shift_range, pairs_per_image, seed):
            batch.append(dataset.render(i, a, a))
            batch.append(dataset.render(i, b, b))
            owners.append((int(dataset.labels[i]), i))
        if len(batch) >= batch_size:
            flush()
    flush()
    return {"consistency": 100.0 * agree / total, "shifted_accuracy": 100.0 * correct / shown,
            "pairs": total}


def run_consistency_experiment(config: Optional[dict] = None, models: Optional[dict] = None,
                               threads: int = 1) -> ExperimentReport:
    """Consistency of Red-Green models under diagonal shifts of the Similar test set.

    ``models`` maps ``(mode, seed)`` to trained models; missing ones are trained
    with the Red-Green settings in ``config``.
    """
    overrides = dict(config or {})
    ccfg = make_config("consistency", {k: v for k, v in overrides.items()
                                        if k in DEFAULTS["consistency"]})
    rcfg = make_config("redgreen", {k: v for k, v in overrides.items()
                                     if k not in DEFAULTS["consistency"]})
    if "modes" not in overrides:
        rcfg["modes"] = ["same+zero", "full+zero"]
    t0 = time.perf_counter()
    models = dict(models or {})
    missing = [(m, s) for m in rcfg["modes"] for s in rcfg["seeds"] if (m, s) not in models]
    if missing:
        sub = dict(rcfg, modes=sorted({m for m, _ in missing}, key=rcfg["modes"].index),
                   seeds=sorted({s for _, s in missing}))
        models.update(run_red_green(sub, threads=threads, keep_models=True).models)
    test = gen_red_green(rcfg["data_seed"], 0, 0, rcfg["n_test"], "similar")["test"]
    test = test.subset(range(min(ccfg["n_images"], len(test))))
    rows = []
    for mode in rcfg["modes"]:
        for seed in rcfg["seeds"]:
            res = run_consistency(models[(mode, seed)], test, ccfg["shift_range"],
                                  ccfg["pairs_per_image"], seed)
            rows.append({"repeat": len(rows), "mode": mode, "seed": seed,
                         "consistency": res["consistency"],
                         "shifted_accuracy": res["shifted_accuracy"], "pairs": res["pairs"]})
    cfg = {**rcfg, **ccfg, "experiment": "consistency"}
    rep = ExperimentReport("consistency", cfg, rows, ["mode"], ["consistency", "shifted_accuracy"])
    rep.wall_clock = time.perf_counter() - t0
    return rep


RUNNERS = {
    "quadrant": run_quadrant,
    "border": run_border_distance,
    "redgreen": run_red_green,
    "consistency": run_consistency_experiment,
}
