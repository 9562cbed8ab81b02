"""Matplotlib figures written next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes stable between runs
_PNG_META = {"Software": None}

MODE_COLORS = {
    "valid": "#d62728",
    "same+zero": "#ff7f0e",
    "same+circular": "#2ca02c",
    "full+zero": "#1f77b4",
}


def _fig(width=5.0, ratio=0.65):
    return plt.subplots(figsize=(width, width * ratio), dpi=100)


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_redgreen(report, out: Path) -> Path:
    rows = report.aggregate
    modes = [r["mode"] for r in rows]
    x = np.arange(len(modes))
    fig, ax = _fig()
    ax.bar(x - 0.2, [r["similar_mean"] for r in rows], 0.4,
           yerr=[r["similar_std"] for r in rows], label="similar test", color="#4c72b0")
    ax.bar(x + 0.2, [r["dissimilar_mean"] for r in rows], 0.4,
           yerr=[r["dissimilar_std"] for r in rows], label="dissimilar test", color="#dd8452")
    ref = {r["mode"]: r for r in report.extra.get("paper_reference", [])}
    for i, m in enumerate(modes):
        if m in ref:
            ax.plot([i - 0.4, i], [ref[m]["similar"]] * 2, "k:", lw=1)
            ax.plot([i, i + 0.4], [ref[m]["dissimilar"]] * 2, "k:", lw=1)
    ax.set_xticks(x)
    ax.set_xticklabels(modes)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 105)
    ax.legend(loc="lower left", fontsize=8, frameon=False)
    return _save(fig, out / "redgreen.png")


def plot_border(report, out: Path) -> Path:
    fig, ax = _fig()
    for mode in dict.fromkeys(r["mode"] for r in report.aggregate):
        rows = [r for r in report.aggregate if r["mode"] == mode]
        ax.errorbar([r["border"] for r in rows], [r["test_acc_mean"] for r in rows],
                    yerr=[r["test_acc_std"] for r in rows], marker="o", capsize=2,
                    color=MODE_COLORS.get(mode), label=mode)
    reach = [p["boundary_reach"] for p in report.extra.get("coverage_prediction", [])
             if p["boundary_reach"] > 0]
    if reach:
        ax.axvline(max(reach), color="grey", ls="--", lw=1, label="boundary reach")
    ax.axhline(50, color="k", lw=0.5)
    ax.set_xlabel("border (px)")
    ax.set_ylabel("test accuracy (%)")
    ax.set_ylim(40, 102)
    ax.legend(fontsize=8, frameon=False)
    return _save(fig, out / "border.png")


def plot_bars(report, metric: str, out: Path, name: str) -> Path:
    rows = report.aggregate
    labels = [" / ".join(str(r[k]) for k in report.group_keys) for r in rows]
    fig, ax = _fig()
    ax.bar(range(len(rows)), [r[f"{metric}_mean"] for r in rows],
           yerr=[r[f"{metric}_std"] for r in rows],
           color=[MODE_COLORS.get(r.get("mode"), "grey") for r in rows])
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel(f"{metric} (%)")
    ax.set_ylim(0, 105)
    return _save(fig, out / name)


def plot_report(report, out_dir) -> list:
    out = Path(out_dir)
    if report.experiment == "redgreen":
        return [plot_redgreen(report, out)]
    if report.experiment == "border":
        return [plot_border(report, out)]
    if report.experiment == "quadrant":
        return [plot_bars(report, "test_acc", out, "quadrant.png")]
    if report.experiment == "consistency":
        return [plot_bars(report, "consistency", out, "consistency.png")]
    return []


def plot_coverage(counts: np.ndarray, path, title: str = "") -> Path:
    fig, ax = _fig(4.0, 1.0)
    c = np.atleast_2d(counts)
    im = ax.imshow(c, cmap="viridis", interpolation="nearest",
                   extent=(0.5, c.shape[1] + 0.5, c.shape[0] + 0.5, 0.5))
    fig.colorbar(im, ax=ax, shrink=0.8, label="count")
    ax.set_xlabel("position w")
    ax.set_ylabel("position h")
    if title:
        ax.set_title(title, fontsize=9)
    return _save(fig, Path(path))
