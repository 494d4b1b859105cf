"""Report figures: method comparison and per-segment alpha sweeps."""

from __future__ import annotations

import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .domain import SEGMENTS  # noqa: E402
from .evaluation import EvaluationReport  # noqa: E402

BASELINES = ("scout-only", "reply-only", "multiplication", "harmonic-mean")
_GLOBAL = re.compile(r"^bob-global-(\d+\.\d+)$")

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}
# fixed metadata keeps repeated renders byte-stable
_META = {"Software": None}


def global_alpha_rows(report: EvaluationReport) -> list[tuple[float, str]]:
    out = []
    for m in report.methods():
        hit = _GLOBAL.match(m)
        if hit:
            out.append((float(hit.group(1)), m))
    return sorted(out)


def plot_methods(report: EvaluationReport, path: Path) -> None:
    methods = report.methods()
    values = [report.value(m) for m in methods]
    colors = [
        "0.6" if m in BASELINES else "tab:red" if m == "oracle" else "tab:blue" for m in methods
    ]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 3.2))
        ax.bar(range(len(methods)), values, color=colors)
        ax.set_xticks(range(len(methods)))
        ax.set_xticklabels(methods, rotation=45, ha="right")
        ax.set_ylabel(f"NDCG@{report.k}")
        ax.set_title("Test NDCG by method")
        fig.tight_layout()
        fig.savefig(path, metadata=_META)
        plt.close(fig)


def plot_segment_alpha(report: EvaluationReport, path: Path) -> None:
    """BoB with each global alpha relative to the best baseline, per segment."""
    rows = global_alpha_rows(report)
    present = [m for m in BASELINES if m in report.methods()]
    if not rows or not present:
        return
    best = max(present, key=lambda m: report.value(m))
    segs = [s.value for s in SEGMENTS]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(segs), figsize=(7.2, 2.6), sharey=True)
        for ax, seg in zip(axes, segs):
            ref = report.value(best, seg)
            alphas = [a for a, _ in rows]
            rel = [report.value(m, seg) / ref if ref > 0 else float("nan") for _, m in rows]
            ax.plot(alphas, rel, marker="o", color="tab:blue")
            ax.axhline(1.0, ls="--", color="0.4", lw=1)
            ax.set_title(seg)
            ax.set_xlabel("alpha")
        axes[0].set_ylabel(f"NDCG@{report.k} / {best}")
        fig.tight_layout()
        fig.savefig(path, metadata=_META)
        plt.close(fig)


def render_figures(report: EvaluationReport, directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = [directory / "methods.png", directory / "segment_alpha.png"]
    plot_methods(report, out[0])
    plot_segment_alpha(report, out[1])
    return [p for p in out if p.exists()]

