"""Evaluation report rendering: metrics JSON, PR-curve CSV, and PR-curve
figures written next to each other."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluation import RECALL_GRID, EvalResult

__all__ = ["write_metrics_json", "write_pr_csv", "render_pr_figure", "write_report"]


def write_metrics_json(result: EvalResult, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_pr_csv(result: EvalResult, path) -> None:
    """Long-format CSV: one (iou, recall, precision) row per grid point."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("iou,recall,precision\n")
        for thr in sorted(result.pr_curves):
            curve = result.pr_curves[thr]
            for r, p in zip(RECALL_GRID, curve):
                fh.write(f"{thr:.2f},{r:.2f},{p:.6f}\n")


def render_pr_figure(result: EvalResult, path) -> None:
    """Precision-recall curves, one line per IoU threshold."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for thr in sorted(result.pr_curves):
        ax.plot(RECALL_GRID, result.pr_curves[thr], lw=1.2,
                label=f"IoU {thr:.2f}")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, ncol=2, loc="lower left")
    ax.set_title(f"AP={result.ap:.3f}  AP50={result.ap50:.3f}  "
                 f"AP75={result.ap75:.3f}  AR100={result.ar100:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_report(result: EvalResult, out_dir) -> list[Path]:
    """Write metrics.json, pr_curves.csv and pr_curves.png into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "metrics.json", out / "pr_curves.csv", out / "pr_curves.png"]
    write_metrics_json(result, paths[0])
    write_pr_csv(result, paths[1])
    render_pr_figure(result, paths[2])
    return paths
