"""Three-panel error curves over the class index."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _panel(ax, ks, values, title, selected, color, errors=None):
    values = np.asarray(values, dtype=float)
    ok = ~np.isnan(values)
    if errors is not None:
        ax.errorbar(ks[ok], values[ok], yerr=np.nan_to_num(np.asarray(errors)[ok]), marker="o",
                    color=color, capsize=3, lw=1.2)
    else:
        ax.plot(ks[ok], values[ok], marker="o", color=color, lw=1.2)
    if ok.any() and selected is not None and ok[selected]:
        ax.plot([ks[selected]], [values[selected]], marker="*", ms=14, color="k", ls="none", label="selected")
        ax.legend(frameon=False, fontsize=8)
    ax.set_title(title, fontsize=10)
    ax.set_xlabel("class k")
    if ok.any() and np.all(values[ok] > 0) and values[ok].max() / values[ok].min() > 100:
        ax.set_yscale("log")
    ax.grid(alpha=0.3)


def plot_curves(report, path, labels: bool = True) -> Path:
    """Training, SRM and Monte-Carlo true error against k, saved to ``path``."""
    rows = report.rows
    ks = np.array([r.k for r in rows])
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6), constrained_layout=True)
    _panel(axes[0], ks, [r.training_error for r in rows], "training error", report.selected_k, "C0")
    _panel(axes[1], ks, [r.srm_error for r in rows], "SRM error", report.selected_k, "C1")
    true = [r.true_error_mean for r in rows]
    if all(math.isnan(v) for v in true):
        axes[2].text(0.5, 0.5, "true error not estimated", ha="center", va="center",
                     transform=axes[2].transAxes)
        axes[2].set_title("true error (MC)", fontsize=10)
        axes[2].set_xticks([])
        axes[2].set_yticks([])
    else:
        _panel(axes[2], ks, true, "true error (MC)", report.selected_k, "C2",
               errors=[r.true_error_se for r in rows])
    if labels:
        names = [r.description.split(";")[0] for r in rows]
        for ax in axes[:2] if all(math.isnan(v) for v in true) else axes:
            ax.set_xticks(ks)
            ax.set_xticklabels(names, rotation=60, ha="right", fontsize=6)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
