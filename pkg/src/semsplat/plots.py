"""Report figures rendered to SVG files next to the delimited output.

Deterministic output: the SVG hash salt is pinned and date metadata is
stripped so identical runs produce identical figure bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "semsplat"

import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KWARGS = {"metadata": {"Date": None}, "format": "svg"}


def save_loss_curves(train_report, path) -> None:
    """Total and per-term loss series on a log-scaled axis."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    iters = range(train_report.iterations)
    ax.plot(iters, train_report.total, label="total", lw=1.2)
    ax.plot(iters, train_report.clustering, label="clustering", lw=0.8, alpha=0.8)
    ax.plot(iters, train_report.instance, label="instance", lw=0.8, alpha=0.8)
    ax.plot(iters, train_report.sibling, label="sibling", lw=0.8, alpha=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog", linthresh=1e-6)
    ax.legend(loc="upper right", fontsize=8)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_level_bars(metrics_report, path) -> None:
    """Per-level mIoU/mBIoU bars plus the hierarchy-consistency score."""
    levels = sorted(metrics_report.level_miou)
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    xs = range(len(levels))
    width = 0.38
    ax.bar([x - width / 2 for x in xs],
           [metrics_report.level_miou[l] for l in levels],
           width=width, label="mIoU")
    ax.bar([x + width / 2 for x in xs],
           [metrics_report.level_mbiou[l] for l in levels],
           width=width, label="mBIoU")
    ax.axhline(metrics_report.hc, color="0.3", ls="--", lw=1.0,
               label=f"HC = {metrics_report.hc:.3f}")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f"level {l}" for l in levels])
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.legend(loc="lower left", fontsize=8)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
