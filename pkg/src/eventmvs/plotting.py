"""Report figures written next to the CSV outputs. Non-interactive (Agg)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps the PNG byte-stable across runs
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_abs_rel(results: dict[str, float], path, title: str = "") -> Path:
    """Bar chart of AbsRel (percent) per variant."""
    names = list(results)
    vals = [100.0 * results[n] for n in names]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bars = ax.bar(names, vals, color=plt.cm.tab10(np.arange(len(names)) % 10))
    for bar, v in zip(bars, vals):
        ax.text(bar.get_x() + bar.get_width() / 2, v, f"{v:.2f}", ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("AbsRel (%)")
    if title:
        ax.set_title(title)
    ax.set_ylim(0, max(vals + [1.0]) * 1.2)
    ax.tick_params(axis="x", labelrotation=15)
    return _save(fig, path)


def plot_latency(rows, path) -> Path:
    """Modeled vs published per-frame latency for the accelerator rows."""
    pick = [r for r in rows if r.target == "accelerator" and r.unit == "us"]
    labels = [r.quantity.replace(" (us/frame)", "").replace(" (us)", "") for r in pick]
    x = np.arange(len(pick))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(x - 0.2, [r.model for r in pick], 0.4, label="model")
    ax.bar(x + 0.2, [r.published for r in pick], 0.4, label="published")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylabel("time per frame (us)")
    ax.legend(frameon=False)
    return _save(fig, path)
