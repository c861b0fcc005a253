"""Figures for ablation and temperature-sweep reports (written to files, never shown)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

AVERAGES = ("micro", "macro", "weighted", "samples")


def _save(fig, path):
    tmp = f"{path}.tmp.png"
    fig.savefig(tmp, dpi=120, metadata={"Software": None})
    plt.close(fig)
    os.replace(tmp, path)


def plot_ablation(rows: list[dict], path: str | os.PathLike) -> None:
    """Grouped bars: one group per variant, one bar per F1 average."""
    fig, ax = plt.subplots(figsize=(7, 3.6))
    width = 0.8 / len(AVERAGES)
    for k, avg in enumerate(AVERAGES):
        xs = [i + (k - 1.5) * width for i in range(len(rows))]
        ax.bar(xs, [r[avg] for r in rows], width, label=avg)
    ax.set_xticks(range(len(rows)), [r["variant"] for r in rows])
    lo = min(r[a] for r in rows for a in AVERAGES)
    ax.set_ylim(max(0.0, lo - 0.1), 1.0)
    ax.set_ylabel("F1 on test split")
    ax.legend(ncol=4, fontsize=8, loc="upper right")
    fig.tight_layout()
    _save(fig, path)


def plot_tau_sweep(rows: list[dict], path: str | os.PathLike) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    taus = [r["tau"] for r in rows]
    for avg in ("micro", "macro"):
        ax.plot(taus, [r[avg] for r in rows], marker="o", label=f"{avg}-F1")
    ax.set_xlabel("temperature")
    ax.set_ylabel("F1 on test split")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
