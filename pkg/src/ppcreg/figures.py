"""Matplotlib renderings of the harness outputs, written next to the CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .pipeline import EvalRecord

_PNG_METADATA = {"Software": "ppcreg"}


def save_error_scatter(
    records: list[EvalRecord], path: str | Path, clip: float = 50.0
) -> None:
    """Before/after error distribution for one update; after-values clipped."""
    before = [r.mtre_before for r in records]
    after = [min(r.mtre_after, clip) for r in records]
    fig, ax = plt.subplots(figsize=(5, 5))
    lim = max(max(before, default=1.0), clip)
    ax.plot([0, lim], [0, lim], color="0.6", lw=1, label="no change")
    ax.scatter(before, after, s=12, alpha=0.6, edgecolors="none")
    ax.set_xlabel("mTRE before update [mm]")
    ax.set_ylabel(f"mTRE after update [mm] (clipped at {clip:g})")
    ax.set_xlim(0, lim)
    ax.set_ylim(0, clip * 1.02)
    ax.legend(loc="upper left", frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)


def save_convergence_plot(mtre_trace, path: str | Path) -> None:
    """Per-iteration mTRE of one registration run."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(range(len(mtre_trace)), mtre_trace, marker="o", ms=3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mTRE [mm]")
    if min(mtre_trace, default=1.0) > 0:
        ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)
