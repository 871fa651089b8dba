"""Histogram figures (SVG or PNG) with byte-stable SVG output."""
from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp so reruns write identical files
_RC = {"svg.hashsalt": "microchar", "svg.fonttype": "none", "font.size": 9,
       "axes.spines.top": False, "axes.spines.right": False}


def radius_histogram(path: str | os.PathLike, bin_edges: Sequence[float], frequencies: Sequence[float],
                     predicted: tuple[Sequence[float], Sequence[float]] | None = None,
                     title: str | None = None, xlabel: str = "radius (µm)") -> Path:
    """Bar chart of a radius histogram, optionally overlaid with predicted (centres, frequencies).

    Frequencies are shown as fractions so measured and predicted curves
    share one axis.
    """
    path = Path(path)
    edges = np.asarray(bin_edges, dtype=float)
    freq = np.asarray(frequencies, dtype=float)
    total = freq.sum()
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        ax.bar(edges[:-1], freq / total if total else freq, width=np.diff(edges), align="edge",
               color="0.65", edgecolor="0.3", linewidth=0.5, label="PSILM")
        if predicted is not None:
            c, f = (np.asarray(a, dtype=float) for a in predicted)
            f = np.clip(f, 0, None)
            s = f.sum()
            ax.plot(c, f / s if s else f, "o-", color="C3", markersize=3, linewidth=1, label="network")
            ax.legend(frameon=False)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("fraction of samples")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        meta = {"Date": None} if path.suffix.lower() == ".svg" else {"Software": None}
        fig.savefig(path, metadata=meta)
        plt.close(fig)
    return path
