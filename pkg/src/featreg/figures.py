"""Report figures rendered to files.

Everything here draws onto the Agg canvas and writes PNGs next to the
delimited report output; nothing opens a window.
"""

from __future__ import annotations

import math
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .model import ImageBuffer  # noqa: E402
from .tensor_io import save_image  # noqa: E402


def save_accuracy_curve(mles: Sequence, t_auc: int, auc_value: float,
                        path) -> None:
    """Registration accuracy against the error threshold, one step per px."""
    thresholds = np.arange(1, int(t_auc) + 1)
    vals = np.array([math.inf if m is None else float(m) for m in mles])
    ra = [np.count_nonzero(vals < t) / vals.size for t in thresholds]
    fig, ax = plt.subplots(figsize=(5, 3.5), dpi=120)
    ax.step(thresholds, ra, where="post", color="#2060a0")
    ax.fill_between(thresholds, ra, step="post", alpha=0.15, color="#2060a0")
    ax.set_xlabel("error threshold [px]")
    ax.set_ylabel("registration accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.set_xlim(1, int(t_auc))
    ax.set_title(f"AUC = {auc_value:.3f}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_pair_errors(pair_ids: Sequence[str], mles: Sequence, t_sr: float,
                     path) -> None:
    """Per-pair error bars with the success threshold; failures marked."""
    vals = np.array([math.inf if m is None else float(m) for m in mles])
    n = vals.size
    finite = np.isfinite(vals)
    ceiling = max(float(vals[finite].max()) if finite.any() else t_sr, t_sr) * 1.15
    shown = np.where(finite, vals, ceiling)
    colors = np.where(~finite, "#b03030",
                      np.where(vals <= t_sr, "#2d8a4e", "#d08020"))
    fig_h = max(2.5, 0.28 * n + 1.2)
    fig, ax = plt.subplots(figsize=(6, fig_h), dpi=120)
    ypos = np.arange(n)
    ax.barh(ypos, shown, color=list(colors), height=0.7)
    for i in np.flatnonzero(~finite):
        ax.text(ceiling, ypos[i], " failed", va="center", fontsize=7,
                color="#b03030")
    ax.axvline(t_sr, color="black", linestyle="--", linewidth=1,
               label=f"success bar {t_sr:g} px")
    ax.set_yticks(ypos)
    ax.set_yticklabels(pair_ids, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("mean landmark error [px]")
    ax.legend(loc="lower right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def registration_overlay(fixed: ImageBuffer, warped: ImageBuffer) -> ImageBuffer:
    """Green/magenta fusion: aligned structure renders gray, misalignment
    splits into colored fringes."""
    if (fixed.height, fixed.width) != (warped.height, warped.width):
        raise ValueError("overlay inputs must share one geometry")
    g = np.asarray(fixed.luma(), dtype=np.float32)
    m = np.asarray(warped.luma(), dtype=np.float32)
    return ImageBuffer(np.stack([m, g, m], axis=2))


def save_overlay(fixed: ImageBuffer, warped: ImageBuffer, path) -> None:
    save_image(registration_overlay(fixed, warped), path)
