"""Figure rendering for suite and demo outputs.

matplotlib is imported here and nowhere else, so the computational core
carries no plotting dependency; figures are written next to the delimited
output they illustrate.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np


def _mpl():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_suite(out_dir: Path, suite: str, rows: list[dict]) -> Path:
    """Histogram panel of the certified constants and weak-type ratios."""
    plt = _mpl()
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    cs = [r["verify_constant"] for r in rows]
    ws = [r["weak_l1"] for r in rows]
    axes[0].hist(cs, bins=min(40, max(6, len(cs) // 10)), color="#33557a")
    axes[0].set_xlabel("verified pointwise constant")
    axes[0].set_ylabel("instances")
    axes[1].hist(ws, bins=min(40, max(6, len(ws) // 10)), color="#7a5533")
    axes[1].set_xlabel("weak (1,1) ratio")
    fig.suptitle(f"{suite} suite, {len(rows)} instances")
    fig.tight_layout()
    path = Path(out_dir) / "suite.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_sweep(out_dir: Path, res) -> Path:
    """Log-log norm versus characteristic with both fitted slopes."""
    plt = _mpl()
    fig, ax = plt.subplots(figsize=(6.4, 4.6))
    depths = sorted({r.depth for r in res.rows})
    cmap = plt.get_cmap("viridis")
    for i, d in enumerate(depths):
        pts = [(r.ap_char, r.norm) for r in res.rows if r.depth == d]
        xs, ys = zip(*pts)
        ax.plot(xs, ys, "o", ms=4, color=cmap(i / max(1, len(depths) - 1)), label=f"depth {d}")
    xs = np.array([r.ap_char for r in res.rows if r.norm > 0])
    if xs.size and math.isfinite(res.slope):
        xg = np.geomspace(xs.min(), xs.max(), 32)
        anchor = np.median([r.norm for r in res.rows if r.norm > 0])
        xa = np.median(xs)
        ax.plot(xg, anchor * (xg / xa) ** res.slope, "k--", lw=1,
                label=f"top-half fit {res.slope:.2f}")
        if math.isfinite(res.critical_slope):
            ax.plot(xg, anchor * (xg / xa) ** res.critical_slope, "r:", lw=1.2,
                    label=f"critical-column fit {res.critical_slope:.2f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("joint characteristic")
    ax.set_ylabel("weighted operator norm")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(out_dir) / "sweep.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_euclid_demo(out_dir: Path, lat, f, lhs, rhs, constant: float, members) -> Path:
    """Overlay of the adapted truncation, the scaled sparse sum, and the
    member cubes of each grid (d = 1)."""
    plt = _mpl()
    x = lat.centers()
    fig, axes = plt.subplots(2, 1, figsize=(7.5, 5.4), sharex=True)
    axes[0].plot(x, f, lw=0.8, color="#444444", label="input")
    axes[0].legend(fontsize=7)
    axes[1].plot(x, lhs, lw=0.9, color="#33557a", label="adapted truncation")
    axes[1].plot(x, constant * rhs, lw=0.9, color="#aa3333", alpha=0.8,
                 label=f"C x sparse sum (C={constant:.3g})")
    ymin = 0.0
    for q in members:
        lo, hi = float(q.lo(0)), float(q.hi(0))
        axes[1].plot([max(lo, 0), min(hi, 1)], [ymin, ymin], lw=3, alpha=0.5)
    axes[1].legend(fontsize=7)
    axes[1].set_xlabel("position")
    fig.tight_layout()
    path = Path(out_dir) / "euclid.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
