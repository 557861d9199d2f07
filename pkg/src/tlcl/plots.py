"""Matplotlib renderings for run reports.

Three views cover the pipeline: the workspace with trajectories drawn
over it, mining progress per generation, and training traces per
update.  Every function writes one file and returns its path; nothing
opens a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_REGION_FACE = {"red": "#d62728", "green": "#2ca02c", "blue": "#1f77b4"}
_TRAJ_STYLE = ["#444444", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]


def plot_layout(spec, traj_sets, path, title: str | None = None):
    """Workspace figure: regions, start, goal, and labeled trajectory
    bundles.  traj_sets is a list of (label, [states arrays]) pairs;
    only the first two state columns are drawn."""
    fig, ax = plt.subplots(figsize=(5.2, 5.2))
    for r in spec.regions:
        ax.add_patch(plt.Circle(r.center, r.radius,
                                color=_REGION_FACE.get(r.color, "#7f7f7f"),
                                alpha=0.4, zorder=1))
        ax.annotate(r.color, r.center, ha="center", va="center", fontsize=8)
    for i, (label, trajs) in enumerate(traj_sets):
        color = _TRAJ_STYLE[i % len(_TRAJ_STYLE)]
        for j, s in enumerate(trajs):
            s = np.asarray(s)
            ax.plot(s[:, 0], s[:, 1], color=color, alpha=0.6, lw=0.9,
                    label=label if j == 0 else None, zorder=2)
    ax.plot(*spec.start, "ko", ms=6, zorder=3)
    ax.plot(*spec.goal, "k*", ms=12, zorder=3)
    ax.set_xlim(0, spec.side)
    ax.set_ylim(0, spec.side)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title, fontsize=10)
    if any(trajs for _, trajs in traj_sets):
        ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_mining(records: list[dict], path):
    """Fitness curves from a mining generation log."""
    gens = [r["generation"] for r in records]
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(gens, [r["fitness"] for r in records], "o-", ms=3, label="fitness")
    ax.plot(gens, [r["reg_fitness"] for r in records], "s--", ms=3,
            label="regularized")
    ax.set_xlabel("generation")
    ax.set_ylabel("best fitness")
    ax.set_ylim(-0.02, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_training(records: list[dict], path):
    """Lagrange multiplier and critic losses over gradient updates."""
    steps = [r["step"] for r in records]
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(steps, [r["lam"] for r in records], color="#d62728", label="lambda")
    ax.set_xlabel("env step")
    ax.set_ylabel("lambda", color="#d62728")
    ax2 = ax.twinx()
    ax2.plot(steps, [r["q"] for r in records], color="#1f77b4", alpha=0.7,
             label="reward critic loss")
    ax2.plot(steps, [r["c"] for r in records], color="#2ca02c", alpha=0.7,
             label="cost critic loss")
    ax2.set_ylabel("critic loss")
    lines, labels = [], []
    for a in (ax, ax2):
        l, t = a.get_legend_handles_labels()
        lines += l
        labels += t
    ax.legend(lines, labels, fontsize=8, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
