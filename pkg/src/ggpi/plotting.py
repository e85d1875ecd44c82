"""Static figures for the CLI reports (matplotlib, Agg backend, PNG files)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

ARROWS = {0: (-1, 0), 1: (0, -1), 2: (1, 0), 3: (0, 1)}  # L, D, R, U in plot coordinates


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def coverage_maps(grid, results, path) -> Path:
    """One panel per depth: optimal-action cells shaded, chosen action drawn as an arrow."""
    lines = grid.layout.splitlines()
    H, W = len(lines), max(len(l) for l in lines)
    fig, axes = plt.subplots(1, len(results), figsize=(3.2 * len(results), 3.4))
    axes = np.atleast_1d(axes)
    for ax, res in zip(axes, results):
        img = np.zeros((H, W, 3))
        for i, line in enumerate(lines):
            for j, ch in enumerate(line):
                img[i, j] = (0.2, 0.2, 0.2) if ch == "w" else (1.0, 1.0, 1.0)
        for s, (i, j) in enumerate(grid.cells):
            if s == grid.goal:
                img[i, j] = (1.0, 0.85, 0.2)
            elif res.optimal[s]:
                img[i, j] = (0.68, 0.85, 0.95)
        ax.imshow(img, interpolation="nearest")
        for s, (i, j) in enumerate(grid.cells):
            if s == grid.goal:
                continue
            dx, dy = ARROWS[int(res.actions[s])]
            ax.arrow(j - 0.25 * dx, i + 0.25 * dy, 0.3 * dx, -0.3 * dy, head_width=0.18,
                     length_includes_head=True, color="k", lw=0.6)
        ax.set_title(f"depth {res.depth}: {res.n_optimal}/{res.n_states}")
        ax.set_xticks([])
        ax.set_yticks([])
    return _save(fig, path)


def depth_sweep(summary: Mapping[int, Mapping], path) -> Path:
    """Mean iterations and total GHM samples per depth with bootstrap intervals."""
    depths = sorted(summary)
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for ax, key, label in ((axes[0], "iterations", "improvement steps"),
                           (axes[1], "total_samples", "total GHM samples")):
        means = np.array([summary[d][key]["mean"] for d in depths])
        lo = np.array([summary[d][key]["ci_low"] for d in depths])
        hi = np.array([summary[d][key]["ci_high"] for d in depths])
        ax.bar([str(d) for d in depths], means, yerr=[means - lo, hi - means], capsize=4,
               color="tab:blue", alpha=0.8)
        ax.set_xlabel("GGPI depth")
        ax.set_ylabel(label)
    return _save(fig, path)


def convergence_traces(traces: Mapping[str, Sequence], path) -> Path:
    """Lyapunov value and max-TV against iteration, log scale, one line per label."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    for label, tr in traces.items():
        it = np.asarray(tr.iteration)
        axes[0].plot(it, np.maximum(tr.lyapunov, 1e-12), label=label, lw=1)
        axes[1].plot(it, np.maximum(tr.max_tv, 1e-12), label=label, lw=1)
    axes[0].set_ylabel("weighted KL to truth")
    axes[1].set_ylabel("max TV to truth")
    for ax in axes:
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
    axes[1].legend(fontsize=7)
    return _save(fig, path)


def _barycentric(p: np.ndarray) -> np.ndarray:
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    return p @ corners


def simplex_paths(dists: np.ndarray, truth: np.ndarray, path) -> Path:
    """Paths of each row of a 3-outcome model through the probability simplex.

    ``dists`` is ``(T, S, A, 3)``; ``truth`` is ``(S, A, 3)``.
    """
    dists = np.asarray(dists)
    if dists.shape[-1] != 3:
        raise ValueError("simplex plots need exactly three outcomes")
    rows = dists.reshape(dists.shape[0], -1, 3)
    fig, ax = plt.subplots(figsize=(4, 3.6))
    outline = _barycentric(np.eye(3)[[0, 1, 2, 0]])
    ax.plot(outline[:, 0], outline[:, 1], "k-", lw=0.8)
    for r in range(rows.shape[1]):
        xy = _barycentric(rows[:, r])
        ax.plot(xy[:, 0], xy[:, 1], lw=0.8)
    target = _barycentric(np.asarray(truth).reshape(-1, 3))
    ax.plot(target[:, 0], target[:, 1], "ro", ms=4)
    ax.set_aspect("equal")
    ax.axis("off")
    return _save(fig, path)
