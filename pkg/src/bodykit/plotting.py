"""Report figures. Uses the Agg backend and strips timestamps so files are reproducible."""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no creation date or software version, so reruns give identical bytes
_PNG_METADATA = {"Software": None}
_STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def _save(fig, path: str | os.PathLike) -> None:
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_METADATA)
    plt.close(fig)


def plot_per_joint_errors(errors_cm: np.ndarray, joint_names: Sequence[str], path, title: str = "") -> None:
    """Bar chart of per-joint error (cm), averaged over samples if 2-D."""
    e = np.asarray(errors_cm, dtype=float)
    if e.ndim == 2:
        e = e.mean(axis=0)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(6.4, 0.3 * len(e)), 3.6))
        ax.bar(np.arange(len(e)), e, color="#4c72b0")
        ax.set_xticks(np.arange(len(e)))
        ax.set_xticklabels(list(joint_names)[: len(e)], rotation=70, ha="right", fontsize=7)
        ax.set_ylabel("error (cm)")
        if title:
            ax.set_title(title)
        _save(fig, path)


def plot_objective_trace(trace: Sequence[float], path, title: str = "fit objective") -> None:
    t = np.asarray(trace, dtype=float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        positive = np.clip(t, np.finfo(float).tiny, None)
        ax.semilogy(np.arange(len(t)), positive, lw=1.2)
        ax.set_xlabel("accepted step")
        ax.set_ylabel("objective")
        ax.set_title(title)
        _save(fig, path)


def plot_level_sizes(sizes: Sequence[int], path, title: str = "hierarchy level sizes") -> None:
    s = np.asarray(sizes)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(np.arange(len(s)), s, marker="o")
        for k, n in enumerate(s):
            ax.annotate(str(int(n)), (k, n), textcoords="offset points", xytext=(0, 5), ha="center", fontsize=7)
        ax.set_xlabel("level")
        ax.set_ylabel("vertices")
        ax.set_title(title)
        _save(fig, path)


def plot_metric_summary(per_sample: dict[str, Sequence[float]], path) -> None:
    """One box per metric across samples."""
    names = sorted(per_sample)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.boxplot([np.asarray(per_sample[k], dtype=float) for k in names])
        ax.set_xticks(np.arange(1, len(names) + 1))
        ax.set_xticklabels(names)
        ax.set_title("per-sample metrics")
        _save(fig, path)
