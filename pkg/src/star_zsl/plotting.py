"""Figures written next to the CSV / JSON reports."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_sweep(rows: Sequence[Sequence[float]], path: str | os.PathLike, best_gamma: float | None = None) -> Path:
    """S, U and H against the calibration offset."""
    arr = np.asarray(rows, dtype=float).reshape(-1, 4)
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for col, label in ((1, "S"), (2, "U"), (3, "H")):
        ax.plot(arr[:, 0], arr[:, col], label=label, lw=1.6 if label == "H" else 1.1)
    if best_gamma is not None:
        ax.axvline(best_gamma, color="0.5", ls="--", lw=0.8)
    ax.set_xlabel("gamma")
    ax.set_ylabel("accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="best", frameon=False)
    return _save(fig, path)


def plot_confusion(matrix: Sequence[Sequence[int]], labels: Sequence[str], path: str | os.PathLike) -> Path:
    mat = np.asarray(matrix, dtype=float)
    n = len(labels)
    size = max(3.5, 0.45 * n + 1.5)
    fig, ax = plt.subplots(figsize=(size, size))
    ax.imshow(mat, cmap="Blues")
    ax.set_xticks(range(n), labels, rotation=90, fontsize=7)
    ax.set_yticks(range(n), labels, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if n <= 20:
        peak = mat.max() if mat.size else 0
        for i in range(n):
            for j in range(n):
                if mat[i, j]:
                    ax.text(j, i, int(mat[i, j]), ha="center", va="center", fontsize=6,
                            color="white" if mat[i, j] > peak / 2 else "black")
    return _save(fig, path)


def plot_losses(records: Sequence[dict], path: str | os.PathLike) -> Path:
    """Per-epoch loss terms from the JSON-lines log."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    epochs = [r["epoch"] for r in records]
    for key in ("l_total", "l_mpce", "l_sce", "l_gce"):
        vals = [r.get(key) for r in records]
        if all(v is not None for v in vals):
            ax.plot(epochs, vals, label=key[2:], lw=1.6 if key == "l_total" else 1.0)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(loc="best", frameon=False)
    return _save(fig, path)
