"""Figures for vote images, detections and evaluation reports.

Everything renders off-screen with the Agg backend and writes PNG files with
fixed metadata so repeated runs give identical bytes.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_METADATA = {"Software": None}


def normalized_u8(values: np.ndarray) -> np.ndarray:
    """Min-max stretch to 0..255; a flat array maps to all zeros."""
    v = np.asarray(values, dtype=float)
    if v.size == 0 or v.max() <= v.min():
        return np.zeros(v.shape, dtype=np.uint8)
    lo, hi = float(v.min()), float(v.max())
    return np.round((v - lo) / (hi - lo) * 255.0).astype(np.uint8)


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=PNG_METADATA)
    plt.close(fig)


def plot_vote_image(smoothed: np.ndarray, path, propositions=None, bin_size: int = 4,
                    title: str = "") -> None:
    rows, cols = smoothed.shape
    fig, ax = plt.subplots(figsize=(8, 8 * rows / max(cols, 1) + 0.6))
    ax.imshow(normalized_u8(smoothed), cmap="gray", interpolation="nearest",
              extent=(0, cols * bin_size, rows * bin_size, 0))
    if propositions:
        xs = [p.position[0] for p in propositions]
        ys = [p.position[1] for p in propositions]
        ax.scatter(xs, ys, s=30, facecolors="none", edgecolors="tab:red", linewidths=0.8)
    ax.set_title(title or "smoothed vote image")
    ax.set_xlabel("x [px]")
    ax.set_ylabel("y [px]")
    fig.tight_layout()
    _save(fig, path)


def plot_detections(scene: np.ndarray, occurrences, path, truths=(), title: str = "") -> None:
    """Scene with ground-truth quads (dashed) and detected quads (solid)."""
    h, w = scene.shape
    fig, ax = plt.subplots(figsize=(10, 10 * h / w + 0.6))
    ax.imshow(scene, cmap="gray", vmin=0, vmax=255, interpolation="nearest",
              extent=(0, w, h, 0))
    for t in truths:
        q = np.array(list(t.quad) + [t.quad[0]])
        ax.plot(q[:, 0], q[:, 1], "--", color="tab:cyan", lw=1.2)
    for occ in occurrences:
        q = np.array(list(occ["quad"]) + [occ["quad"][0]])
        ax.plot(q[:, 0], q[:, 1], "-", color="tab:red", lw=1.5)
        ax.text(occ["center"][0], occ["center"][1], occ["pattern_id"], color="tab:red",
                ha="center", va="center", fontsize=8)
    ax.set_xlim(0, w)
    ax.set_ylim(h, 0)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_eval_summary(result, path) -> None:
    """Per-process true and false detection counts."""
    procs = result.processes
    labels = [p.process_id for p in procs]
    x = np.arange(len(procs))
    fig, ax = plt.subplots(figsize=(max(6, 0.25 * len(procs) + 2), 4))
    ax.bar(x - 0.2, [len(p.true_detections) for p in procs], 0.4, label="true")
    ax.bar(x + 0.2, [len(p.false_detections) for p in procs], 0.4, label="false",
           color="tab:red")
    ax.plot(x, [p.instances for p in procs], "k_", markersize=10, label="planted")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=90, fontsize=6)
    ax.set_ylabel("detections")
    ax.set_title(f"detection rate {100 * result.detection_rate:.1f}%, false detection chance "
                 f"{100 * result.false_detection_chance:.2f}%")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
