"""Figure rendering for the CLI report paths (written next to the delimited
outputs; headless backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .audio import FPS


def save_activation_plot(path, beat_acts, down_acts, beats, fps: float = FPS) -> None:
    """Per-frame activations with the decoded beat grid overlaid."""
    t = np.arange(len(beat_acts)) / fps
    fig, axes = plt.subplots(2, 1, figsize=(10, 5), sharex=True)
    axes[0].plot(t, beat_acts, lw=0.8, color="tab:blue")
    axes[0].set_ylabel("beat activation")
    axes[0].set_ylim(-0.05, 1.05)
    axes[1].plot(t, down_acts, lw=0.8, color="tab:orange")
    axes[1].set_ylabel("downbeat activation")
    axes[1].set_ylim(-0.05, 1.05)
    axes[1].set_xlabel("time [s]")
    for b in beats:
        is_down = b.number == 1
        for ax in axes:
            ax.axvline(b.time_s, color="k" if is_down else "gray",
                       lw=1.2 if is_down else 0.6, alpha=0.7 if is_down else 0.4)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_plot(path, history: dict) -> None:
    """Training/validation loss curves plus the learning-rate trace."""
    epochs = np.arange(1, len(history.get("train_loss", [])) + 1)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(epochs, history["train_loss"], marker="o", label="train")
    if history.get("val_loss"):
        ax.plot(epochs, history["val_loss"], marker="s", label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right")
    if history.get("lr"):
        ax2 = ax.twinx()
        ax2.plot(epochs, history["lr"], color="gray", ls="--", lw=0.8)
        ax2.set_yscale("log")
        ax2.set_ylabel("learning rate")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bench_plot(path, rows: list[dict]) -> None:
    """Latency vs real-time factor for each benchmarked block setting."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    lat = [r["latency_ms"] for r in rows]
    rtf = [r["rtf_median"] for r in rows]
    ax.plot(lat, rtf, marker="o")
    for r in rows:
        ax.annotate(f"nc={r['n_center']},nr={r['n_right']}",
                    (r["latency_ms"], r["rtf_median"]),
                    textcoords="offset points", xytext=(6, 4), fontsize=8)
    ax.axhline(1.0, color="red", ls=":", lw=1)
    ax.set_xlabel("algorithmic latency [ms]")
    ax.set_ylabel("real-time factor")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
