"""Report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "savefig.bbox": "tight",
    # fixed metadata keeps repeated runs byte-identical
    "svg.hashsalt": "procseq",
}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def loss_curve(epochs: list[dict], path: str | Path, title: str = "training loss") -> Path:
    """Train (and validation, when present) loss per epoch."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        x = [e["epoch"] for e in epochs]
        ax.plot(x, [e["train_loss"] for e in epochs], label="train", color="tab:blue")
        if epochs and "val_loss" in epochs[0]:
            ax.plot(x, [e["val_loss"] for e in epochs], label="validation", color="tab:orange")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title(title)
        if epochs:
            ax.legend(frameon=False)
        return _save(fig, Path(path))


def similarity_histogram(similarities, path: str | Path, title: str = "suffix similarity") -> Path:
    sims = np.asarray(similarities, dtype=float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.hist(sims, bins=np.linspace(0.0, 1.0, 21), color="tab:green", edgecolor="white")
        if sims.size:
            ax.axvline(sims.mean(), color="black", linestyle="--", linewidth=1,
                       label=f"mean {sims.mean():.3f}")
            ax.legend(frameon=False)
        ax.set_xlabel("normalized edit similarity")
        ax.set_ylabel("samples")
        ax.set_title(title)
        return _save(fig, Path(path))


def accuracy_by_prefix(prefix_lengths, correct, path: str | Path, title: str = "next-activity accuracy") -> Path:
    lengths = np.asarray(prefix_lengths, dtype=int)
    hits = np.asarray(correct, dtype=float)
    keys = np.unique(lengths)
    acc = [hits[lengths == k].mean() for k in keys]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.bar(keys, acc, color="tab:blue")
        ax.set_ylim(0.0, 1.0)
        ax.set_xlabel("prefix length")
        ax.set_ylabel("accuracy")
        ax.set_title(title)
        return _save(fig, Path(path))
