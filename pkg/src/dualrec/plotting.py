"""Figures written next to the text reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DEFAULT_RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "legend.fontsize": 8,
    "figure.dpi": 120,
}


def training_curves(records: Sequence, path: str | Path) -> Path:
    epochs = [r.epoch for r in records]
    with plt.rc_context(DEFAULT_RC):
        fig, (ax_loss, ax_val) = plt.subplots(1, 2, figsize=(8, 3))
        ax_loss.plot(epochs, [r.loss for r in records], label="total")
        ax_loss.plot(epochs, [r.l_past for r in records], label="past")
        ax_loss.plot(epochs, [r.l_future for r in records], label="future")
        ax_loss.plot(epochs, [r.l_reg for r in records], label="BIT")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("loss")
        ax_loss.legend(frameon=False)
        val = [(r.epoch, r.val_hr5, r.val_ndcg5) for r in records if r.val_hr5 is not None]
        if val:
            e, hr, nd = zip(*val)
            ax_val.plot(e, hr, label="HR@5")
            ax_val.plot(e, nd, label="NDCG@5")
            ax_val.legend(frameon=False)
        ax_val.set_xlabel("epoch")
        ax_val.set_ylabel("validation")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def attention_heatmaps(grids: dict[tuple[int, int], np.ndarray], path: str | Path,
                       diverging: bool = False) -> Path:
    """One panel per (layer, head); ``diverging`` centres the colour map on zero."""
    layers = sorted({l for l, _ in grids})
    heads = sorted({h for _, h in grids})
    with plt.rc_context(DEFAULT_RC):
        fig, axes = plt.subplots(len(layers), len(heads), squeeze=False,
                                 figsize=(1.8 * len(heads) + 0.6, 1.8 * len(layers) + 0.4))
        for r, layer in enumerate(layers):
            for c, head in enumerate(heads):
                ax = axes[r][c]
                grid = grids[(layer, head)]
                if diverging:
                    lim = float(np.abs(grid).max()) or 1.0
                    im = ax.imshow(grid, cmap="RdBu_r", vmin=-lim, vmax=lim)
                else:
                    im = ax.imshow(grid, cmap="viridis", vmin=0.0, vmax=1.0)
                ax.set_title(f"layer {layer} head {head}")
                ax.set_xticks([])
                ax.set_yticks([])
        fig.colorbar(im, ax=axes, shrink=0.8)
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
