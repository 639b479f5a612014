"""Per-layer, per-head attention grids and checkpoint-to-checkpoint differences."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dualnet import DualRec
from .embedding import PAD, pad_or_truncate


def mean_attention(model: DualRec, sequences: Sequence[Sequence[int]],
                   encoder: str = "past") -> tuple[dict[tuple[int, int], np.ndarray], int]:
    """Average attention per (layer, head) over the sequences whose query is real.

    Padding keys get no attention, so every averaged row still sums to one.
    Grids are right-aligned and cropped to the longest real length; the second
    return value is that length.
    """
    for seq in sequences:
        bad = [i for i in seq if not 1 <= i <= model.num_items]
        if bad:
            raise ValueError(f"unknown item ids {bad[:5]} (catalog has {model.num_items} items)")
    ids = torch.tensor([pad_or_truncate(s, model.max_len).item_ids for s in sequences])
    real = ids != PAD
    width = int(real.sum(dim=1).max())
    with torch.no_grad():
        x = model.tables.lookup(ids)
        enc = model.past_encoder if encoder == "past" else model.future_encoder
        out = enc(x, real, model.tables)
    query = real.double()[:, None, :, None]  # (B, 1, n, 1)
    count = query.sum(dim=0)
    grids = {}
    for layer, probs in enumerate(out.attentions, 1):
        total = (probs.double() * query).sum(dim=0)  # (h, n, n)
        mean = torch.where(count > 0, total / count.clamp(min=1), torch.zeros_like(total))
        for head in range(mean.shape[0]):
            grids[(layer, head + 1)] = mean[head, -width:, -width:].numpy()
    return grids, width


def format_grids(grids: dict[tuple[int, int], np.ndarray], windows: Sequence[int] | None = None) -> str:
    blocks = []
    for (layer, head), grid in sorted(grids.items()):
        header = f"# layer={layer} head={head}"
        if windows is not None:
            header += f" window={windows[head - 1]}"
        rows = [" ".join(f"{v:.6f}" for v in row) for row in grid]
        blocks.append("\n".join([header, *rows]))
    return "\n\n".join(blocks) + "\n"


def parse_grids(text: str) -> dict[tuple[int, int], np.ndarray]:
    grids: dict[tuple[int, int], np.ndarray] = {}
    for block in text.strip().split("\n\n"):
        lines = block.strip().splitlines()
        fields = dict(part.split("=") for part in lines[0].lstrip("# ").split())
        grids[(int(fields["layer"]), int(fields["head"]))] = np.array(
            [[float(v) for v in line.split()] for line in lines[1:]])
    return grids


def write_dump(grids: dict[tuple[int, int], np.ndarray], path: str | Path,
               windows: Sequence[int] | None = None) -> Path:
    path = Path(path)
    path.write_text(format_grids(grids, windows), encoding="utf-8")
    return path
