"""Shared item / relative-position tables and fixed-length sequence preparation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

PAD = 0


@dataclass(frozen=True)
class PreparedSequence:
    item_ids: tuple[int, ...]
    real_length: int

    @property
    def n(self) -> int:
        return len(self.item_ids)


def pad_or_truncate(raw: Sequence[int], n: int) -> PreparedSequence:
    """Keep the most recent ``n`` items, left-padding with 0 when shorter."""
    if n < 1:
        raise ValueError(f"sequence length must be >= 1, got {n}")
    if len(raw) == 0:
        raise ValueError("cannot prepare an empty sequence")
    kept = [int(i) for i in raw[-n:]]
    if any(i <= PAD for i in kept):
        raise ValueError("item ids must be positive; 0 is reserved for padding")
    return PreparedSequence(tuple([PAD] * (n - len(kept)) + kept), len(kept))


def relative_distance(i: int, j: int, n: int) -> int:
    """Table row for query position ``i`` and key position ``j`` (1-based)."""
    dist = max(-(n - 1), min(n - 1, j - i))
    return dist + n - 1


def relative_index_matrix(n: int) -> torch.Tensor:
    """n x n matrix of table rows, entry [q, k] = (k - q) + n - 1."""
    pos = torch.arange(n)
    return pos[None, :] - pos[:, None] + (n - 1)


class EmbeddingTables(nn.Module):
    """Item table (row 0 = padding, kept at zero) and per-head relative bias table."""

    def __init__(self, num_items: int, dim: int, max_len: int, heads: int,
                 init_std: float = 0.02, generator: torch.Generator | None = None):
        super().__init__()
        self.num_items = num_items
        self.max_len = max_len
        self.heads = heads
        items = torch.randn(num_items + 1, dim, generator=generator) * init_std
        items[PAD] = 0.0
        self.item_table = nn.Parameter(items)
        self.position_table = nn.Parameter(torch.zeros(2 * max_len - 1, heads))

    def lookup(self, item_ids: torch.Tensor) -> torch.Tensor:
        """(..., n) ids -> (..., n, d); padding rows are exactly zero."""
        if item_ids.numel() and (int(item_ids.max()) > self.num_items or int(item_ids.min()) < 0):
            raise IndexError(
                f"item id outside [0, {self.num_items}] in lookup"
            )
        rows = self.item_table[item_ids]
        return rows * (item_ids != PAD).unsqueeze(-1).to(rows.dtype)

    def position_bias(self, head: int, i: int, j: int) -> torch.Tensor:
        """Bias added to the logit of query ``i`` attending key ``j`` in ``head`` (1-based)."""
        if not 1 <= head <= self.heads:
            raise IndexError(f"head {head} outside [1, {self.heads}]")
        return self.position_table[relative_distance(i, j, self.max_len), head - 1]

    def bias_matrix(self, n: int) -> torch.Tensor:
        """(heads, n, n) relative biases for a length-``n`` window (n <= max_len)."""
        if n > self.max_len:
            raise ValueError(f"sequence length {n} exceeds table length {self.max_len}")
        index = relative_index_matrix(n) + (self.max_len - n)
        return self.position_table[index].permute(2, 0, 1)

    def item_scores(self, outputs: torch.Tensor) -> torch.Tensor:
        """Inner product against every real item; column k-1 scores item k."""
        return outputs @ self.item_table[1:].T
