"""The dual network: past and future encoders over one shared embedding layer.

Training combines next-item loss (past encoder), previous-item loss (future
encoder) and a symmetric-KL term tying their per-head representations
together. Inference uses the past encoder alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from .embedding import PAD, EmbeddingTables, PreparedSequence, pad_or_truncate
from .encoder import ConfigError, EncoderOutput, TransformerEncoder
from .numerics import kl_divergence


class DegenerateBatchError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")


@dataclass
class BatchForward:
    real: torch.Tensor  # (B, n) bool
    past: EncoderOutput
    future: EncoderOutput

    @property
    def past_outputs(self) -> torch.Tensor:
        return self.past.final_states

    @property
    def future_outputs(self) -> torch.Tensor:
        return self.future.final_states


@dataclass
class LossBreakdown:
    total: torch.Tensor
    past: torch.Tensor
    future: torch.Tensor
    reg: torch.Tensor


def bit_loss(past_heads: torch.Tensor, future_heads: torch.Tensor,
             real: torch.Tensor | None = None) -> torch.Tensor:
    """Symmetric KL between matching heads of the two encoders.

    Inputs are probability vectors of shape (B, h, n, k). Each head's
    divergence is averaged over real positions, then heads are summed.
    """
    if past_heads.shape[-3] != future_heads.shape[-3]:
        raise ConfigError(
            f"head count mismatch: {past_heads.shape[-3]} vs {future_heads.shape[-3]}"
        )
    sym = 0.5 * (kl_divergence(past_heads, future_heads) + kl_divergence(future_heads, past_heads))
    if real is None:
        return sym.mean(dim=(0, 2)).sum() if sym.dim() == 3 else sym.mean(dim=-1).sum()
    weight = real.unsqueeze(-2).to(sym.dtype)  # (B, 1, n)
    count = weight.sum()
    if count == 0:
        return sym.new_zeros(())
    return ((sym * weight).sum(dim=(0, 2)) / count).sum()


def predict_distribution(scores: torch.Tensor) -> torch.Tensor:
    return torch.softmax(scores, dim=-1)


def _stack(batch: Sequence[PreparedSequence] | torch.Tensor) -> torch.Tensor:
    if isinstance(batch, torch.Tensor):
        return batch.long()
    lengths = {seq.n for seq in batch}
    if len(lengths) != 1:
        raise ConfigError(f"inconsistent sequence lengths in batch: {sorted(lengths)}")
    return torch.tensor([seq.item_ids for seq in batch], dtype=torch.long)


class DualRec(nn.Module):
    def __init__(self, num_items: int, max_len: int = 50, dim: int = 64, heads: int = 8,
                 layers: int = 2, dropout: float = 0.5, seed: int = 0,
                 init_std: float = 0.02):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"embedding size {dim} is not divisible by {heads} heads")
        init = torch.Generator().manual_seed(seed)
        self.num_items = num_items
        self.max_len = max_len
        self.tables = EmbeddingTables(num_items, dim, max_len, heads, init_std, init)
        self.past_encoder = TransformerEncoder("past", dim, heads, layers, max_len,
                                               dropout, init_std, init)
        self.future_encoder = TransformerEncoder("future", dim, heads, layers, max_len,
                                                 dropout, init_std, init)
        self.dropout_generator = torch.Generator().manual_seed(seed + 1)

    def forward_dual(self, batch, training: bool = False) -> BatchForward:
        ids = _stack(batch)
        real = ids != PAD
        x = self.tables.lookup(ids)
        gen = self.dropout_generator
        past = self.past_encoder(x, real, self.tables, training, gen)
        future = self.future_encoder(x, real, self.tables, training, gen)
        return BatchForward(real, past, future)

    def encode_past(self, batch) -> EncoderOutput:
        ids = _stack(batch)
        return self.past_encoder(self.tables.lookup(ids), ids != PAD, self.tables)

    def score_items(self, outputs: torch.Tensor) -> torch.Tensor:
        return self.tables.item_scores(outputs)

    def training_loss(self, batch, config: LossConfig = LossConfig(),
                      training: bool = True) -> LossBreakdown:
        ids = _stack(batch)
        fwd = self.forward_dual(ids, training)
        real = fwd.real
        n = ids.shape[-1]
        targets = ids[:, 1:n - 1]  # positions 2..n-1 (1-based)
        past_ok = real[:, 1:n - 1] & real[:, 0:n - 2]
        future_ok = real[:, 1:n - 1] & real[:, 2:n]
        if not bool(past_ok.any()) and not bool(future_ok.any()):
            raise DegenerateBatchError("no position in the batch has a target with context")

        def ce(context: torch.Tensor, ok: torch.Tensor) -> torch.Tensor:
            count = ok.sum()
            if count == 0:
                return context.new_zeros(())
            logp = torch.log_softmax(self.score_items(context), dim=-1)
            picked = logp.gather(-1, (targets.clamp(min=1) - 1).unsqueeze(-1)).squeeze(-1)
            return -(picked * ok.to(picked.dtype)).sum() / count

        l_past = ce(fwd.past_outputs[:, 0:n - 2], past_ok)
        l_future = ce(fwd.future_outputs[:, 2:n], future_ok)
        l_reg = bit_loss(fwd.past.head_distributions, fwd.future.head_distributions, real)
        total = config.alpha * l_past + (1.0 - config.alpha) * l_future + config.beta * l_reg
        return LossBreakdown(total, l_past, l_future, l_reg)

    @torch.no_grad()
    def last_state_scores(self, histories: Sequence[Sequence[int]]) -> torch.Tensor:
        """Past-encoder scores over all items at the last real position of each history."""
        prepared = [pad_or_truncate(h, self.max_len) for h in histories]
        out = self.encode_past(prepared).final_states[:, -1]
        return self.score_items(out)

    @torch.no_grad()
    def score_candidates(self, histories: Sequence[Sequence[int]],
                         candidates: torch.Tensor) -> torch.Tensor:
        scores = self.last_state_scores(histories)
        return scores.gather(-1, candidates.long() - 1)

    @torch.no_grad()
    def predict_next(self, history: PreparedSequence | Sequence[int], k: int = 10) -> list[int]:
        """Top-``k`` items after ``history``; equal scores rank by ascending item id."""
        ids = history.item_ids if isinstance(history, PreparedSequence) else tuple(history)
        real = [i for i in ids if i != PAD]
        if not real:
            raise ValueError("history has no real items")
        scores = self.last_state_scores([real])[0]
        order = torch.sort(-scores, stable=True).indices
        return [int(i) + 1 for i in order[:k]]
