"""Transformer backbone with per-head multi-scale windows over a causal mask.

The same module serves as the past encoder (each position sees itself and
earlier items) or the future encoder (itself and later items); only the
``direction`` flag differs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Protocol

import torch
from torch import nn

from .embedding import EmbeddingTables
from .numerics import dropout_mask, layer_norm, masked_softmax_rows, matmul, relu

Direction = Literal["past", "future"]


class ConfigError(ValueError):
    pass


def window_sizes(heads: int, n: int) -> list[int]:
    """Per-head window sizes: linear for the first half of heads, exponential after."""
    if heads < 2 or heads % 2:
        raise ConfigError(f"head count must be even and >= 2, got {heads}")
    half = heads // 2
    if n <= half:
        raise ConfigError(f"sequence length {n} must exceed half the head count ({half})")
    sizes = []
    for i in range(1, heads + 1):
        if i <= half:
            sizes.append(i + 1)
        else:
            frac = math.exp(i - half) / math.exp(half)
            sizes.append(half + math.ceil(frac * (n - half)))
    return sizes


@dataclass(frozen=True)
class AttentionMaskSpec:
    direction: Direction
    window_sizes: tuple[int, ...]
    n: int

    @classmethod
    def build(cls, direction: Direction, heads: int, n: int) -> "AttentionMaskSpec":
        if direction not in ("past", "future"):
            raise ConfigError(f"unknown direction {direction!r}")
        return cls(direction, tuple(window_sizes(heads, n)), n)


def attention_masks(spec: AttentionMaskSpec, real: torch.Tensor) -> torch.Tensor:
    """Boolean masks of shape (..., heads, n, n); ``real`` is (..., n).

    Entry [h, q, k] says whether query q may attend key k in head h. Padding
    keys are never attendable; padding queries attend only themselves.
    """
    n = real.shape[-1]
    pos = torch.arange(n)
    offset = pos[None, :] - pos[:, None]  # key minus query
    sigma = torch.tensor(spec.window_sizes)[:, None, None]
    if spec.direction == "past":
        band = (offset <= 0) & (offset >= -sigma)
    else:
        band = (offset >= 0) & (offset <= sigma)
    real_key = real.unsqueeze(-2).unsqueeze(-3)  # (..., 1, 1, n)
    allowed = band & real_key
    pad_query = (~real).unsqueeze(-1).unsqueeze(-3)  # (..., 1, n, 1)
    eye = torch.eye(n, dtype=torch.bool)
    return torch.where(pad_query, eye, allowed)


def build_mask(spec: AttentionMaskSpec, head: int, real_length: int) -> torch.Tensor:
    """n x n mask for one head (1-based) of a left-padded sequence."""
    if not 1 <= head <= len(spec.window_sizes):
        raise IndexError(f"head {head} outside [1, {len(spec.window_sizes)}]")
    real = torch.arange(spec.n) >= spec.n - real_length
    return attention_masks(spec, real)[head - 1]


@dataclass
class EncoderOutput:
    final_states: torch.Tensor  # (B, n, d)
    head_outputs: torch.Tensor  # (B, h, n, d/h), final layer, before W^o
    attentions: list[torch.Tensor]  # per layer, (B, h, n, n)

    @property
    def head_distributions(self) -> torch.Tensor:
        """Softmax of each head's output vector over its features."""
        return torch.softmax(self.head_outputs, dim=-1)


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, init_std: float = 0.02,
                 generator: torch.Generator | None = None):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"embedding size {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads

        def weight(*shape):
            return nn.Parameter(torch.randn(*shape, generator=generator) * init_std)

        self.w_q = weight(dim, dim)
        self.w_k = weight(dim, dim)
        self.w_v = weight(dim, dim)
        self.w_o = weight(dim, dim)
        self.ff_w1 = weight(dim, dim)
        self.ff_b1 = nn.Parameter(torch.zeros(dim))
        self.ff_w2 = weight(dim, dim)
        self.ff_b2 = nn.Parameter(torch.zeros(dim))
        self.ln1_gain = nn.Parameter(torch.ones(dim))
        self.ln1_bias = nn.Parameter(torch.zeros(dim))
        self.ln2_gain = nn.Parameter(torch.ones(dim))
        self.ln2_bias = nn.Parameter(torch.zeros(dim))

    def _split_heads(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.dim // self.heads).transpose(1, 2)

    def attention(self, x, masks, bias, dropout=0.0, generator=None, training=False):
        """Multi-scale self-attention.

        Returns the projected output (B, n, d), the per-head outputs
        (B, h, n, d/h) and the attention probabilities (B, h, n, n).
        """
        q = self._split_heads(matmul(x, self.w_q))
        k = self._split_heads(matmul(x, self.w_k))
        v = self._split_heads(matmul(x, self.w_v))
        logits = matmul(q, k.transpose(-1, -2)) / math.sqrt(self.dim // self.heads)
        probs = masked_softmax_rows(logits + bias, masks)
        dropped = probs * dropout_mask(probs.shape, dropout, generator, training, probs.dtype)
        heads = matmul(dropped, v)
        b, h, n, dh = heads.shape
        merged = heads.transpose(1, 2).reshape(b, n, h * dh)
        return matmul(merged, self.w_o), heads, probs

    def feed_forward(self, x: torch.Tensor) -> torch.Tensor:
        return matmul(relu(matmul(x, self.ff_w1) + self.ff_b1), self.ff_w2) + self.ff_b2

    def forward(self, x, masks, bias, dropout=0.0, generator=None, training=False):
        attended, heads, probs = self.attention(x, masks, bias, dropout, generator, training)
        attended = attended * dropout_mask(attended.shape, dropout, generator, training, x.dtype)
        h = layer_norm(x + attended, self.ln1_gain, self.ln1_bias)
        ff = self.feed_forward(h)
        ff = ff * dropout_mask(ff.shape, dropout, generator, training, x.dtype)
        return layer_norm(h + ff, self.ln2_gain, self.ln2_bias), heads, probs


class Backbone(Protocol):
    """Direction-parameterized sequence encoder; the Transformer below is the only one shipped."""

    direction: Direction

    def __call__(self, x: torch.Tensor, real: torch.Tensor, tables: EmbeddingTables,
                 training: bool = False,
                 generator: torch.Generator | None = None) -> EncoderOutput: ...


class TransformerEncoder(nn.Module):
    def __init__(self, direction: Direction, dim: int, heads: int, layers: int,
                 max_len: int, dropout: float = 0.0, init_std: float = 0.02,
                 generator: torch.Generator | None = None):
        super().__init__()
        if layers < 1:
            raise ConfigError(f"an encoder needs at least one layer, got {layers}")
        if not 0.0 <= dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {dropout}")
        self.direction = direction
        self.heads = heads
        self.dropout = dropout
        self.mask_spec = AttentionMaskSpec.build(direction, heads, max_len)
        self.layers = nn.ModuleList(
            EncoderLayer(dim, heads, init_std, generator) for _ in range(layers)
        )

    def forward(self, x: torch.Tensor, real: torch.Tensor, tables: EmbeddingTables,
                training: bool = False,
                generator: torch.Generator | None = None) -> EncoderOutput:
        n = x.shape[-2]
        spec = self.mask_spec
        if n != spec.n:
            spec = AttentionMaskSpec(spec.direction, spec.window_sizes, n)
        masks = attention_masks(spec, real)
        bias = tables.bias_matrix(n).to(x.dtype)
        attentions = []
        heads = None
        for layer in self.layers:
            x, heads, probs = layer(x, masks, bias, self.dropout, generator, training)
            attentions.append(probs)
        return EncoderOutput(x, heads, attentions)
