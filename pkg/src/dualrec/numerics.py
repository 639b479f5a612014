"""Tensor kernels, gradients and the Adam optimizer used by every model module.

Tensors are plain ``torch.Tensor`` objects; torch's autograd graph plays the
role of the computation tape. Everything here works on the trailing one or two
dimensions, so batched inputs pass through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import torch

PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


class DegenerateRowError(ValueError):
    pass


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"cannot multiply {tuple(a.shape)} by {tuple(b.shape)}"
        )
    return torch.matmul(a, b)


def masked_softmax_rows(logits: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
    """Softmax over the last dim, restricted to entries where ``allowed`` is true.

    Disallowed entries come out as exact zeros. Raises DegenerateRowError when a
    row has nothing allowed.
    """
    if allowed.shape != logits.shape:
        allowed = allowed.expand_as(logits)
    if not bool(allowed.any(dim=-1).all()):
        raise DegenerateRowError("softmax row with every entry masked")
    masked = logits.masked_fill(~allowed, float("-inf"))
    shifted = masked - masked.amax(dim=-1, keepdim=True).detach()
    weights = torch.exp(shifted).masked_fill(~allowed, 0.0)
    return weights / weights.sum(dim=-1, keepdim=True)


def layer_norm(
    x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-12
) -> torch.Tensor:
    if gain.shape[-1] != x.shape[-1] or bias.shape[-1] != x.shape[-1]:
        raise ShapeError(
            f"gain/bias {tuple(gain.shape)}/{tuple(bias.shape)} do not match {tuple(x.shape)}"
        )
    mean = x.mean(dim=-1, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gain + bias


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.clamp(x, min=0.0)


def cross_entropy(predicted: torch.Tensor, target_index: int) -> torch.Tensor:
    """Negative natural log of the probability at ``target_index`` (floored at 1e-12)."""
    if not 0 <= target_index < predicted.shape[-1]:
        raise IndexError(
            f"target index {target_index} outside [0, {predicted.shape[-1]})"
        )
    total = float(predicted.detach().sum())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"predicted distribution sums to {total}, not 1")
    return -torch.log(torch.clamp(predicted[..., target_index], min=PROB_FLOOR))


def kl_divergence(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """KL(p || q) in nats over the last dimension; zero-probability terms of p drop out."""
    if p.shape != q.shape:
        raise ShapeError(f"KL of mismatched shapes {tuple(p.shape)} and {tuple(q.shape)}")
    log_ratio = torch.log(torch.clamp(p, min=PROB_FLOOR)) - torch.log(
        torch.clamp(q, min=PROB_FLOOR)
    )
    return torch.where(p > 0, p * log_ratio, torch.zeros_like(p)).sum(dim=-1)


def dropout_mask(
    shape: Sequence[int],
    rate: float,
    generator: torch.Generator | None = None,
    training: bool = True,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return torch.ones(shape, dtype=dtype)
    keep = torch.rand(shape, generator=generator, dtype=dtype) >= rate
    return keep.to(dtype) / (1.0 - rate)


def backward(loss: torch.Tensor, params: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """Reverse-mode gradients of a scalar loss; parameters the loss ignores get zeros."""
    if loss.numel() != 1:
        raise ValueError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    grads = torch.autograd.grad(loss.reshape(()), list(params), allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    exp_avg: list[torch.Tensor] = field(default_factory=list)
    exp_avg_sq: list[torch.Tensor] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Iterable[torch.Tensor], **hyper) -> "AdamState":
        params = list(params)
        return cls(
            exp_avg=[torch.zeros_like(p) for p in params],
            exp_avg_sq=[torch.zeros_like(p) for p in params],
            **hyper,
        )


@torch.no_grad()
def adam_step(
    params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor], state: AdamState
) -> None:
    """Bias-corrected Adam update, in place; weight decay is added to the gradient."""
    if len(params) != len(state.exp_avg):
        raise ShapeError(
            f"{len(params)} parameters but optimizer state holds {len(state.exp_avg)}"
        )
    state.step += 1
    bias1 = 1.0 - state.beta1**state.step
    bias2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if g.shape != p.shape:
            raise ShapeError(f"gradient {tuple(g.shape)} for parameter {tuple(p.shape)}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        denom = (v / bias2).sqrt_().add_(state.eps)
        p.addcdiv_(m / bias1, denom, value=-state.lr)
