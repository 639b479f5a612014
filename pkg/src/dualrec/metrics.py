"""Ranking metrics over sampled candidate lists and the evaluation driver."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .data import EvalInstance

KS_HR = (1, 5, 10)
KS_NDCG = (5, 10)

# (histories, candidate id matrix) -> score matrix of the same shape
Scorer = Callable[[Sequence[Sequence[int]], torch.Tensor], torch.Tensor]


def rank_ground_truth(scores: Sequence[float], truth_index: int,
                      candidate_ids: Sequence[int] | None = None) -> int:
    """1-based rank of the truth; equal scores are ordered by ascending item id."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.arange(len(scores)) if candidate_ids is None else np.asarray(candidate_ids)
    s, i = scores[truth_index], ids[truth_index]
    return 1 + int(np.sum(scores > s)) + int(np.sum((scores == s) & (ids < i)))


def hr_at_k(rank: int, k: int) -> float:
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank: int, k: int) -> float:
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def mrr(rank: int) -> float:
    return 1.0 / rank


@dataclass
class MetricsReport:
    values: dict[str, float]
    instances: int
    meta: dict[str, str] = field(default_factory=dict)

    KEYS = tuple(f"hr@{k}" for k in KS_HR) + tuple(f"ndcg@{k}" for k in KS_NDCG) + ("mrr",)

    @classmethod
    def from_ranks(cls, ranks: Sequence[int], **meta) -> "MetricsReport":
        if len(ranks) == 0:
            raise ValueError("cannot report metrics over zero instances")
        ranks = list(ranks)
        values = {}
        for k in KS_HR:
            values[f"hr@{k}"] = math.fsum(hr_at_k(r, k) for r in ranks) / len(ranks)
        for k in KS_NDCG:
            values[f"ndcg@{k}"] = math.fsum(ndcg_at_k(r, k) for r in ranks) / len(ranks)
        values["mrr"] = math.fsum(mrr(r) for r in ranks) / len(ranks)
        return cls(values, len(ranks), {k: str(v) for k, v in meta.items()})

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def to_line(self) -> str:
        """One ``key=value`` line, metadata first, metrics to 6 decimals."""
        parts = [f"{k}={v}" for k, v in self.meta.items()]
        parts.append(f"instances={self.instances}")
        parts += [f"{k}={self.values[k]:.6f}" for k in self.KEYS]
        return " ".join(parts)

    @classmethod
    def from_line(cls, line: str) -> "MetricsReport":
        pairs = dict(part.split("=", 1) for part in line.split())
        values = {k: float(pairs.pop(k)) for k in cls.KEYS}
        instances = int(pairs.pop("instances"))
        return cls(values, instances, pairs)


def instance_ranks(scorer: Scorer, instances: Sequence[EvalInstance],
                   batch_size: int = 256) -> list[int]:
    ranks: list[int] = []
    for start in range(0, len(instances), batch_size):
        chunk = instances[start:start + batch_size]
        width = {len(inst.candidates) for inst in chunk}
        if len(width) != 1:
            raise ValueError("instances in a batch must have equally many candidates")
        cands = torch.tensor([inst.candidates for inst in chunk], dtype=torch.long)
        scores = scorer([inst.history for inst in chunk], cands).double().numpy()
        ids = cands.numpy()
        truth = scores[:, :1]
        ahead = (scores > truth) | ((scores == truth) & (ids < ids[:, :1]))
        ranks.extend((1 + ahead.sum(axis=1)).tolist())
    return ranks


def evaluate_model(scorer: Scorer, instances: Sequence[EvalInstance],
                   batch_size: int = 256, **meta) -> MetricsReport:
    """Mean per-instance metrics; the ground truth sits at candidate slot 0."""
    if not instances:
        raise ValueError("no evaluation instances")
    return MetricsReport.from_ranks(instance_ranks(scorer, instances, batch_size), **meta)
