"""Epoch loop: seeded shuffling, Adam updates, validation and early stopping."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .config import RunConfig
from .data import EvalInstance
from .dualnet import DualRec, LossConfig
from .embedding import pad_or_truncate
from .metrics import MetricsReport, evaluate_model
from .numerics import AdamState, adam_step, backward

logger = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    l_past: float
    l_future: float
    l_reg: float
    val_hr5: float | None
    val_ndcg5: float | None
    seconds: float

    def to_line(self, with_time: bool = True) -> str:
        parts = [f"epoch={self.epoch}", f"loss={self.loss:.6f}", f"l_past={self.l_past:.6f}",
                 f"l_future={self.l_future:.6f}", f"l_reg={self.l_reg:.6f}"]
        if self.val_hr5 is not None:
            parts += [f"val_hr@5={self.val_hr5:.6f}", f"val_ndcg@5={self.val_ndcg5:.6f}"]
        if with_time:
            parts.append(f"time={self.seconds:.2f}s")
        return " ".join(parts)


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_hr5: float = -1.0
    best_state: dict | None = None
    best_adam: AdamState | None = None


def build_model(config: RunConfig, num_items: int) -> DualRec:
    return DualRec(num_items, config.n, config.d, config.heads, config.layers,
                   config.dropout, config.seed)


def prepare_batch(seqs: Sequence[Sequence[int]], n: int) -> torch.Tensor:
    return torch.tensor([pad_or_truncate(s, n).item_ids for s in seqs], dtype=torch.long)


def train_epoch(model: DualRec, batches: list[torch.Tensor], loss_config: LossConfig,
                adam: AdamState) -> tuple[float, float, float, float]:
    params = list(model.parameters())
    sums = np.zeros(4)
    for batch in batches:
        parts = model.training_loss(batch, loss_config, training=True)
        if not torch.isfinite(parts.total):
            raise NumericError(f"non-finite training loss at optimizer step {adam.step + 1}")
        grads = backward(parts.total, params)
        adam_step(params, grads, adam)
        sums += [float(t.detach()) for t in (parts.total, parts.past, parts.future, parts.reg)]
    return tuple(sums / max(len(batches), 1))


def train(model: DualRec, train_seqs: Sequence[Sequence[int]], config: RunConfig,
          valid: Sequence[EvalInstance] | None = None,
          on_epoch: Callable[[EpochRecord, TrainResult], None] | None = None) -> TrainResult:
    """Train ``model`` in place; the best-validation weights end up loaded.

    Without ``valid`` every epoch counts as an improvement, so the run simply
    lasts ``config.epochs`` epochs.
    """
    torch.manual_seed(config.seed)
    seqs = [list(s) for s in train_seqs if len(s) >= 2]
    if not seqs:
        raise ValueError("no training sequence has two or more items")
    data = prepare_batch(seqs, config.n)
    rng = np.random.default_rng(config.seed)
    loss_config = LossConfig(config.alpha, config.beta)
    adam = AdamState.for_params(model.parameters(), lr=config.learning_rate,
                                weight_decay=config.weight_decay)
    result = TrainResult()
    stale = 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = torch.from_numpy(rng.permutation(len(seqs)))
        batches = [data[order[i:i + config.batch_size]]
                   for i in range(0, len(seqs), config.batch_size)]
        loss, l_past, l_future, l_reg = train_epoch(model, batches, loss_config, adam)
        hr5 = ndcg5 = None
        if valid:
            report = evaluate_model(model.score_candidates, valid, config.batch_size)
            hr5, ndcg5 = report["hr@5"], report["ndcg@5"]
        record = EpochRecord(epoch, loss, l_past, l_future, l_reg, hr5, ndcg5,
                             time.perf_counter() - start)
        result.history.append(record)
        score = hr5 if hr5 is not None else float(epoch)
        if score > result.best_hr5:
            result.best_hr5, result.best_epoch, stale = score, epoch, 0
            result.best_state = copy.deepcopy(model.state_dict())
            result.best_adam = copy.deepcopy(adam)
        else:
            stale += 1
        logger.info(record.to_line())
        if on_epoch is not None:
            on_epoch(record, result)
        if stale >= config.patience:
            logger.info("early stop after %d epochs without improvement", stale)
            break
    if result.best_state is not None:
        model.load_state_dict(result.best_state)
    return result
