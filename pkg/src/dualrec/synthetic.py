"""Sequences drawn from a known first-order Markov chain, for oracle checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MarkovChain:
    transition: np.ndarray  # (I, I); row s-1 is P(next | current = s)
    initial: np.ndarray

    @property
    def num_items(self) -> int:
        return self.transition.shape[0]

    @classmethod
    def random(cls, num_items: int, successors: int = 4, concentration: float = 1.0,
               seed: int = 0, weights=None) -> "MarkovChain":
        """Each state moves to ``successors`` random states.

        Row weights are Dirichlet draws, or the fixed ``weights`` (normalised)
        assigned to randomly chosen successors.
        """
        rng = np.random.default_rng(seed)
        if weights is not None:
            weights = np.asarray(weights, dtype=float) / np.sum(weights)
            successors = len(weights)
        trans = np.zeros((num_items, num_items))
        for s in range(num_items):
            nxt = rng.choice(num_items, size=successors, replace=False)
            if weights is None:
                trans[s, nxt] = rng.dirichlet(np.full(successors, concentration))
            else:
                trans[s, nxt] = weights
        return cls(trans, np.full(num_items, 1.0 / num_items))

    def sample(self, users: int, length: int, seed: int = 0) -> list[list[int]]:
        """``users`` sequences of 1-based item ids."""
        rng = np.random.default_rng(seed)
        cdf = np.cumsum(self.transition, axis=1)
        cdf[:, -1] = 1.0
        seqs = []
        for _ in range(users):
            state = int(rng.choice(self.num_items, p=self.initial))
            seq = [state]
            draws = rng.random(length - 1)
            for u in draws:
                state = int(np.searchsorted(cdf[state], u, side="right"))
                seq.append(state)
            seqs.append([s + 1 for s in seq])
        return seqs
