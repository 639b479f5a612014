"""Interaction-log ingestion, k-core filtering, leave-one-out splits and negatives.

File formats
------------
raw interactions
    ``user,item,timestamp`` per line, tab- or comma-separated (one delimiter
    per file), or one user per line as ``user item item ...`` with the items
    already in chronological order.
prepared dataset
    header ``#items=<I> #users=<U>`` then ``user_index<TAB>item item ...``
    with dense 1-based ids.
negatives
    ``user_index<TAB>id1 ... id99``.
"""

from __future__ import annotations

import hashlib
import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

MIN_INTERACTIONS = 5
NUM_NEGATIVES = 99


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int


@dataclass
class DatasetSummary:
    users: int
    items: int
    interactions: int

    @property
    def density(self) -> float:
        return self.interactions / (self.users * self.items) if self.users and self.items else 0.0

    def table(self) -> str:
        return (
            f"{'users':>12} {'items':>12} {'interactions':>14} {'density':>9}\n"
            f"{self.users:>12,} {self.items:>12,} {self.interactions:>14,} {self.density:>9.2%}"
        )


@dataclass
class SequenceDataset:
    """Dense user sequences; ``sequences[u]`` is user u+1's chronological item list."""

    num_items: int
    sequences: list[list[int]]
    user_ids: list[str] | None = None
    item_ids: list[str] | None = None

    @property
    def num_users(self) -> int:
        return len(self.sequences)

    def summary(self) -> DatasetSummary:
        return DatasetSummary(self.num_users, self.num_items, sum(map(len, self.sequences)))


@dataclass(frozen=True)
class EvalInstance:
    user: int
    history: tuple[int, ...]
    ground_truth: int
    negatives: tuple[int, ...]

    @property
    def candidates(self) -> tuple[int, ...]:
        return (self.ground_truth,) + self.negatives


def _detect_format(first: str) -> tuple[str, str | None]:
    for delim in ("\t", ","):
        fields = first.split(delim)
        if len(fields) == 3 and fields[2].strip().lstrip("-").isdigit():
            return "records", delim
    return "sequences", None


def read_raw(path: str | Path) -> tuple[list[InteractionRecord] | None, dict[str, list[str]] | None]:
    """Parse a raw file into records (timestamped) or pre-ordered per-user item lists."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    numbered = [(no, line) for no, line in enumerate(lines, 1) if line.strip()]
    if not numbered:
        raise DataError(f"{path}: no records")
    kind, delim = _detect_format(numbered[0][1])
    if kind == "records":
        records = []
        for no, line in numbered:
            fields = line.split(delim)
            if len(fields) != 3:
                raise DataError(f"{path}:{no}: expected 3 fields, got {len(fields)}")
            user, item, ts = (f.strip() for f in fields)
            try:
                records.append(InteractionRecord(user, item, int(ts)))
            except ValueError:
                raise DataError(f"{path}:{no}: timestamp {ts!r} is not an integer") from None
        return records, None
    sequences: dict[str, list[str]] = {}
    for no, line in numbered:
        fields = line.split()
        if len(fields) < 2:
            raise DataError(f"{path}:{no}: user line without items")
        sequences.setdefault(fields[0], []).extend(fields[1:])
    return None, sequences


def group_records(records: Iterable[InteractionRecord]) -> dict[str, list[str]]:
    """Group by user and stable-sort each user's items by timestamp."""
    by_user: dict[str, list[InteractionRecord]] = defaultdict(list)
    for rec in records:
        by_user[rec.user_id].append(rec)
    return {u: [r.item_id for r in sorted(rs, key=lambda r: r.timestamp)]
            for u, rs in by_user.items()}


def filter_k_core(sequences: dict[str, list[str]], k: int = MIN_INTERACTIONS) -> dict[str, list[str]]:
    """Drop users and items with fewer than ``k`` interactions, repeating until stable."""
    seqs = {u: list(items) for u, items in sequences.items()}
    while True:
        item_counts = Counter(i for items in seqs.values() for i in items)
        bad_items = {i for i, c in item_counts.items() if c < k}
        changed = False
        if bad_items:
            seqs = {u: [i for i in items if i not in bad_items] for u, items in seqs.items()}
            changed = True
        short = [u for u, items in seqs.items() if len(items) < k]
        if short:
            for u in short:
                del seqs[u]
            changed = True
        if not changed:
            return seqs


def ingest_interactions(path: str | Path, min_count: int = MIN_INTERACTIONS) -> SequenceDataset:
    records, sequences = read_raw(path)
    if records is not None:
        sequences = group_records(records)
    kept = filter_k_core(sequences, min_count)
    if not kept:
        raise DataError(f"{path}: no users survive the {min_count}-interaction filter")
    item_index: dict[str, int] = {}
    user_ids = list(kept)
    dense = []
    for u in user_ids:
        row = []
        for item in kept[u]:
            if item not in item_index:
                item_index[item] = len(item_index) + 1
            row.append(item_index[item])
        dense.append(row)
    return SequenceDataset(len(item_index), dense, user_ids, list(item_index))


def split_leave_one_out(seq: Sequence[int]) -> tuple[list[int], tuple[list[int], int], tuple[list[int], int]]:
    """Return (train, (valid history, valid target), (test history, test target))."""
    if len(seq) < 3:
        raise DataError(f"leave-one-out needs >= 3 items, got {len(seq)}")
    seq = list(seq)
    return seq[:-2], (seq[:-2], seq[-2]), (seq[:-1], seq[-1])


def training_sequences(dataset: SequenceDataset) -> list[list[int]]:
    out, skipped = [], 0
    for seq in dataset.sequences:
        if len(seq) < 3:
            skipped += 1
            continue
        out.append(split_leave_one_out(seq)[0])
    if skipped:
        logger.warning("skipped %d users with fewer than 3 interactions", skipped)
    return out


def _user_rng(seed: int, user: int) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{user}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))


def sample_negatives(user: int, num_items: int, interacted: set[int],
                     k: int = NUM_NEGATIVES, seed: int = 0) -> list[int]:
    """``k`` distinct items from 1..num_items the user never touched; fixed by (seed, user)."""
    available = num_items - sum(1 for i in interacted if 1 <= i <= num_items)
    if available < k:
        raise DataError(
            f"user {user}: only {available} non-interacted items, need {k} negatives"
        )
    rng = _user_rng(seed, user)
    if available < 4 * k:
        pool = [i for i in range(1, num_items + 1) if i not in interacted]
        return rng.sample(pool, k)
    # rejection sampling keeps large catalogs cheap
    picked: list[int] = []
    chosen: set[int] = set()
    while len(picked) < k:
        item = rng.randint(1, num_items)
        if item not in interacted and item not in chosen:
            chosen.add(item)
            picked.append(item)
    return picked


def build_negatives(dataset: SequenceDataset, seed: int = 0,
                    k: int = NUM_NEGATIVES) -> dict[int, list[int]]:
    return {u: sample_negatives(u, dataset.num_items, set(seq), k, seed)
            for u, seq in enumerate(dataset.sequences, 1)}


def write_dataset(dataset: SequenceDataset, path: str | Path) -> None:
    lines = [f"#items={dataset.num_items} #users={dataset.num_users}"]
    lines += [f"{u}\t{' '.join(map(str, seq))}" for u, seq in enumerate(dataset.sequences, 1)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(path: str | Path) -> SequenceDataset:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DataError(f"{path}: missing '#items=... #users=...' header")
    try:
        header = dict(part.lstrip("#").split("=") for part in lines[0].split())
        num_items, num_users = int(header["items"]), int(header["users"])
    except (KeyError, ValueError):
        raise DataError(f"{path}:1: malformed header {lines[0]!r}") from None
    sequences = []
    for no, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        user, _, items = line.partition("\t")
        try:
            seq = [int(i) for i in items.split()]
        except ValueError:
            raise DataError(f"{path}:{no}: non-integer item id") from None
        if int(user) != len(sequences) + 1:
            raise DataError(f"{path}:{no}: expected user {len(sequences) + 1}, got {user}")
        if not seq or min(seq) < 1 or max(seq) > num_items:
            raise DataError(f"{path}:{no}: item id outside [1, {num_items}]")
        sequences.append(seq)
    if len(sequences) != num_users:
        raise DataError(f"{path}: header says {num_users} users, found {len(sequences)}")
    return SequenceDataset(num_items, sequences)


def write_negatives(negatives: dict[int, list[int]], path: str | Path) -> None:
    lines = [f"{u}\t{' '.join(map(str, negs))}" for u, negs in sorted(negatives.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_negative_file(path: str | Path, dataset: SequenceDataset | None = None,
                       k: int = NUM_NEGATIVES) -> dict[int, list[int]]:
    """Read and validate a negatives file against ``dataset`` when given."""
    out: dict[int, list[int]] = {}
    for no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        user_field, _, rest = line.partition("\t")
        try:
            user = int(user_field)
            negs = [int(i) for i in rest.split()]
        except ValueError:
            raise DataError(f"{path}:{no}: non-integer field") from None
        if len(negs) != k:
            raise DataError(f"user {user}: expected {k} negatives, got {len(negs)}")
        if len(set(negs)) != k:
            raise DataError(f"user {user}: duplicate negatives")
        if dataset is not None:
            if not 1 <= user <= dataset.num_users:
                raise DataError(f"user {user}: unknown user index")
            if min(negs) < 1 or max(negs) > dataset.num_items:
                raise DataError(f"user {user}: unknown item id among negatives")
            seen = set(dataset.sequences[user - 1])
            if seen & set(negs):
                raise DataError(
                    f"user {user}: negatives include interacted items "
                    f"(ground truth or history) {sorted(seen & set(negs))[:5]}"
                )
        out[user] = negs
    if dataset is not None and len(out) != dataset.num_users:
        raise DataError(f"{path}: negatives for {len(out)} users, dataset has {dataset.num_users}")
    return out


def eval_instances(dataset: SequenceDataset, negatives: dict[int, list[int]] | None,
                   split: str) -> list[EvalInstance]:
    """One instance per user for ``split`` in {"valid", "test"}.

    With ``negatives=None`` every other item becomes a candidate (full ranking).
    """
    if split not in ("valid", "test"):
        raise ValueError(f"split must be 'valid' or 'test', got {split!r}")
    out = []
    for u, seq in enumerate(dataset.sequences, 1):
        if len(seq) < 3:
            continue
        _, valid, test = split_leave_one_out(seq)
        history, truth = valid if split == "valid" else test
        if negatives is None:
            negs = tuple(i for i in range(1, dataset.num_items + 1) if i != truth)
        else:
            negs = tuple(negatives[u])
        out.append(EvalInstance(u, tuple(history), truth, negs))
    return out
