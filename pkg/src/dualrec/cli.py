"""``dualrec`` command line: prepare, train, evaluate, inspect.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import data as datamod
from .attention_dump import mean_attention, write_dump
from .checkpoint import Checkpoint, CheckpointError
from .config import RunConfig, load_config
from .encoder import ConfigError
from .metrics import evaluate_model
from .numerics import DegenerateRowError
from .plotting import attention_heatmaps, training_curves
from .training import NumericError, build_model, train

log = logging.getLogger("dualrec")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
DATASET_FILE = "dataset.txt"
NEGATIVES_FILE = "negatives.txt"
CHECKPOINT_FILE = "best.ckpt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@contextmanager
def _run_lock(out_dir: Path):
    lock = out_dir / "train.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"{out_dir} is locked by another training run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _load_data(data_dir: str, negatives_path: str | None):
    dataset = datamod.read_dataset(Path(data_dir) / DATASET_FILE)
    neg_path = Path(negatives_path) if negatives_path else Path(data_dir) / NEGATIVES_FILE
    negatives = datamod.load_negative_file(neg_path, dataset)
    return dataset, negatives


def cmd_prepare(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = datamod.ingest_interactions(args.raw)
    datamod.write_dataset(dataset, out / DATASET_FILE)
    if args.negatives:
        negatives = datamod.load_negative_file(args.negatives, dataset)
    else:
        negatives = datamod.build_negatives(dataset, seed=args.seed)
    datamod.write_negatives(negatives, out / NEGATIVES_FILE)
    if dataset.user_ids is not None:
        (out / "user_map.txt").write_text(
            "".join(f"{u}\t{uid}\n" for u, uid in enumerate(dataset.user_ids, 1)), encoding="utf-8")
        (out / "item_map.txt").write_text(
            "".join(f"{i}\t{iid}\n" for i, iid in enumerate(dataset.item_ids, 1)), encoding="utf-8")
    print(dataset.summary().table())
    return 0


def _config_from_args(args) -> RunConfig:
    overrides = {name: getattr(args, name, None) for name in RunConfig.__dataclass_fields__}
    return load_config(args.config, **overrides)


def cmd_train(args) -> int:
    config = _config_from_args(args)
    dataset, negatives = _load_data(args.data, args.negatives)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_seqs = datamod.training_sequences(dataset)
    valid = datamod.eval_instances(dataset, negatives, "valid")
    model = build_model(config, dataset.num_items)
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")

    with _run_lock(out), open(out / "train.log", "w", encoding="utf-8") as log_file:
        def on_epoch(record, result):
            log_file.write(record.to_line() + "\n")
            log_file.flush()
            print(record.to_line(), flush=True)
            if result.best_epoch == record.epoch:
                best = {"epoch": record.epoch, "val_hr@5": record.val_hr5,
                        "val_ndcg@5": record.val_ndcg5}
                Checkpoint.capture(model, config, result.best_adam, best).save(out / CHECKPOINT_FILE)

        result = train(model, train_seqs, config, valid, on_epoch)
    training_curves(result.history, out / "training.png")
    print(f"best epoch {result.best_epoch}: val_hr@5={result.best_hr5:.6f} -> {out / CHECKPOINT_FILE}")
    return 0


def _checkpoint_id(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:12]


def cmd_evaluate(args) -> int:
    ckpt_path = Path(args.checkpoint[0])
    ckpt = Checkpoint.load(ckpt_path)
    dataset, negatives = _load_data(args.data, args.negatives)
    if ckpt.num_items != dataset.num_items:
        raise CheckpointError(
            f"checkpoint was trained on {ckpt.num_items} items, dataset has {dataset.num_items}"
        )
    model = ckpt.build_model()
    instances = datamod.eval_instances(dataset, negatives, args.split)
    report = evaluate_model(model.score_candidates, instances, ckpt.config.batch_size,
                            split=args.split, dataset=Path(args.data).resolve().name,
                            seed=ckpt.config.seed, checkpoint=_checkpoint_id(ckpt_path))
    line = report.to_line()
    print(line)
    out = Path(args.out) if args.out else ckpt_path.parent / f"metrics_{args.split}.txt"
    with open(out, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
    return 0


def cmd_inspect(args) -> int:
    if not 1 <= len(args.checkpoint) <= 2:
        raise UsageError("inspect takes one checkpoint, or two to diff")
    if args.sequence:
        try:
            sequences = [[int(t) for t in args.sequence.replace(",", " ").split()]]
        except ValueError:
            raise datamod.DataError(f"sequence {args.sequence!r} holds non-integer ids") from None
        if not sequences[0]:
            raise UsageError("--sequence is empty")
    elif args.data:
        dataset = datamod.read_dataset(Path(args.data) / DATASET_FILE)
        sequences = [list(inst.history) for inst in datamod.eval_instances(dataset, None, args.split)]
    else:
        raise UsageError("inspect needs --sequence or --data")
    models = [Checkpoint.load(p).build_model() for p in args.checkpoint]
    dumps = []
    for model in models:
        try:
            grids, _ = mean_attention(model, sequences, args.encoder)
        except ValueError as exc:
            raise datamod.DataError(str(exc)) from None
        dumps.append(grids)
    if len(dumps) == 2:
        grids = {key: dumps[0][key] - dumps[1][key] for key in dumps[0]}
    else:
        grids = dumps[0]
    encoder = models[0].past_encoder if args.encoder == "past" else models[0].future_encoder
    out = Path(args.out)
    write_dump(grids, out, encoder.mask_spec.window_sizes)
    attention_heatmaps(grids, out.with_suffix(".png"), diverging=len(dumps) == 2)
    print(f"wrote {out} and {out.with_suffix('.png')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dualrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="filter a raw log, write dataset and negatives")
    p.add_argument("raw")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--negatives", help="use this negatives file instead of sampling")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train on a prepared dataset")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--negatives")
    for name, fld in RunConfig.__dataclass_fields__.items():
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, dest=name, type=type(fld.default), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="HR/NDCG/MRR of a checkpoint on valid or test")
    p.add_argument("--checkpoint", required=True, action="append")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--negatives")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="dump attention grids (or their difference)")
    p.add_argument("--checkpoint", required=True, action="append")
    p.add_argument("--sequence", help="space- or comma-separated item ids")
    p.add_argument("--data", help="average over this dataset's split histories")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--encoder", choices=("past", "future"), default="past")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"dualrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (datamod.DataError, CheckpointError, OSError) as exc:
        print(f"dualrec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, DegenerateRowError, FloatingPointError) as exc:
        print(f"dualrec: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
