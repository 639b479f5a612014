import numpy as np
import pytest
import torch

from dualrec import data as dm
from dualrec.attention_dump import parse_grids
from dualrec.checkpoint import MAGIC, Checkpoint, CheckpointError
from dualrec.cli import main
from dualrec.config import RunConfig, load_config, parse_config_text
from dualrec.encoder import ConfigError
from dualrec.metrics import MetricsReport, evaluate_model
from dualrec.synthetic import MarkovChain
from dualrec.training import build_model

TINY = ["--n", "10", "--d", "8", "--heads", "2", "--layers", "1", "--dropout", "0.0",
        "--batch-size", "32", "--learning-rate", "0.01", "--patience", "50"]


@pytest.fixture(scope="module")
def raw_file(tmp_path_factory):
    chain = MarkovChain.random(150, seed=0)
    seqs = chain.sample(300, 12, seed=0)
    path = tmp_path_factory.mktemp("raw") / "log.txt"
    path.write_text("".join(f"user{u} " + " ".join(f"item{i}" for i in s) + "\n"
                            for u, s in enumerate(seqs)), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def prepared(tmp_path_factory, raw_file):
    out = tmp_path_factory.mktemp("prep")
    assert main(["prepare", str(raw_file), "--out", str(out), "--seed", "0"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, prepared):
    out = tmp_path_factory.mktemp("run")
    argv = ["train", "--data", str(prepared), "--out", str(out), "--epochs", "5",
            "--alpha", "1.0", "--beta", "0.0", *TINY]
    assert main(argv) == 0
    return out


def log_lines(path):
    return [" ".join(p for p in line.split() if not p.startswith("time="))
            for line in path.read_text().splitlines()]


def test_prepare_is_deterministic(tmp_path, raw_file, capsys):
    for run in ("a", "b"):
        assert main(["prepare", str(raw_file), "--out", str(tmp_path / run)]) == 0
    for name in ("dataset.txt", "negatives.txt", "user_map.txt", "item_map.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert "users" in capsys.readouterr().out


def test_prepare_unreadable_path(tmp_path, capsys):
    assert main(["prepare", str(tmp_path / "missing.txt"), "--out", str(tmp_path)]) == 2
    assert "missing.txt" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 1


def test_indivisible_heads_rejected(tmp_path, prepared, capsys):
    argv = ["train", "--data", str(prepared), "--out", str(tmp_path), "--d", "30", "--heads", "8"]
    assert main(argv) == 1
    assert "divisible" in capsys.readouterr().err


def test_training_loss_decreases(trained):
    losses = [float(line.split()[1].split("=")[1]) for line in log_lines(trained / "train.log")]
    assert len(losses) == 5
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_training_artifacts(trained):
    assert (trained / "best.ckpt").read_bytes()[:8] == MAGIC
    assert (trained / "training.png").read_bytes()[:4] == b"\x89PNG"
    assert load_config(trained / "config.txt").epochs == 5
    assert not (trained / "train.lock").exists()


def test_training_logs_are_reproducible(tmp_path, prepared, trained):
    argv = ["train", "--data", str(prepared), "--out", str(tmp_path), "--epochs", "5",
            "--alpha", "1.0", "--beta", "0.0", *TINY]
    assert main(argv) == 0
    assert log_lines(tmp_path / "train.log") == log_lines(trained / "train.log")
    assert (tmp_path / "best.ckpt").read_bytes() == (trained / "best.ckpt").read_bytes()


def test_lock_blocks_second_run(tmp_path, prepared, capsys):
    (tmp_path / "train.lock").write_text("1")
    argv = ["train", "--data", str(prepared), "--out", str(tmp_path), "--epochs", "1", *TINY]
    assert main(argv) == 1
    assert "locked" in capsys.readouterr().err


def test_evaluate_line_and_counts(trained, prepared, capsys):
    dataset = dm.read_dataset(prepared / "dataset.txt")
    for split in ("valid", "test"):
        assert main(["evaluate", "--checkpoint", str(trained / "best.ckpt"),
                     "--data", str(prepared), "--split", split]) == 0
        line = capsys.readouterr().out.strip()
        report = MetricsReport.from_line(line)
        assert report.instances == dataset.num_users
        assert report.meta["split"] == split
        assert (trained / f"metrics_{split}.txt").read_text().strip().endswith(line)


def test_evaluate_item_count_mismatch(tmp_path, trained, capsys):
    ds = dm.SequenceDataset(500, [list(range(1, 8))] * 3)
    dm.write_dataset(ds, tmp_path / "dataset.txt")
    dm.write_negatives(dm.build_negatives(ds), tmp_path / "negatives.txt")
    assert main(["evaluate", "--checkpoint", str(trained / "best.ckpt"),
                 "--data", str(tmp_path)]) == 2
    assert "items" in capsys.readouterr().err


def test_checkpoint_round_trip_is_bit_identical(tmp_path, trained, prepared):
    ckpt = Checkpoint.load(trained / "best.ckpt")
    ckpt.save(tmp_path / "copy.ckpt")
    assert (tmp_path / "copy.ckpt").read_bytes() == (trained / "best.ckpt").read_bytes()
    dataset = dm.read_dataset(prepared / "dataset.txt")
    negatives = dm.load_negative_file(prepared / "negatives.txt", dataset)
    insts = dm.eval_instances(dataset, negatives, "test")
    a = evaluate_model(ckpt.build_model().score_candidates, insts)
    b = evaluate_model(Checkpoint.load(tmp_path / "copy.ckpt").build_model().score_candidates, insts)
    assert a.values == b.values
    model = ckpt.build_model()
    assert ckpt.adam_state(model).step > 0


def test_checkpoint_capture_matches_model():
    config = RunConfig(n=6, d=8, heads=2, layers=1)
    model = build_model(config, 15)
    ckpt = Checkpoint.from_bytes(Checkpoint.capture(model, config).to_bytes())
    rebuilt = ckpt.build_model()
    for (name, p), (_, q) in zip(model.named_parameters(), rebuilt.named_parameters()):
        assert torch.equal(p, q), name


def test_checkpoint_rejects_bad_magic_and_truncation(trained):
    blob = (trained / "best.ckpt").read_bytes()
    with pytest.raises(CheckpointError, match="magic"):
        Checkpoint.from_bytes(b"NOTACKPT" + blob[8:])
    for cut in (10, 20, len(blob) // 2, len(blob) - 1):
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(blob[:cut])


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nd = 32\nheads=4  # trailing\nalpha=0.25\n")
    cfg = load_config(path, d=16)
    assert (cfg.d, cfg.heads, cfg.alpha, cfg.n) == (16, 4, 0.25, 50)
    assert load_config(path).to_text().count("\n") == len(RunConfig.__dataclass_fields__)
    assert parse_config_text(cfg.to_text())["d"] == "16"
    with pytest.raises(ConfigError):
        load_config(path, color="red")
    with pytest.raises(ConfigError):
        load_config(None, d="big")
    with pytest.raises(ConfigError):
        RunConfig(heads=3, d=30).validate()


def test_untrained_model_is_near_random():
    rng = np.random.default_rng(0)
    seqs = [list(rng.integers(1, 301, size=8)) for _ in range(5000)]
    ds = dm.SequenceDataset(300, seqs)
    insts = dm.eval_instances(ds, dm.build_negatives(ds), "test")
    model = build_model(RunConfig(n=10, d=16, heads=2, layers=1), 300)
    report = evaluate_model(model.score_candidates, insts)
    assert abs(report["hr@10"] - 0.10) <= 0.02


def test_inspect_single_item(tmp_path, trained, capsys):
    out = tmp_path / "attn.txt"
    assert main(["inspect", "--checkpoint", str(trained / "best.ckpt"),
                 "--sequence", "3", "--out", str(out)]) == 0
    grids = parse_grids(out.read_text())
    assert all(g.tolist() == [[1.0]] for g in grids.values())
    assert out.with_suffix(".png").read_bytes()[:4] == b"\x89PNG"


@pytest.mark.parametrize("encoder", ["past", "future"])
def test_inspect_rows_and_windows(tmp_path, trained, encoder):
    out = tmp_path / "attn.txt"
    assert main(["inspect", "--checkpoint", str(trained / "best.ckpt"), "--sequence",
                 "1 2 3 4 5 6 7 8", "--encoder", encoder, "--out", str(out)]) == 0
    text = out.read_text()
    windows = {int(h.split("head=")[1].split()[0]): int(h.split("window=")[1])
               for h in text.splitlines() if h.startswith("#")}
    for (_, head), grid in parse_grids(text).items():
        assert np.allclose(grid.sum(axis=1), 1.0, atol=1e-5)
        sigma = windows[head]
        q, k = np.indices(grid.shape)
        inside = (k <= q) & (k >= q - sigma) if encoder == "past" else (k >= q) & (k <= q + sigma)
        assert (grid[~inside] == 0.0).all()


def test_inspect_diff_of_identical_checkpoints_is_zero(tmp_path, trained):
    out = tmp_path / "diff.txt"
    ckpt = str(trained / "best.ckpt")
    assert main(["inspect", "--checkpoint", ckpt, "--checkpoint", ckpt,
                 "--sequence", "4 5 6", "--out", str(out)]) == 0
    assert all((g == 0).all() for g in parse_grids(out.read_text()).values())


def test_inspect_unknown_item(tmp_path, trained, capsys):
    assert main(["inspect", "--checkpoint", str(trained / "best.ckpt"),
                 "--sequence", "1 99999", "--out", str(tmp_path / "a.txt")]) == 2
    assert "99999" in capsys.readouterr().err
