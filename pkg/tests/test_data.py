from collections import Counter

import pytest

from dualrec import data as dm


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def records_file(tmp_path, rows, delim=","):
    return write(tmp_path, "raw.txt", "".join(delim.join(map(str, r)) + "\n" for r in rows))


def test_short_user_removed(tmp_path):
    rows = [("u1", f"i{k}", k) for k in range(5)] + [("u2", f"i{k}", k) for k in range(4)]
    rows += [(f"x{j}", f"i{k}", 0) for j in range(4) for k in range(5)]
    ds = dm.ingest_interactions(records_file(tmp_path, rows))
    assert "u2" not in ds.user_ids
    assert "u1" in ds.user_ids


def test_stable_sort_on_equal_timestamps(tmp_path):
    rows = [("u", "b", 5), ("u", "a", 5), ("u", "c", 1), ("u", "d", 5), ("u", "e", 9)]
    records, _ = dm.read_raw(records_file(tmp_path, rows, "\t"))
    assert dm.group_records(records)["u"] == ["c", "b", "a", "d", "e"]


def test_filter_reaches_fixpoint():
    # dropping item z leaves user B with 4 items, which then drops items only B had
    seqs = {"A": list("abcde"), "B": list("abcdz"), "C": list("abcde"), "D": list("abcde"),
            "E": list("abcde"), "F": list("abcde")}
    kept = dm.filter_k_core(seqs, 5)
    assert "B" not in kept
    items = Counter(i for s in kept.values() for i in s)
    assert all(c >= 5 for c in items.values())
    assert all(len(s) >= 5 for s in kept.values())


def test_fixpoint_cascade():
    seqs = {f"u{k}": ["shared"] * 4 + [f"rare{k}"] for k in range(3)}
    seqs.update({f"v{k}": ["pop"] * 5 for k in range(5)})
    kept = dm.filter_k_core(seqs, 5)
    assert set(kept) == {f"v{k}" for k in range(5)}


def test_sequence_format(tmp_path):
    lines = "".join(f"user{u} " + " ".join(f"i{(u + k) % 6}" for k in range(6)) + "\n" for u in range(6))
    ds = dm.ingest_interactions(write(tmp_path, "seq.txt", lines))
    assert ds.num_users == 6 and ds.num_items == 6
    assert ds.sequences[0] == [1, 2, 3, 4, 5, 6]


def test_malformed_row_reports_line(tmp_path):
    path = write(tmp_path, "raw.txt", "u,i,1\nu,i,2\nu,i\n")
    with pytest.raises(dm.DataError, match=":3:"):
        dm.ingest_interactions(path)


def test_bad_timestamp(tmp_path):
    path = write(tmp_path, "raw.txt", "u,i,1\nu,i,later\n")
    with pytest.raises(dm.DataError, match=":2:"):
        dm.read_raw(path)


def test_empty_after_filter(tmp_path):
    with pytest.raises(dm.DataError):
        dm.ingest_interactions(records_file(tmp_path, [("u", "i", 1)]))


def test_leave_one_out():
    train, (vh, vt), (th, tt) = dm.split_leave_one_out(list("abcd"))
    assert train == ["a", "b"]
    assert (vh, vt) == (["a", "b"], "c")
    assert (th, tt) == (["a", "b", "c"], "d")


def test_leave_one_out_boundary():
    assert dm.split_leave_one_out([1, 2, 3])[0] == [1]
    with pytest.raises(dm.DataError):
        dm.split_leave_one_out([1, 2])


def test_no_test_leakage_into_training():
    ds = dm.SequenceDataset(9, [[1, 2, 3, 4, 5, 9], [5, 6, 7, 8, 9]])
    train = dm.training_sequences(ds)
    for seq, tr in zip(ds.sequences, train):
        # training targets are positions < len(tr); the test item sits at len(seq) - 1
        assert tr == seq[:len(tr)]
        assert len(tr) == len(seq) - 2


def test_negatives_forced_set():
    interacted = set(range(1, 102))
    assert sorted(dm.sample_negatives(1, 200, interacted)) == list(range(102, 201))


def test_negatives_deterministic_and_valid():
    a = dm.sample_negatives(7, 5000, {1, 2, 3}, seed=4)
    b = dm.sample_negatives(7, 5000, {1, 2, 3}, seed=4)
    assert a == b and len(set(a)) == 99 and not {1, 2, 3} & set(a)
    assert a != dm.sample_negatives(8, 5000, {1, 2, 3}, seed=4)


def test_negatives_uniform():
    counts = Counter()
    for user in range(100_000):
        counts.update(dm.sample_negatives(user, 4, {4}, k=1))
    for item in (1, 2, 3):
        assert abs(counts[item] / 100_000 - 1 / 3) <= 0.01


def test_negatives_large_catalog_uniform():
    counts = Counter()
    for user in range(2000):
        counts.update(dm.sample_negatives(user, 1000, set(range(1, 11)), k=99))
    freq = [counts[i] / 2000 for i in range(11, 1001)]
    assert abs(sum(freq) / len(freq) - 99 / 990) < 1e-9
    assert max(freq) < 0.16 and min(freq) > 0.05


def test_pool_too_small():
    with pytest.raises(dm.DataError):
        dm.sample_negatives(1, 100, {1, 2})


@pytest.fixture
def dataset():
    return dm.SequenceDataset(150, [[1, 2, 3, 4, 5], [6, 7, 8, 9, 10, 11], [3, 5, 7, 9, 11]])


def test_dataset_round_trip(tmp_path, dataset):
    dm.write_dataset(dataset, tmp_path / "d.txt")
    text = (tmp_path / "d.txt").read_text()
    assert text.splitlines()[0] == "#items=150 #users=3"
    assert text.splitlines()[2] == "2\t6 7 8 9 10 11"
    back = dm.read_dataset(tmp_path / "d.txt")
    assert back.sequences == dataset.sequences and back.num_items == 150


def test_negative_file_round_trip(tmp_path, dataset):
    negs = dm.build_negatives(dataset, seed=1)
    dm.write_negatives(negs, tmp_path / "n.txt")
    assert dm.load_negative_file(tmp_path / "n.txt", dataset) == negs


def test_negative_file_wrong_count(tmp_path, dataset):
    negs = dm.build_negatives(dataset, seed=1)
    negs[2] = negs[2][:98]
    dm.write_negatives(negs, tmp_path / "n.txt")
    with pytest.raises(dm.DataError, match="user 2"):
        dm.load_negative_file(tmp_path / "n.txt", dataset)


def test_negative_file_ground_truth_leak(tmp_path, dataset):
    negs = dm.build_negatives(dataset, seed=1)
    negs[1][0] = 5  # user 1's test item
    dm.write_negatives(negs, tmp_path / "n.txt")
    with pytest.raises(dm.DataError, match="user 1"):
        dm.load_negative_file(tmp_path / "n.txt", dataset)


def test_negative_file_unknown_item(tmp_path, dataset):
    negs = dm.build_negatives(dataset, seed=1)
    negs[3][0] = 151
    dm.write_negatives(negs, tmp_path / "n.txt")
    with pytest.raises(dm.DataError, match="user 3"):
        dm.load_negative_file(tmp_path / "n.txt", dataset)


def test_eval_instances(dataset):
    negs = dm.build_negatives(dataset)
    test = dm.eval_instances(dataset, negs, "test")
    valid = dm.eval_instances(dataset, negs, "valid")
    assert len(test) == len(valid) == dataset.num_users
    assert test[1].history == (6, 7, 8, 9, 10) and test[1].ground_truth == 11
    assert valid[1].history == (6, 7, 8, 9) and valid[1].ground_truth == 10
    assert all(inst.ground_truth not in inst.negatives for inst in test + valid)
    full = dm.eval_instances(dataset, None, "test")
    assert len(full[0].candidates) == 150


def test_prepared_artifacts_deterministic(tmp_path):
    rows = [(f"u{u}", f"i{(u * 7 + k * 13) % 120}", k) for u in range(200) for k in range(10)]
    raw = records_file(tmp_path, rows)
    outputs = []
    for run in range(2):
        ds = dm.ingest_interactions(raw)
        dm.write_dataset(ds, tmp_path / f"d{run}.txt")
        dm.write_negatives(dm.build_negatives(ds, seed=3), tmp_path / f"n{run}.txt")
        outputs.append(((tmp_path / f"d{run}.txt").read_bytes(), (tmp_path / f"n{run}.txt").read_bytes()))
    assert outputs[0] == outputs[1]
