import json

import pytest

from bagaunet.dataset import (
    DatasetSplit,
    load_cases,
    read_manifest,
    split_dataset,
    write_manifest,
)
from bagaunet.errors import ConfigError, DataError


def test_split_sizes_30_cases():
    ids = [f"case_{i:03d}" for i in range(30)]
    split = split_dataset(ids, seed=0)
    assert (len(split.train), len(split.val), len(split.test)) == (24, 3, 3)
    assert sorted(split.all_ids) == ids


def test_split_remainder_goes_to_train():
    split = split_dataset([f"c{i}" for i in range(7)], seed=1)
    # floor(0.1*7) = 0 for both val and test
    assert (len(split.train), len(split.val), len(split.test)) == (7, 0, 0)


def test_split_deterministic_and_seed_sensitive():
    ids = [f"c{i}" for i in range(20)]
    a = split_dataset(ids, seed=5)
    b = split_dataset(ids, seed=5)
    c = split_dataset(ids, seed=6)
    assert (a.train, a.val, a.test) == (b.train, b.val, b.test)
    assert a.train != c.train


def test_split_is_a_shuffle():
    ids = [f"c{i}" for i in range(50)]
    split = split_dataset(ids, seed=0)
    assert split.train != ids[: len(split.train)]


def test_split_validation():
    with pytest.raises(ConfigError, match="at least 3"):
        split_dataset(["a", "b"])
    with pytest.raises(ConfigError, match="sum to 1"):
        split_dataset(["a", "b", "c"], ratio=(0.5, 0.2, 0.2))
    with pytest.raises(ConfigError, match="positive"):
        split_dataset(["a", "b", "c"], ratio=(1.0, 0.0, 0.0))
    with pytest.raises(ConfigError, match="overlap"):
        DatasetSplit(train=["a"], val=["a"], test=["b"], seed=0)


def test_manifest_round_trip(tmp_path):
    path = write_manifest(tmp_path, ["b", "a"], extra={"note": 1})
    assert json.loads(path.read_text())["cases"] == ["a", "b"]
    root, cases = read_manifest(tmp_path)
    assert root == tmp_path
    assert cases == ["a", "b"]
    root2, cases2 = read_manifest(path)
    assert (root2, cases2) == (root, cases)


def test_manifest_errors(tmp_path):
    with pytest.raises(DataError, match="not found"):
        read_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(DataError, match="malformed"):
        read_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text('{"cases": []}')
    with pytest.raises(DataError, match="no cases"):
        read_manifest(tmp_path)


def test_load_cases(tiny_dataset):
    _, ids = read_manifest(tiny_dataset)
    cases = load_cases(tiny_dataset, ids[:2])
    assert [c.case_id for c in cases] == ids[:2]
    assert all(c.mask is not None for c in cases)
