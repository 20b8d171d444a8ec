import json

import numpy as np
import pytest
import torch

from bagaunet.dataset import DatasetSplit, read_manifest
from bagaunet.errors import ConfigError, DataError, TrainingAborted
from bagaunet.model import ModelSpec, build_model, load_checkpoint
from bagaunet.training import (
    BEST_CHECKPOINT,
    HISTORY_NAME,
    LAST_CHECKPOINT,
    TrainConfig,
    overfit_probe,
    predict,
    run_epoch,
    train,
    validation_dsc,
)
from bagaunet.volume import load_case

TINY_SPEC = dict(channels=(4, 6, 8, 10, 12), canvas=(32, 32))


def _spec(variant="bagau", **kw):
    return ModelSpec(variant=variant, **{**TINY_SPEC, **kw})


def _config(**kw):
    base = dict(alpha=0.7, lr=1e-3, batch_size=16, epochs=2, seed=0,
                variant="bagau", augment=True)
    return TrainConfig(**{**base, **kw})


def _split(ids):
    return DatasetSplit(train=ids[:5], val=ids[5:7], test=ids[7:], seed=0)


def _micro(n=2, seed=0, poison=False):
    g = torch.Generator().manual_seed(seed)
    flair = torch.randn(n, 1, 32, 32, generator=g)
    atlas = torch.rand(n, 1, 32, 32, generator=g)
    mask = (torch.rand(n, 1, 32, 32, generator=g) > 0.8).float()
    if poison:
        flair[0, 0, 0, 0] = float("nan")
    return flair, atlas, mask


def test_config_validation():
    with pytest.raises(ConfigError, match="alpha"):
        _config(alpha=1.0)
    with pytest.raises(ConfigError, match="lr"):
        _config(lr=0.0)
    with pytest.raises(ConfigError, match=">= 1"):
        _config(batch_size=0)
    with pytest.raises(ConfigError, match="threshold"):
        _config(threshold=1.5)
    with pytest.raises(ConfigError, match="variant"):
        _config(variant="nope")


def test_run_epoch_step_cadence():
    model = build_model(_spec())
    steps = []
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    original = optimizer.step
    optimizer.step = lambda: (steps.append(1), original())[1]
    micros = [_micro(seed=i) for i in range(5)]
    mean_loss = run_epoch(model, optimizer, micros, _config(accumulation_steps=2))
    # 5 micro-batches at accumulation 2: steps after micros 2 and 4, plus the
    # trailing partial group
    assert len(steps) == 3
    assert 0.0 < mean_loss < 1.0


def test_run_epoch_zero_batches():
    model = build_model(_spec())
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    with pytest.raises(DataError, match="zero batches"):
        run_epoch(model, optimizer, [], _config())


def test_run_epoch_nan_aborts_with_diagnostics():
    model = build_model(_spec())
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    micros = [_micro(seed=0), _micro(seed=1, poison=True)]
    with pytest.raises(TrainingAborted, match="non-finite") as err:
        run_epoch(model, optimizer, micros, _config())
    assert err.value.micro_step == 1
    assert len(err.value.batch) == 3


def test_overfit_probe_reaches_low_loss(tiny_dataset):
    config = _config(lr=5e-3, batch_size=4, augment=False)
    records = overfit_probe(config, tiny_dataset, n_slices=4, steps=140, model_spec=_spec())
    losses = [r["train_loss"] for r in records]
    assert records[0]["step"] == 1 and records[-1]["step"] == 140
    assert losses[-1] < 0.1
    # smoothed (window-5) loss decreases monotonically once past the first steps
    smoothed = np.convolve(losses, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smoothed[5:]) <= 1e-9)


def test_overfit_probe_insufficient_slices(tiny_dataset):
    with pytest.raises(DataError, match="lesion-bearing"):
        overfit_probe(_config(), tiny_dataset, n_slices=10_000, model_spec=_spec())


def test_train_artifacts_and_best_selection(tiny_dataset, tmp_path):
    _, ids = read_manifest(tiny_dataset)
    state = train(_config(), tiny_dataset, tmp_path, model_spec=_spec(), split=_split(ids))
    assert state.epoch == 2
    assert len(state.history) == 2
    assert (tmp_path / BEST_CHECKPOINT).is_file()
    assert (tmp_path / LAST_CHECKPOINT).is_file()

    rows = [json.loads(line) for line in (tmp_path / HISTORY_NAME).read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [1, 2]
    for row in rows:
        assert set(row) == {"epoch", "train_loss", "val_dsc", "lr", "wall_time"}
        assert row["lr"] == 1e-3
    assert state.best_val_dsc == max(r["val_dsc"] for r in rows)

    _, payload = load_checkpoint(tmp_path / BEST_CHECKPOINT)
    assert payload["val_dsc"] == state.best_val_dsc
    assert payload["train_config"]["variant"] == "bagau"


def test_train_determinism(tiny_dataset, tmp_path):
    _, ids = read_manifest(tiny_dataset)
    a = train(_config(), tiny_dataset, tmp_path / "a", model_spec=_spec(), split=_split(ids))
    b = train(_config(), tiny_dataset, tmp_path / "b", model_spec=_spec(), split=_split(ids))
    for ra, rb in zip(a.history, b.history):
        assert ra["train_loss"] == rb["train_loss"]
        assert ra["val_dsc"] == rb["val_dsc"]
    pa = dict(a.model.named_parameters())
    for name, p in b.model.named_parameters():
        assert torch.equal(p, pa[name]), name


def test_resume_matches_uninterrupted(tiny_dataset, tmp_path):
    _, ids = read_manifest(tiny_dataset)
    split = _split(ids)
    full = train(_config(epochs=4), tiny_dataset, tmp_path / "full",
                 model_spec=_spec(), split=split)

    part_dir = tmp_path / "part"
    train(_config(epochs=2), tiny_dataset, part_dir, model_spec=_spec(), split=split)
    resumed = train(_config(epochs=4), tiny_dataset, part_dir, model_spec=_spec(),
                    split=split, resume=part_dir / LAST_CHECKPOINT)

    assert [r["epoch"] for r in resumed.history] == [1, 2, 3, 4]
    for rf, rr in zip(full.history, resumed.history):
        assert rf["train_loss"] == rr["train_loss"]
        assert rf["val_dsc"] == rr["val_dsc"]
    pf = dict(full.model.named_parameters())
    for name, p in resumed.model.named_parameters():
        assert torch.equal(p, pf[name]), name
    rows = [json.loads(line) for line in (part_dir / HISTORY_NAME).read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [1, 2, 3, 4]


def test_train_split_and_spec_validation(tiny_dataset, tmp_path):
    _, ids = read_manifest(tiny_dataset)
    with pytest.raises(DataError, match="missing from the dataset"):
        train(_config(), tiny_dataset, tmp_path,
              model_spec=_spec(), split=DatasetSplit(train=["ghost"], val=ids[:1], test=[], seed=0))
    with pytest.raises(ConfigError, match="nonempty"):
        train(_config(), tiny_dataset, tmp_path,
              model_spec=_spec(), split=DatasetSplit(train=ids[:2], val=[], test=[], seed=0))
    with pytest.raises(ConfigError, match="conflicts"):
        train(_config(variant="unet_flair"), tiny_dataset, tmp_path, model_spec=_spec("bagau"))


def test_abort_dump_written(tiny_dataset, tmp_path, monkeypatch):
    def explode(model, optimizer, micros, config):
        exc = TrainingAborted("non-finite training loss at micro-step 0")
        exc.batch = _micro(n=2, seed=9)
        exc.micro_step = 0
        raise exc

    monkeypatch.setattr("bagaunet.training.run_epoch", explode)
    _, ids = read_manifest(tiny_dataset)
    with pytest.raises(TrainingAborted):
        train(_config(), tiny_dataset, tmp_path, model_spec=_spec(), split=_split(ids))
    abort = tmp_path / "abort"
    for name in ("flair.nii.gz", "atlas.nii.gz", "mask.nii.gz", "abort.json"):
        assert (abort / name).is_file()
    meta = json.loads((abort / "abort.json").read_text())
    assert meta["epoch"] == 1 and meta["micro_step"] == 0
    assert meta["batch_shape"] == [2, 1, 32, 32]


def test_predict_contract(tiny_dataset):
    model = build_model(_spec())
    case = load_case(tiny_dataset / "case_000")
    pred = predict(model, case, threshold=0.5, chunk=4)
    assert pred.case_id == "case_000"
    assert pred.probability.shape == case.flair.shape
    assert pred.probability.kind == "probability"
    assert pred.mask.kind == "mask"
    assert pred.probability.spacing == case.flair.spacing
    assert np.array_equal(pred.mask.data, (pred.probability.data > 0.5).astype(np.float32))

    strict = predict(model, case, threshold=0.9)
    loose = predict(model, case, threshold=0.1)
    assert np.all(loose.mask.data >= strict.mask.data)  # monotone in threshold
    with pytest.raises(ConfigError, match="threshold"):
        predict(model, case, threshold=-0.2)


def test_predict_from_checkpoint_equals_in_memory(tiny_dataset, tmp_path):
    from bagaunet.model import save_checkpoint

    model = build_model(_spec(init_seed=5))
    path = save_checkpoint(tmp_path / "m.pt", model)
    case = load_case(tiny_dataset / "case_001")
    a = predict(model, case)
    b = predict(path, case)
    assert np.array_equal(a.probability.data, b.probability.data)


def test_validation_dsc(tiny_dataset):
    model = build_model(_spec())
    cases = [load_case(tiny_dataset / "case_000"), load_case(tiny_dataset / "case_001")]
    score = validation_dsc(model, cases)
    assert 0.0 <= score <= 100.0
    cases[0].mask = None
    with pytest.raises(DataError, match="mask"):
        validation_dsc(model, cases)
    with pytest.raises(ConfigError, match="at least one"):
        validation_dsc(model, [])
