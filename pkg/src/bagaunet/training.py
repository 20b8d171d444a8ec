"""Optimization loop: Tversky objective, gradient accumulation, checkpoints, prediction.

Determinism contract: with a fixed seed and single-worker execution, two runs
produce identical history records (wall_time excepted) and identical
parameters. All randomness flows through one numpy Generator (shuffling,
augmentation) plus the torch seed used at initialization time.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig, augment as augment_batch
from .dataset import DatasetSplit, load_cases, read_manifest, split_dataset
from .errors import ConfigError, DataError, TrainingAborted
from .losses import tversky_loss
from .metrics import dsc
from .model import (
    BAGAUNet,
    ModelSpec,
    VARIANTS,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .slicing import SliceBatch, extract_slices, restack_slices
from .volume import CaseRecord, Volume3D, normalize_zscore, save_volume

HISTORY_NAME = "history.jsonl"
BEST_CHECKPOINT = "best.pt"
LAST_CHECKPOINT = "last.pt"


@dataclass
class TrainConfig:
    alpha: float = 0.7
    lr: float = 2e-4
    batch_size: int = 32
    epochs: int = 200
    accumulation_steps: int = 1
    seed: int = 0
    variant: str = "bagau"
    smooth_eps: float = 1e-6
    augment: bool = True
    threshold: float = 0.5  # binarization cut for validation DSC

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 1 or self.accumulation_steps < 1:
            raise ConfigError("batch_size, epochs, accumulation_steps must be >= 1")
        if self.smooth_eps < 0:
            raise ConfigError(f"smooth_eps must be nonnegative, got {self.smooth_eps}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")


@dataclass
class TrainState:
    model: BAGAUNet
    optimizer: torch.optim.Optimizer
    epoch: int
    best_val_dsc: float
    history: list[dict] = field(default_factory=list)


@dataclass
class PredictionVolume:
    case_id: str
    probability: Volume3D
    mask: Volume3D
    threshold: float


def run_epoch(model: BAGAUNet, optimizer, micro_batches, config: TrainConfig) -> float:
    """One pass over an explicit sequence of (flair, atlas, mask) micro-batches.

    Every group of accumulation_steps micro-batches forms one optimizer step;
    each micro loss is divided by accumulation_steps so the stepped gradient
    is the mean over the effective batch. A trailing shorter group still
    steps (with the same divisor). Returns the mean micro-batch loss.
    """
    model.train()
    acc = config.accumulation_steps
    losses = []
    optimizer.zero_grad()
    pending = 0
    for step, (flair, atlas, mask) in enumerate(micro_batches):
        probs = model(flair, atlas)
        loss = tversky_loss(probs, mask, alpha=config.alpha, smooth_eps=config.smooth_eps)
        if not torch.isfinite(loss):
            exc = TrainingAborted(f"non-finite training loss at micro-step {step}")
            exc.batch = (flair.detach(), atlas.detach(), mask.detach())
            exc.micro_step = step
            raise exc
        (loss / acc).backward()
        losses.append(float(loss.detach()))
        pending += 1
        if pending == acc:
            optimizer.step()
            optimizer.zero_grad()
            pending = 0
    if pending:
        optimizer.step()
        optimizer.zero_grad()
    if not losses:
        raise DataError("epoch ran over zero batches")
    return float(np.mean(losses))


def _normalized(case: CaseRecord) -> CaseRecord:
    return CaseRecord(case.case_id, normalize_zscore(case.flair), case.atlas, case.mask, case.meta)


def _stack_pool(cases, canvas, keep_empty: bool) -> SliceBatch:
    """Concatenate per-case slice batches into one training pool.

    orig_shape on the pool is nominal (the pool is never restacked); per-slice
    case_ids and slice_indices keep real provenance.
    """
    batches = [extract_slices(_normalized(c), canvas, keep_empty=keep_empty) for c in cases]
    flair = np.concatenate([b.flair for b in batches])
    atlas = np.concatenate([b.atlas for b in batches])
    mask = np.concatenate([b.mask for b in batches])
    case_ids = [cid for b in batches for cid in b.case_ids]
    indices = np.concatenate([b.slice_indices for b in batches])
    return SliceBatch(
        flair=flair,
        atlas=atlas,
        mask=mask,
        case_ids=case_ids,
        slice_indices=indices,
        orig_shape=(len(flair), canvas[0], canvas[1]),
    )


def _take(pool: SliceBatch, idx: np.ndarray) -> SliceBatch:
    return SliceBatch(
        flair=pool.flair[idx],
        atlas=pool.atlas[idx],
        mask=pool.mask[idx] if pool.mask is not None else None,
        case_ids=[pool.case_ids[i] for i in idx],
        slice_indices=pool.slice_indices[idx],
        orig_shape=pool.orig_shape,
        spacing=pool.spacing,
    )


def _as_tensors(batch: SliceBatch, dtype):
    to = lambda a: torch.from_numpy(np.ascontiguousarray(a)).to(dtype)
    return to(batch.flair), to(batch.atlas), to(batch.mask)


def _epoch_batches(pool: SliceBatch, order: np.ndarray, config: TrainConfig,
                   rng, augment_config: AugmentConfig | None, dtype):
    for start in range(0, len(order), config.batch_size):
        sub = _take(pool, order[start : start + config.batch_size])
        if config.augment:
            sub = augment_batch(sub, rng, augment_config or AugmentConfig())
        yield _as_tensors(sub, dtype)


def _dump_abort(out_dir: Path, exc: TrainingAborted, epoch: int):
    """Write the offending micro-batch as NIfTI stacks plus JSON metadata."""
    abort_dir = out_dir / "abort"
    abort_dir.mkdir(parents=True, exist_ok=True)
    flair, atlas, mask = exc.batch
    for name, tensor in zip(("flair", "atlas", "mask"), (flair, atlas, mask)):
        data = tensor.cpu().numpy().astype(np.float32)[:, 0]
        try:
            vol = Volume3D(data, kind=name)
        except DataError:
            # the batch may itself be corrupt; dump it without kind validation
            vol = Volume3D(data, kind="flair")
        save_volume(vol, abort_dir / f"{name}.nii.gz")
    meta = {
        "epoch": epoch,
        "micro_step": exc.micro_step,
        "message": str(exc),
        "batch_shape": list(flair.shape),
    }
    (abort_dir / "abort.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _checkpoint_extra(optimizer, epoch, best, val, rng, config: TrainConfig) -> dict:
    return {
        "optimizer": optimizer.state_dict(),
        "epoch": int(epoch),
        "best_val_dsc": float(best),
        "val_dsc": float(val),
        "numpy_rng": rng.bit_generator.state,
        "torch_rng": torch.get_rng_state(),
        "train_config": dataclasses.asdict(config),
    }


def train(config: TrainConfig, dataset, out_dir, model_spec: ModelSpec | None = None,
          split: DatasetSplit | None = None, augment_config: AugmentConfig | None = None,
          resume=None) -> TrainState:
    """Fit the configured variant on a dataset; writes history + best/last checkpoints.

    Best parameters are selected by validation DSC (volumetric, threshold from
    config). A non-finite loss aborts with a diagnostic dump under out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model_spec is None:
        model_spec = ModelSpec(variant=config.variant, init_seed=config.seed)
    elif model_spec.variant != config.variant:
        raise ConfigError(
            f"model spec variant {model_spec.variant!r} conflicts with train config {config.variant!r}"
        )

    dataset_dir, ids = read_manifest(dataset)
    if split is None:
        split = split_dataset(ids, seed=config.seed)
    unknown = sorted(set(split.all_ids) - set(ids))
    if unknown:
        raise DataError(f"split references cases missing from the dataset: {unknown}")
    if not split.train or not split.val:
        raise ConfigError("train and val splits must both be nonempty")

    train_cases = load_cases(dataset_dir, split.train)
    val_cases = load_cases(dataset_dir, split.val)
    pool = _stack_pool(train_cases, model_spec.canvas, keep_empty=False)
    if len(pool) == 0:
        raise DataError("no nonempty training slices")

    rng = np.random.default_rng(config.seed)
    history_path = out_dir / HISTORY_NAME
    history: list[dict] = []

    if resume is not None:
        model, payload = load_checkpoint(resume, expected_spec=model_spec)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
        optimizer.load_state_dict(payload["optimizer"])
        start_epoch = int(payload["epoch"])
        best = float(payload["best_val_dsc"])
        rng.bit_generator.state = payload["numpy_rng"]
        torch.set_rng_state(payload["torch_rng"])
        if history_path.exists():
            for line in history_path.read_text().splitlines():
                rec = json.loads(line)
                if rec["epoch"] <= start_epoch:
                    history.append(rec)
    else:
        model = build_model(model_spec)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
        start_epoch = 0
        best = float("-inf")

    dtype = next(model.parameters()).dtype
    # rewrite history so the file matches the records we will extend
    with open(history_path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    t0 = time.monotonic()
    epoch = start_epoch
    for epoch in range(start_epoch + 1, config.epochs + 1):
        order = rng.permutation(len(pool))
        batches = _epoch_batches(pool, order, config, rng, augment_config, dtype)
        try:
            train_loss = run_epoch(model, optimizer, batches, config)
        except TrainingAborted as exc:
            _dump_abort(out_dir, exc, epoch)
            raise
        val = validation_dsc(model, val_cases, threshold=config.threshold)
        record = {
            "epoch": epoch,
            "train_loss": train_loss,
            "val_dsc": val,
            "lr": config.lr,
            "wall_time": time.monotonic() - t0,
        }
        history.append(record)
        with open(history_path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        if val > best:
            best = val
            save_checkpoint(out_dir / BEST_CHECKPOINT, model, step=epoch,
                            extra=_checkpoint_extra(optimizer, epoch, best, val, rng, config))
        save_checkpoint(out_dir / LAST_CHECKPOINT, model, step=epoch,
                        extra=_checkpoint_extra(optimizer, epoch, best, val, rng, config))

    return TrainState(model=model, optimizer=optimizer, epoch=epoch,
                      best_val_dsc=best, history=history)


def predict(checkpoint, case: CaseRecord, threshold: float = 0.5,
            chunk: int = 16) -> PredictionVolume:
    """Slice, forward in eval mode, restack; binarize at prob > threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold must be in [0, 1], got {threshold}")
    if isinstance(checkpoint, BAGAUNet):
        model = checkpoint
    else:
        model, _ = load_checkpoint(checkpoint)
    model.eval()
    dtype = next(model.parameters()).dtype

    work = CaseRecord(case.case_id, normalize_zscore(case.flair), case.atlas, case.mask, case.meta)
    batch = extract_slices(work, canvas=model.spec.canvas, keep_empty=True)
    outputs = []
    with torch.no_grad():
        for start in range(0, len(batch), chunk):
            fl = torch.from_numpy(batch.flair[start : start + chunk]).to(dtype)
            at = torch.from_numpy(batch.atlas[start : start + chunk]).to(dtype)
            outputs.append(model(fl, at).cpu().numpy().astype(np.float32))
    probs = np.concatenate(outputs)
    prob_vol = restack_slices(probs, batch.slice_indices, batch.orig_shape,
                              spacing=batch.spacing, kind="probability")
    mask_vol = Volume3D((prob_vol.data > threshold).astype(np.float32),
                        spacing=prob_vol.spacing, kind="mask")
    return PredictionVolume(case_id=case.case_id, probability=prob_vol,
                            mask=mask_vol, threshold=threshold)


def validation_dsc(model: BAGAUNet, cases, threshold: float = 0.5) -> float:
    """Mean volumetric DSC over cases at the given binarization threshold."""
    if not cases:
        raise ConfigError("validation requires at least one case")
    scores = []
    for case in cases:
        if case.mask is None:
            raise DataError(f"case {case.case_id} has no ground-truth mask")
        pred = predict(model, case, threshold=threshold)
        scores.append(dsc(pred.mask, case.mask))
    return float(np.mean(scores))


def overfit_probe(config: TrainConfig, dataset, n_slices: int = 4,
                  steps: int = 200, model_spec: ModelSpec | None = None) -> list[dict]:
    """Drive repeated optimizer steps on one fixed batch of lesion-bearing slices.

    A sanity oracle for the optimization path: the loss on the memorized batch
    should fall well below 0.1. Returns per-step records {step, train_loss}.
    """
    if model_spec is None:
        model_spec = ModelSpec(variant=config.variant, init_seed=config.seed)
    elif model_spec.variant != config.variant:
        raise ConfigError(
            f"model spec variant {model_spec.variant!r} conflicts with train config {config.variant!r}"
        )
    dataset_dir, ids = read_manifest(dataset)
    cases = load_cases(dataset_dir, sorted(ids))

    picked = {k: [] for k in ("flair", "atlas", "mask")}
    count = 0
    for case in cases:
        batch = extract_slices(_normalized(case), model_spec.canvas, keep_empty=False)
        lesion_planes = batch.mask[:, 0].sum(axis=(1, 2)) > 0
        for i in np.flatnonzero(lesion_planes):
            picked["flair"].append(batch.flair[i])
            picked["atlas"].append(batch.atlas[i])
            picked["mask"].append(batch.mask[i])
            count += 1
            if count == n_slices:
                break
        if count == n_slices:
            break
    if count < n_slices:
        raise DataError(f"dataset provides only {count} lesion-bearing slices, need {n_slices}")

    model = build_model(model_spec)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    step_config = dataclasses.replace(config, accumulation_steps=1)
    tensors = tuple(torch.from_numpy(np.stack(picked[k])) for k in ("flair", "atlas", "mask"))

    records = []
    for step in range(1, steps + 1):
        loss = run_epoch(model, optimizer, [tensors], step_config)
        records.append({"step": step, "train_loss": loss})
    return records
