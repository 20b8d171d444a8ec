"""Dataset manifest handling and the train/val/test split."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .volume import CaseRecord, load_case

MANIFEST_NAME = "manifest.json"


@dataclass
class DatasetSplit:
    train: list[str]
    val: list[str]
    test: list[str]
    seed: int

    def __post_init__(self):
        groups = [set(self.train), set(self.val), set(self.test)]
        total = sum(len(g) for g in groups)
        union = set().union(*groups)
        if total != len(union):
            raise ConfigError("split groups overlap")

    @property
    def all_ids(self) -> list[str]:
        return list(self.train) + list(self.val) + list(self.test)


def split_dataset(case_ids, ratio=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Deterministic shuffled split; val/test get floor(ratio*n), train the remainder."""
    case_ids = list(case_ids)
    if len(case_ids) < 3:
        raise ConfigError(f"need at least 3 cases to split, got {len(case_ids)}")
    r_train, r_val, r_test = ratio
    if min(ratio) <= 0:
        raise ConfigError(f"split ratios must be positive, got {ratio}")
    if abs(sum(ratio) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratio}")

    rng = np.random.default_rng(seed)
    order = [case_ids[i] for i in rng.permutation(len(case_ids))]
    n = len(order)
    # Absorb float noise like 0.1*30 = 3.0000000000000004 before flooring.
    n_val = math.floor(r_val * n + 1e-9)
    n_test = math.floor(r_test * n + 1e-9)
    n_train = n - n_val - n_test
    return DatasetSplit(
        train=order[:n_train],
        val=order[n_train : n_train + n_val],
        test=order[n_train + n_val :],
        seed=seed,
    )


def write_manifest(dataset_dir, case_ids, extra=None) -> Path:
    dataset_dir = Path(dataset_dir)
    dataset_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"cases": sorted(case_ids)}
    if extra:
        manifest.update(extra)
    path = dataset_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(dataset_path) -> tuple[Path, list[str]]:
    """Resolve a dataset directory or manifest file to (dataset_dir, case_ids)."""
    dataset_path = Path(dataset_path)
    if dataset_path.is_dir():
        manifest_path = dataset_path / MANIFEST_NAME
    else:
        manifest_path = dataset_path
    if not manifest_path.exists():
        raise DataError(f"dataset manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest {manifest_path}: {exc}") from exc
    cases = manifest.get("cases")
    if not isinstance(cases, list) or not cases:
        raise DataError(f"manifest {manifest_path} lists no cases")
    return manifest_path.parent, [str(c) for c in cases]


def load_cases(dataset_dir, case_ids, require_mask: bool = True) -> list[CaseRecord]:
    dataset_dir = Path(dataset_dir)
    return [
        load_case(dataset_dir / case_id, case_id, require_mask=require_mask)
        for case_id in case_ids
    ]
