"""Volumetric and lesion-wise evaluation: DSC, AVD, Recall, F1.

Volumetric metrics are voxel counts over whole volumes; the lesion-wise
metrics count connected components (26-connectivity by default) where a
lesion is detected iff it shares at least one voxel with the other side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset import read_manifest
from .errors import ConfigError, DataError
from .volume import Volume3D, load_volume

DEFAULT_CONNECTIVITY = 26
# scipy's generate_binary_structure ranks: 1 → faces, 2 → +edges, 3 → +corners
_CONNECTIVITY_RANK = {6: 1, 18: 2, 26: 3}


def _as_binary(volume) -> np.ndarray:
    data = volume.data if isinstance(volume, Volume3D) else np.asarray(volume)
    if data.ndim != 3:
        raise ConfigError(f"expected a 3-D volume, got shape {data.shape}")
    if data.dtype != bool and not np.isin(data, (0, 1)).all():
        raise ConfigError("expected a binary volume")
    return data.astype(bool)


def dsc(pred, gt) -> float:
    """100 * 2|P∩G| / (|P|+|G|); both empty counts as perfect agreement (100)."""
    p = _as_binary(pred)
    g = _as_binary(gt)
    if p.shape != g.shape:
        raise ConfigError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    denom = p.sum() + g.sum()
    if denom == 0:
        return 100.0
    return 100.0 * 2.0 * np.logical_and(p, g).sum() / denom


def avd(pred, gt) -> float:
    """100 * ||P| - |G|| / |G|; undefined (an error) when the ground truth is empty."""
    p = _as_binary(pred)
    g = _as_binary(gt)
    if p.shape != g.shape:
        raise ConfigError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    n_gt = int(g.sum())
    if n_gt == 0:
        raise DataError("undefined AVD: ground-truth mask is empty")
    return 100.0 * abs(int(p.sum()) - n_gt) / n_gt


@dataclass
class LesionSet:
    """Connected components of a binary volume under a declared connectivity."""

    shape: tuple[int, int, int]
    connectivity: int
    labels: np.ndarray = field(repr=False)  # 0 background, 1..n component ids
    n_components: int

    def __len__(self) -> int:
        return self.n_components

    def components(self) -> list[np.ndarray]:
        """Voxel coordinates per component, as (k_i, 3) integer arrays."""
        return [np.argwhere(self.labels == i) for i in range(1, self.n_components + 1)]


def connected_components(mask, connectivity: int = DEFAULT_CONNECTIVITY) -> LesionSet:
    data = _as_binary(mask)
    if connectivity not in _CONNECTIVITY_RANK:
        raise ConfigError(f"connectivity must be one of {sorted(_CONNECTIVITY_RANK)}, got {connectivity}")
    structure = ndimage.generate_binary_structure(3, _CONNECTIVITY_RANK[connectivity])
    labels, n = ndimage.label(data, structure=structure)
    return LesionSet(shape=data.shape, connectivity=connectivity, labels=labels, n_components=int(n))


def _check_same_shape(pred_lesions: LesionSet, gt_lesions: LesionSet):
    if pred_lesions.shape != gt_lesions.shape:
        raise ConfigError(f"lesion sets come from different shapes: {pred_lesions.shape} vs {gt_lesions.shape}")


def lesion_recall(pred_lesions: LesionSet, gt_lesions: LesionSet) -> float:
    """Percent of GT lesions sharing >= 1 voxel with any predicted lesion; no GT lesions -> 100."""
    _check_same_shape(pred_lesions, gt_lesions)
    if gt_lesions.n_components == 0:
        return 100.0
    overlap = pred_lesions.labels > 0
    detected = np.unique(gt_lesions.labels[(gt_lesions.labels > 0) & overlap]).size
    return 100.0 * detected / gt_lesions.n_components


def lesion_f1(pred_lesions: LesionSet, gt_lesions: LesionSet) -> float:
    """Harmonic mean of lesion recall and lesion precision; both empty -> 100, other degenerate -> 0."""
    _check_same_shape(pred_lesions, gt_lesions)
    n_pred = pred_lesions.n_components
    n_gt = gt_lesions.n_components
    if n_pred == 0 and n_gt == 0:
        return 100.0
    recall = lesion_recall(pred_lesions, gt_lesions)
    if n_pred == 0:
        precision = 0.0
    else:
        hit = np.unique(pred_lesions.labels[(pred_lesions.labels > 0) & (gt_lesions.labels > 0)]).size
        precision = 100.0 * hit / n_pred
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class MetricReport:
    """Per-case metric records plus their unweighted mean."""

    cases: list[dict]
    aggregate: dict

    METRIC_KEYS = ("dsc", "avd", "recall", "f1")

    def to_json_dict(self) -> dict:
        return {"cases": self.cases, "aggregate": self.aggregate}

    def to_text(self) -> str:
        header = f"{'Case':<16}{'DSC (%)':>10}{'AVD (%)':>10}{'Recall (%)':>12}{'F1 (%)':>10}"
        lines = [header, "-" * len(header)]
        for rec in self.cases:
            lines.append(
                f"{rec['case_id']:<16}{rec['dsc']:>10.2f}{rec['avd']:>10.2f}"
                f"{rec['recall']:>12.2f}{rec['f1']:>10.2f}"
            )
        lines.append("-" * len(header))
        agg = self.aggregate
        lines.append(
            f"{'mean':<16}{agg['dsc']:>10.2f}{agg['avd']:>10.2f}"
            f"{agg['recall']:>12.2f}{agg['f1']:>10.2f}"
        )
        return "\n".join(lines) + "\n"

    def save(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / "report.json"
        with open(json_path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        text_path = out_dir / "report.txt"
        text_path.write_text(self.to_text())
        return json_path, text_path


def evaluate_case(case_id: str, pred_mask, gt_mask, connectivity: int = DEFAULT_CONNECTIVITY) -> dict:
    pred_lesions = connected_components(pred_mask, connectivity)
    gt_lesions = connected_components(gt_mask, connectivity)
    return {
        "case_id": case_id,
        "dsc": dsc(pred_mask, gt_mask),
        "avd": avd(pred_mask, gt_mask),
        "recall": lesion_recall(pred_lesions, gt_lesions),
        "f1": lesion_f1(pred_lesions, gt_lesions),
        "n_gt_lesions": gt_lesions.n_components,
        "n_pred_lesions": pred_lesions.n_components,
    }


def aggregate_cases(cases: list[dict]) -> dict:
    if not cases:
        raise DataError("no cases to aggregate")
    return {k: float(np.mean([c[k] for c in cases])) for k in MetricReport.METRIC_KEYS}


def evaluate(pred_dir, gt_source, case_ids: list[str] | None = None,
             connectivity: int = DEFAULT_CONNECTIVITY) -> MetricReport:
    """Compare predicted masks in pred_dir/<case>/mask.nii.gz against dataset ground truth."""
    pred_dir = Path(pred_dir)
    gt_dir, manifest_ids = read_manifest(gt_source)
    ids = sorted(case_ids) if case_ids is not None else sorted(manifest_ids)
    missing = [c for c in ids if c not in set(manifest_ids)]
    if missing:
        raise DataError(f"cases not in dataset manifest: {missing}")

    records = []
    for case_id in ids:
        pred_path = _find_mask(pred_dir / case_id)
        gt_path = _find_mask(gt_dir / case_id)
        pred = load_volume(pred_path, "mask")
        gt = load_volume(gt_path, "mask")
        if pred.data.shape != gt.data.shape:
            raise DataError(
                f"{case_id}: prediction shape {pred.data.shape} does not match ground truth {gt.data.shape}"
            )
        records.append(evaluate_case(case_id, pred, gt, connectivity))
    return MetricReport(cases=records, aggregate=aggregate_cases(records))


def _find_mask(case_dir: Path) -> Path:
    for name in ("mask.nii.gz", "mask.nii"):
        path = case_dir / name
        if path.is_file():
            return path
    raise DataError(f"no mask volume under {case_dir}")
