"""3-D volume container, NIfTI load/save with per-kind validation, normalization."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import nifti
from .errors import DataError

KINDS = ("flair", "atlas", "mask", "probability")

# Tolerance when coercing/validating nominally-binary or [0,1] data read from disk.
VALUE_TOL = 1e-6


@dataclass
class Volume3D:
    """A (D, H, W) scalar grid with voxel spacing and a content kind.

    ``mask`` volumes hold exactly {0, 1}; ``atlas`` and ``probability``
    volumes hold values in [0, 1]; ``flair`` holds arbitrary real intensities.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: str = "flair"

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise DataError(f"expected 3-D volume, got shape {self.data.shape}")
        if any(s < 1 for s in self.data.shape):
            raise DataError(f"degenerate volume shape {self.data.shape}")
        if self.kind not in KINDS:
            raise DataError(f"unknown volume kind {self.kind!r}")
        if self.kind == "mask":
            vals = np.unique(self.data)
            if not np.isin(vals, (0, 1)).all():
                raise DataError("mask volume contains values outside {0, 1}")
        elif self.kind in ("atlas", "probability"):
            lo, hi = float(self.data.min()), float(self.data.max())
            if lo < -VALUE_TOL or hi > 1 + VALUE_TOL:
                raise DataError(f"{self.kind} values outside [0, 1] (range {lo:g}..{hi:g})")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class CaseRecord:
    """One subject: co-registered FLAIR, atlas, and (optionally) ground-truth mask."""

    case_id: str
    flair: Volume3D
    atlas: Volume3D
    mask: Optional[Volume3D] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {self.flair.shape, self.atlas.shape}
        if self.mask is not None:
            shapes.add(self.mask.shape)
        if len(shapes) != 1:
            raise DataError(
                f"case {self.case_id}: volumes are not co-registered "
                f"(shapes {sorted(shapes)})"
            )


def load_volume(path, kind: str) -> Volume3D:
    """Load a NIfTI volume and validate it for the given kind.

    Mask values within 1e-6 of {0, 1} are binarized by a >0.5 test; anything
    further off is rejected rather than silently thresholded.
    """
    if kind not in KINDS:
        raise DataError(f"unknown volume kind {kind!r}")
    data, spacing = nifti.read_nifti(path)
    data = data.astype(np.float32)
    if not np.isfinite(data).all():
        raise DataError(f"{path}: volume contains non-finite values")

    if kind == "mask":
        near_binary = (np.abs(data) <= VALUE_TOL) | (np.abs(data - 1.0) <= VALUE_TOL)
        if not near_binary.all():
            bad = data[~near_binary].flat[0]
            raise DataError(f"{path}: mask values outside {{0, 1}} (e.g. {bad:g})")
        data = (data > 0.5).astype(np.float32)
    elif kind in ("atlas", "probability"):
        if data.min() < -VALUE_TOL or data.max() > 1 + VALUE_TOL:
            raise DataError(
                f"{path}: {kind} values outside [0, 1] "
                f"(range {data.min():g}..{data.max():g})"
            )
        data = np.clip(data, 0.0, 1.0)
    return Volume3D(data=data, spacing=spacing, kind=kind)


def save_volume(volume: Volume3D, path) -> None:
    """Write a volume as .nii / .nii.gz. Masks go out as uint8, the rest as float32."""
    if volume.kind == "mask":
        data = volume.data.astype(np.uint8)
    else:
        data = volume.data.astype(np.float32)
    nifti.write_nifti(path, data, spacing=volume.spacing)


def normalize_zscore(volume: Volume3D) -> Volume3D:
    """Z-score a FLAIR volume over its nonzero (brain) voxels; background stays zero."""
    if volume.kind != "flair":
        raise DataError(f"normalize_zscore expects a flair volume, got {volume.kind}")
    support = volume.data != 0
    if not support.any():
        raise DataError("empty brain support: volume is all zero")
    vals = volume.data[support]
    mean = vals.mean(dtype=np.float64)
    std = vals.std(dtype=np.float64)
    if std == 0:
        raise DataError("zero variance over brain support")
    out = np.zeros_like(volume.data, dtype=np.float32)
    out[support] = ((vals - mean) / std).astype(np.float32)
    return Volume3D(data=out, spacing=volume.spacing, kind="flair")


def load_case(case_dir, case_id: Optional[str] = None, require_mask: bool = True) -> CaseRecord:
    """Load a ``<case_id>/{flair,atlas,mask}.nii.gz`` directory into a CaseRecord."""
    case_dir = Path(case_dir)
    case_id = case_id or case_dir.name
    flair = load_volume(_find(case_dir, "flair"), "flair")
    atlas = load_volume(_find(case_dir, "atlas"), "atlas")
    mask = None
    try:
        mask_path = _find(case_dir, "mask")
    except DataError:
        if require_mask:
            raise
        mask_path = None
    if mask_path is not None:
        mask = load_volume(mask_path, "mask")
    return CaseRecord(case_id=case_id, flair=flair, atlas=atlas, mask=mask)


def _find(case_dir: Path, stem: str) -> Path:
    for suffix in (".nii.gz", ".nii"):
        candidate = case_dir / f"{stem}{suffix}"
        if candidate.exists():
            return candidate
    raise DataError(f"missing {stem} volume in {case_dir}")
