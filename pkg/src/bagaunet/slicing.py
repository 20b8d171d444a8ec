"""Axial slice extraction to a fixed canvas and exact restacking to 3-D."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError
from .volume import CaseRecord, Volume3D

MIN_CANVAS = 16


@dataclass
class SliceBatch:
    """Co-registered (N, 1, h, w) slice stacks plus provenance for restacking."""

    flair: np.ndarray
    atlas: np.ndarray
    mask: Optional[np.ndarray]
    case_ids: list[str]
    slice_indices: np.ndarray
    orig_shape: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arrays = [self.flair, self.atlas] + ([self.mask] if self.mask is not None else [])
        shapes = {a.shape for a in arrays}
        if len(shapes) != 1:
            raise DataError(f"slice stacks disagree in shape: {sorted(shapes)}")
        if self.flair.ndim != 4 or self.flair.shape[1] != 1:
            raise DataError(f"expected (N, 1, h, w) slice stacks, got {self.flair.shape}")
        if len(self.case_ids) != len(self.flair) or len(self.slice_indices) != len(self.flair):
            raise DataError("slice provenance length mismatch")

    def __len__(self) -> int:
        return len(self.flair)

    @property
    def canvas(self) -> tuple[int, int]:
        return self.flair.shape[2], self.flair.shape[3]


def _fit_plane(plane: np.ndarray, canvas: tuple[int, int]) -> np.ndarray:
    """Center-crop or zero-pad one (H, W) plane to the canvas."""
    out = plane
    for axis, target in enumerate(canvas):
        size = out.shape[axis]
        if size > target:
            start = (size - target) // 2
            sl = [slice(None), slice(None)]
            sl[axis] = slice(start, start + target)
            out = out[tuple(sl)]
        elif size < target:
            before = (target - size) // 2
            pad = [(0, 0), (0, 0)]
            pad[axis] = (before, target - size - before)
            out = np.pad(out, pad)
    return out


def _unfit_plane(plane: np.ndarray, orig_hw: tuple[int, int]) -> np.ndarray:
    """Invert _fit_plane: un-pad, and zero-fill any region lost to cropping."""
    out = plane
    for axis, size in enumerate(orig_hw):
        target = out.shape[axis]
        if size < target:  # was padded
            before = (target - size) // 2
            sl = [slice(None), slice(None)]
            sl[axis] = slice(before, before + size)
            out = out[tuple(sl)]
        elif size > target:  # was cropped
            start = (size - target) // 2
            grown_shape = list(out.shape)
            grown_shape[axis] = size
            grown = np.zeros(grown_shape, dtype=out.dtype)
            sl = [slice(None), slice(None)]
            sl[axis] = slice(start, start + target)
            grown[tuple(sl)] = out
            out = grown
    return out


def extract_slices(case: CaseRecord, canvas: tuple[int, int], keep_empty: bool = True) -> SliceBatch:
    """Cut a case into axial slices fitted to the canvas.

    With keep_empty=False, slices whose FLAIR plane is all zero (no brain
    support) are dropped; their indices are simply absent from the batch so
    restack_slices can restore them as zeros.
    """
    h, w = canvas
    if h < MIN_CANVAS or w < MIN_CANVAS:
        raise DataError(f"canvas {canvas} smaller than {MIN_CANVAS}x{MIN_CANVAS}")
    depth = case.flair.shape[0]
    has_mask = case.mask is not None

    flair_planes, atlas_planes, mask_planes, indices = [], [], [], []
    for z in range(depth):
        fp = case.flair.data[z]
        if not keep_empty and not fp.any():
            continue
        flair_planes.append(_fit_plane(fp, canvas))
        atlas_planes.append(_fit_plane(case.atlas.data[z], canvas))
        if has_mask:
            mask_planes.append(_fit_plane(case.mask.data[z], canvas))
        indices.append(z)

    n = len(indices)
    stack = lambda planes: (
        np.stack(planes)[:, None].astype(np.float32)
        if planes
        else np.zeros((0, 1, h, w), dtype=np.float32)
    )
    return SliceBatch(
        flair=stack(flair_planes),
        atlas=stack(atlas_planes),
        mask=stack(mask_planes) if has_mask else None,
        case_ids=[case.case_id] * n,
        slice_indices=np.asarray(indices, dtype=np.int64),
        orig_shape=case.flair.shape,
        spacing=case.flair.spacing,
    )


def restack_slices(
    probs: np.ndarray,
    slice_indices,
    orig_shape: tuple[int, int, int],
    spacing=(1.0, 1.0, 1.0),
    kind: str = "probability",
) -> Volume3D:
    """Reassemble per-slice maps into a (D, H, W) volume, inverting the canvas fit.

    Slice indices must be unique; axial positions not covered (e.g. slices
    dropped by keep_empty=False) come back as all-zero planes.
    """
    probs = np.asarray(probs)
    if probs.ndim == 4 and probs.shape[1] == 1:
        probs = probs[:, 0]
    if probs.ndim != 3:
        raise DataError(f"expected (N, h, w) probability maps, got shape {probs.shape}")
    slice_indices = np.asarray(slice_indices, dtype=np.int64)
    if len(slice_indices) != len(probs):
        raise DataError("slice index count does not match slice count")
    if len(np.unique(slice_indices)) != len(slice_indices):
        raise DataError("duplicate slice index in restack")

    depth, height, width = orig_shape
    if len(slice_indices) and (slice_indices.min() < 0 or slice_indices.max() >= depth):
        raise DataError("slice index outside original volume depth")
    out = np.zeros(orig_shape, dtype=np.float32)
    for plane, z in zip(probs, slice_indices):
        out[z] = _unfit_plane(plane, (height, width)).astype(np.float32)
    return Volume3D(data=out, spacing=tuple(spacing), kind=kind)
