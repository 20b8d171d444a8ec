"""Paired geometric augmentation: mirroring, rotation, shearing, scaling.

Each sample in a batch gets one transform, applied identically to its FLAIR,
atlas, and mask planes (images bilinear, mask nearest-neighbor), so the
triple stays registered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .slicing import SliceBatch


@dataclass
class AugmentConfig:
    mirror_prob: float = 0.5
    rotation_deg: float = 10.0  # angle drawn uniformly in [-rotation_deg, +rotation_deg]
    shear: float = 0.1          # shear factor drawn uniformly in [-shear, +shear]
    scale: tuple[float, float] = (0.9, 1.1)

    def __post_init__(self):
        self.scale = tuple(float(v) for v in self.scale)
        if not 0.0 <= self.mirror_prob <= 1.0:
            raise ConfigError(f"mirror_prob must be in [0, 1], got {self.mirror_prob}")
        if self.rotation_deg < 0 or self.shear < 0:
            raise ConfigError("rotation_deg and shear must be nonnegative")
        lo, hi = self.scale
        if not 0 < lo <= hi:
            raise ConfigError(f"scale range must satisfy 0 < lo <= hi, got {self.scale}")


def affine_plane(plane: np.ndarray, angle_deg: float, shear: float, scale: float, order: int) -> np.ndarray:
    """Rotate/shear/scale one (H, W) plane about its center.

    The content transform is p' = c + R(angle) @ Shear(shear) @ (scale * (p - c))
    in (row, col) coordinates; resampling uses the inverse map with zero fill.
    order=1 for images, order=0 for masks.
    """
    if angle_deg == 0.0 and shear == 0.0 and scale == 1.0:
        return plane.copy()
    theta = math.radians(angle_deg)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    shr = np.array([[1.0, 0.0], [shear, 1.0]])
    fwd = rot @ shr * scale
    inv = np.linalg.inv(fwd)
    center = (np.asarray(plane.shape, dtype=np.float64) - 1.0) / 2.0
    offset = center - inv @ center
    return ndimage.affine_transform(
        plane, inv, offset=offset, order=order, mode="constant", cval=0.0, prefilter=False
    ).astype(plane.dtype)


def augment(batch: SliceBatch, rng: np.random.Generator, config: AugmentConfig) -> SliceBatch:
    """Apply one independently drawn transform per sample; deterministic under a seeded rng."""
    n = len(batch)
    flair = batch.flair.copy()
    atlas = batch.atlas.copy()
    mask = batch.mask.copy() if batch.mask is not None else None

    for i in range(n):
        mirror = rng.random() < config.mirror_prob
        angle = rng.uniform(-config.rotation_deg, config.rotation_deg) if config.rotation_deg else 0.0
        shear = rng.uniform(-config.shear, config.shear) if config.shear else 0.0
        lo, hi = config.scale
        scale = rng.uniform(lo, hi) if hi > lo else lo

        planes = [flair[i, 0], atlas[i, 0]] + ([mask[i, 0]] if mask is not None else [])
        if mirror:
            planes = [p[:, ::-1] for p in planes]
        orders = [1, 1, 0]
        planes = [affine_plane(np.ascontiguousarray(p), angle, shear, scale, o) for p, o in zip(planes, orders)]

        flair[i, 0] = planes[0]
        atlas[i, 0] = np.clip(planes[1], 0.0, 1.0)
        if mask is not None:
            mask[i, 0] = planes[2]

    return SliceBatch(
        flair=flair,
        atlas=atlas,
        mask=mask,
        case_ids=list(batch.case_ids),
        slice_indices=batch.slice_indices.copy(),
        orig_shape=batch.orig_shape,
        spacing=batch.spacing,
    )
