"""Synthetic FLAIR / WM-atlas / lesion-mask phantoms.

The atlas is a smoothed shell between two concentric ellipsoids, lesions are
axis-aligned ellipsoids placed only where atlas > 0.5, and the FLAIR volume is
tissue intensity plus lesion hyperintensity, low-frequency texture, and
Gaussian noise. Everything is a deterministic function of (seed, case_index),
so a whole dataset can be regenerated bit-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset import write_manifest
from .errors import ConfigError
from .volume import CaseRecord, Volume3D, save_volume

MAX_PLACEMENT_ATTEMPTS = 200


@dataclass
class PhantomConfig:
    n_cases: int = 30
    shape: tuple[int, int, int] = (24, 96, 96)
    lesion_count_range: tuple[int, int] = (2, 6)
    lesion_radius_range: tuple[float, float] = (2.0, 5.0)
    noise_sigma: float = 0.1
    seed: int = 0
    # Lesion brightness above local tissue; default keeps the 3-sigma contrast
    # of the default noise level without vanishing when noise_sigma is zero.
    lesion_contrast: float = 0.3
    texture_amp: float = 0.1
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.shape = tuple(int(v) for v in self.shape)
        self.lesion_count_range = tuple(int(v) for v in self.lesion_count_range)
        self.lesion_radius_range = tuple(float(v) for v in self.lesion_radius_range)
        self.spacing = tuple(float(v) for v in self.spacing)
        d, h, w = self.shape
        if d < 8 or h < 32 or w < 32:
            raise ConfigError(f"phantom shape must be at least (8, 32, 32), got {self.shape}")
        lo, hi = self.lesion_count_range
        if not (0 <= lo <= hi):
            raise ConfigError(f"bad lesion_count_range {self.lesion_count_range}")
        rlo, rhi = self.lesion_radius_range
        if not (0.5 <= rlo <= rhi):
            raise ConfigError(f"bad lesion_radius_range {self.lesion_radius_range}")
        if self.noise_sigma < 0 or self.texture_amp < 0 or self.lesion_contrast < 0:
            raise ConfigError("noise_sigma, texture_amp, lesion_contrast must be nonnegative")
        if self.n_cases < 0:
            raise ConfigError(f"n_cases must be nonnegative, got {self.n_cases}")


def _ellipsoid_mask(shape, center, radii) -> np.ndarray:
    """Voxel set ((z-cz)/rz)^2 + ((y-cy)/ry)^2 + ((x-cx)/rx)^2 <= 1."""
    grids = np.ogrid[[slice(0, s) for s in shape]]
    dist = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
    return dist <= 1.0


def make_atlas(shape: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Return (atlas, brain) for the given shape.

    brain is the soft outer-ellipsoid support in [0,1]; atlas is the smoothed
    WM shell between the outer ellipsoid and an inner one at 55% of its radii,
    rescaled so its maximum is exactly 1.
    """
    dims = np.asarray(shape, dtype=np.float64)
    center = (dims - 1.0) / 2.0
    outer_r = dims * 0.40
    inner_r = outer_r * 0.55

    outer = _ellipsoid_mask(shape, center, outer_r)
    inner = _ellipsoid_mask(shape, center, inner_r)
    shell = (outer & ~inner).astype(np.float64)

    atlas = ndimage.gaussian_filter(shell, sigma=1.5)
    atlas /= atlas.max()
    brain = ndimage.gaussian_filter(outer.astype(np.float64), sigma=1.0)
    return atlas.astype(np.float32), brain.astype(np.float32)


def _place_lesions(rng, atlas, count_range, radius_range):
    """Draw ellipsoidal lesions fully inside atlas > 0.5; bounded retries per lesion."""
    shape = atlas.shape
    eligible = atlas > 0.5
    eligible_idx = np.argwhere(eligible)
    n_requested = int(rng.integers(count_range[0], count_range[1] + 1))

    mask = np.zeros(shape, dtype=bool)
    lesions = []
    for _ in range(n_requested):
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            center = eligible_idx[rng.integers(len(eligible_idx))]
            radii = rng.uniform(radius_range[0], radius_range[1], size=3)
            les = _ellipsoid_mask(shape, center, radii)
            if np.all(eligible[les]):
                mask |= les
                lesions.append({"center": [int(c) for c in center], "radii": [float(r) for r in radii]})
                break
    return mask, lesions, n_requested


def generate_case(config: PhantomConfig, case_index: int) -> CaseRecord:
    """Synthesize one aligned (FLAIR, atlas, mask) triple, deterministic per (seed, case_index)."""
    if case_index < 0 or case_index >= config.n_cases:
        raise ConfigError(f"case_index {case_index} outside [0, {config.n_cases})")
    rng = np.random.default_rng([config.seed, case_index])
    shape = tuple(config.shape)

    atlas, brain = make_atlas(shape)
    mask, lesions, n_requested = _place_lesions(
        rng, atlas, config.lesion_count_range, config.lesion_radius_range
    )

    # WM renders brighter than the rest of the brain so the texture carries
    # structure beyond the lesions themselves.
    tissue = brain * (0.6 + 0.4 * atlas)
    texture = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=6.0)
    tstd = texture.std()
    if tstd > 0:
        texture /= tstd
    flair = tissue * (1.0 + config.texture_amp * texture) + config.lesion_contrast * mask
    if config.noise_sigma > 0:
        flair = flair + config.noise_sigma * rng.standard_normal(shape)
    flair *= brain > 0.05  # keep air at exactly zero

    case_id = f"case_{case_index:03d}"
    meta = {
        "case_index": case_index,
        "seed": config.seed,
        "lesions": lesions,
        "lesions_requested": n_requested,
        "lesions_placed": len(lesions),
        "noise_sigma": config.noise_sigma,
    }
    return CaseRecord(
        case_id=case_id,
        flair=Volume3D(flair.astype(np.float32), config.spacing, "flair"),
        atlas=Volume3D(atlas, config.spacing, "atlas"),
        mask=Volume3D(mask.astype(np.float32), config.spacing, "mask"),
        meta=meta,
    )


def generate_dataset(config: PhantomConfig, out_dir) -> Path:
    """Write n_cases case directories plus a manifest; byte-identical on regeneration."""
    if config.n_cases < 1:
        raise ConfigError("n_cases must be >= 1 to generate a dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    case_ids = []
    for i in range(config.n_cases):
        case = generate_case(config, i)
        case_dir = out_dir / case.case_id
        case_dir.mkdir(exist_ok=True)
        save_volume(case.flair, case_dir / "flair.nii.gz")
        save_volume(case.atlas, case_dir / "atlas.nii.gz")
        save_volume(case.mask, case_dir / "mask.nii.gz")
        with open(case_dir / "meta.json", "w") as fh:
            json.dump(case.meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        case_ids.append(case.case_id)

    extra = {
        "generator": "phantom",
        "shape": list(config.shape),
        "seed": config.seed,
        "noise_sigma": config.noise_sigma,
        "lesion_count_range": list(config.lesion_count_range),
        "lesion_radius_range": list(config.lesion_radius_range),
        "lesion_contrast": config.lesion_contrast,
        "texture_amp": config.texture_amp,
    }
    return write_manifest(out_dir, case_ids, extra=extra)
