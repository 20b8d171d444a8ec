"""Per-slice PNG composites: FLAIR in grayscale with the mask contour in red."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError
from .volume import Volume3D


def overlay_plane(flair_plane: np.ndarray, mask_plane: np.ndarray,
                  window: tuple[float, float] | None = None) -> Image.Image:
    """Render one (H, W) FLAIR plane with its mask contour drawn in red.

    window fixes the grayscale mapping (lo, hi); by default the plane's own
    min/max is used. The contour is the mask minus its one-voxel erosion.
    """
    if flair_plane.shape != mask_plane.shape:
        raise ConfigError(f"plane shapes differ: {flair_plane.shape} vs {mask_plane.shape}")
    lo, hi = window if window is not None else (float(flair_plane.min()), float(flair_plane.max()))
    if hi > lo:
        gray = np.clip((flair_plane - lo) / (hi - lo) * 255.0, 0, 255).astype(np.uint8)
    else:
        gray = np.zeros(flair_plane.shape, dtype=np.uint8)
    rgb = np.stack([gray, gray, gray], axis=-1)

    mask = mask_plane > 0.5
    contour = mask & ~ndimage.binary_erosion(mask, border_value=0)
    rgb[contour] = (255, 0, 0)
    return Image.fromarray(rgb, mode="RGB")


def write_overlays(flair: Volume3D, mask: Volume3D, out_dir, prefix: str = "slice") -> list[Path]:
    """One PNG per axial slice; grayscale window is shared across the volume."""
    if flair.shape != mask.shape:
        raise ConfigError(f"volume shapes differ: {flair.shape} vs {mask.shape}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    window = (float(flair.data.min()), float(flair.data.max()))
    paths = []
    for z in range(flair.shape[0]):
        img = overlay_plane(flair.data[z], mask.data[z], window=window)
        path = out_dir / f"{prefix}_{z:03d}.png"
        img.save(path)
        paths.append(path)
    return paths
