"""Minimal single-file NIfTI-1 reader/writer (.nii and .nii.gz).

Only the subset of the format this pipeline needs: 3-D scalar volumes,
little-endian, data at offset 352, datatypes uint8/int16/int32/float32/float64.
In-memory volumes are (D, H, W) with the axial axis first; on disk the header
dims are (W, H, D) so the x-fastest NIfTI layout is exactly the C-order bytes
of the (D, H, W) array.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

# NIfTI-1 datatype codes we support.
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}

# Little-endian header layout, 348 bytes total.
_HDR_FMT = (
    "<i 10s 18s i h c B 8h 3f h h h h 8f f f f h B B f f f f i i 80s 24s"
    " h h 6f 4f 4f 4f 16s 4s"
)
assert struct.calcsize(_HDR_FMT) == HEADER_SIZE


def _open_for_read(path: Path):
    if path.name.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_nifti(path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Read a NIfTI-1 file into a (D, H, W) array plus voxel spacing in mm.

    Returns the array in the file's native dtype (after scl_slope/scl_inter
    scaling, which promotes to float32 when nontrivial).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"volume file not found: {path}")
    try:
        with _open_for_read(path) as fh:
            raw = fh.read()
    except (OSError, gzip.BadGzipFile) as exc:
        raise DataError(f"unreadable volume file {path}: {exc}") from exc
    if len(raw) < VOX_OFFSET:
        raise DataError(f"{path}: truncated NIfTI header")

    fields = struct.unpack_from(_HDR_FMT, raw, 0)
    sizeof_hdr = fields[0]
    if sizeof_hdr != HEADER_SIZE:
        raise DataError(f"{path}: not a little-endian NIfTI-1 file")
    magic = fields[-1]
    if magic[:3] != MAGIC[:3]:
        raise DataError(f"{path}: bad NIfTI magic {magic!r}")

    dim = fields[7:15]
    ndim = dim[0]
    shape_xyz = [int(d) for d in dim[1 : 1 + max(ndim, 0)]]
    # Tolerate a trailing singleton fourth dimension; reject real 4-D payloads.
    while len(shape_xyz) > 3 and shape_xyz[-1] == 1:
        shape_xyz.pop()
    if len(shape_xyz) != 3:
        raise DataError(f"{path}: expected 3-D volume, got dim={dim[: ndim + 1]}")
    if any(s < 1 for s in shape_xyz):
        raise DataError(f"{path}: degenerate dimensions {shape_xyz}")

    datatype = fields[19]
    if datatype not in _DTYPES:
        raise DataError(f"{path}: unsupported NIfTI datatype code {datatype}")
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder("<")

    pixdim = fields[22:30]
    vox_offset = int(fields[30])
    scl_slope, scl_inter = fields[31], fields[32]

    nx, ny, nz = shape_xyz
    count = nx * ny * nz
    end = vox_offset + count * dtype.itemsize
    if len(raw) < end:
        raise DataError(f"{path}: data payload truncated")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=vox_offset)
    # x fastest on disk -> reshape as (z, y, x) = (D, H, W).
    data = data.reshape(nz, ny, nx).copy()
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        data = data.astype(np.float32) * slope + scl_inter
    spacing = (float(pixdim[3]), float(pixdim[2]), float(pixdim[1]))
    return data, spacing


def write_nifti(path, data: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> None:
    """Write a (D, H, W) array as a single-file NIfTI-1 volume.

    Gzipped output uses a zeroed mtime so identical volumes produce
    byte-identical files.
    """
    path = Path(path)
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"expected 3-D array, got shape {data.shape}")
    if data.dtype not in _CODES:
        raise ValueError(f"unsupported dtype for NIfTI output: {data.dtype}")

    nz, ny, nx = data.shape
    dim = (3, nx, ny, nz, 1, 1, 1, 1)
    pixdim = (1.0, float(spacing[2]), float(spacing[1]), float(spacing[0]), 0.0, 0.0, 0.0, 0.0)
    code = _CODES[np.dtype(data.dtype)]
    bitpix = data.dtype.itemsize * 8

    header = struct.pack(
        _HDR_FMT,
        HEADER_SIZE,
        b"", b"", 0, 0, b"r", 0,
        *dim,
        0.0, 0.0, 0.0, 0,
        code, bitpix, 0,
        *pixdim,
        float(VOX_OFFSET), 1.0, 0.0,
        0, 0, 2,  # xyzt_units: mm
        0.0, 0.0, 0.0, 0.0, 0, 0,
        b"bagaunet", b"",
        0, 1,  # qform none, sform scaled identity
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        pixdim[1], 0.0, 0.0, 0.0,
        0.0, pixdim[2], 0.0, 0.0,
        0.0, 0.0, pixdim[3], 0.0,
        b"", MAGIC,
    )
    payload = header + b"\x00\x00\x00\x00" + np.ascontiguousarray(data, dtype=data.dtype.newbyteorder("<")).tobytes()

    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        if path.name.endswith(".gz"):
            with open(path, "wb") as fh:
                # filename="" keeps the member name out of the stream so
                # identical volumes produce identical bytes at any path
                with gzip.GzipFile(fileobj=fh, filename="", mode="wb", mtime=0) as gz:
                    gz.write(payload)
        else:
            with open(path, "wb") as fh:
                fh.write(payload)
    except OSError as exc:
        raise DataError(f"cannot write volume {path}: {exc}") from exc
