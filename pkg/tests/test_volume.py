import numpy as np
import pytest

from bagaunet.errors import DataError
from bagaunet.nifti import write_nifti
from bagaunet.volume import (
    CaseRecord,
    Volume3D,
    load_case,
    load_volume,
    normalize_zscore,
    save_volume,
)


def _vol(data, kind="flair", spacing=(1.0, 1.0, 1.0)):
    return Volume3D(data=np.asarray(data, dtype=np.float32), spacing=spacing, kind=kind)


def test_mask_validation():
    _vol(np.zeros((2, 2, 2)), kind="mask")
    with pytest.raises(DataError, match="outside"):
        _vol(np.full((2, 2, 2), 0.3), kind="mask")


def test_atlas_range_validation():
    _vol(np.linspace(0, 1, 8).reshape(2, 2, 2), kind="atlas")
    with pytest.raises(DataError, match="outside"):
        _vol(np.full((2, 2, 2), 1.5), kind="atlas")


def test_bad_kind_and_shape():
    with pytest.raises(DataError, match="kind"):
        _vol(np.zeros((2, 2, 2)), kind="t1")
    with pytest.raises(DataError, match="3-D"):
        Volume3D(data=np.zeros((2, 2)), kind="flair")


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    vol = _vol(rng.normal(size=(3, 5, 7)), spacing=(3.0, 1.0, 1.0))
    save_volume(vol, tmp_path / "f.nii.gz")
    back = load_volume(tmp_path / "f.nii.gz", "flair")
    assert np.array_equal(back.data, vol.data)
    assert back.spacing == vol.spacing


def test_mask_round_trip_uint8_and_binarize(tmp_path):
    mask = _vol((np.random.default_rng(1).random((4, 6, 5)) > 0.6).astype(np.float32), kind="mask")
    save_volume(mask, tmp_path / "m.nii.gz")
    back = load_volume(tmp_path / "m.nii.gz", "mask")
    assert back.data.dtype == np.float32
    assert np.array_equal(back.data, mask.data)
    assert set(np.unique(back.data)) <= {0.0, 1.0}


def test_near_binary_mask_tolerated(tmp_path):
    data = np.zeros((2, 2, 2), dtype=np.float32)
    data[0, 0, 0] = 1.0 + 5e-7
    write_nifti(tmp_path / "m.nii", data)
    back = load_volume(tmp_path / "m.nii", "mask")
    assert back.data[0, 0, 0] == 1.0


def test_far_from_binary_mask_rejected(tmp_path):
    data = np.full((2, 2, 2), 0.4, dtype=np.float32)
    write_nifti(tmp_path / "m.nii", data)
    with pytest.raises(DataError, match="mask"):
        load_volume(tmp_path / "m.nii", "mask")


def test_nonfinite_rejected(tmp_path):
    data = np.zeros((2, 2, 2), dtype=np.float32)
    data[0, 0, 0] = np.nan
    write_nifti(tmp_path / "f.nii", data)
    with pytest.raises(DataError, match="non-finite"):
        load_volume(tmp_path / "f.nii", "flair")


def test_normalize_zscore_support_only():
    data = np.zeros((2, 4, 4), dtype=np.float32)
    data[0] = np.arange(16, dtype=np.float32).reshape(4, 4) + 1.0
    out = normalize_zscore(_vol(data))
    assert np.all(out.data[1] == 0)
    vals = out.data[0].ravel()
    assert abs(vals.mean()) < 1e-6
    assert abs(vals.std() - 1.0) < 1e-6


def test_normalize_zscore_rejects_flat():
    with pytest.raises(DataError, match="all zero"):
        normalize_zscore(_vol(np.zeros((2, 2, 2))))
    with pytest.raises(DataError, match="variance"):
        normalize_zscore(_vol(np.full((2, 2, 2), 3.0)))


def test_case_record_coregistration():
    flair = _vol(np.zeros((2, 3, 4)))
    atlas = _vol(np.zeros((2, 3, 4)), kind="atlas")
    CaseRecord(case_id="ok", flair=flair, atlas=atlas)
    with pytest.raises(DataError, match="co-registered"):
        CaseRecord(case_id="bad", flair=flair, atlas=_vol(np.zeros((2, 3, 5)), kind="atlas"))


def test_load_case(tmp_path):
    case = tmp_path / "case_000"
    rng = np.random.default_rng(2)
    save_volume(_vol(rng.normal(size=(3, 4, 4))), case / "flair.nii.gz")
    save_volume(_vol(rng.random((3, 4, 4)), kind="atlas"), case / "atlas.nii.gz")
    save_volume(_vol((rng.random((3, 4, 4)) > 0.5).astype(np.float32), kind="mask"), case / "mask.nii.gz")
    rec = load_case(case)
    assert rec.case_id == "case_000"
    assert rec.mask is not None

    (case / "mask.nii.gz").unlink()
    with pytest.raises(DataError, match="missing mask"):
        load_case(case)
    rec2 = load_case(case, require_mask=False)
    assert rec2.mask is None
