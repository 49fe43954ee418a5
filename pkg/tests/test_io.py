"""Volume containers: round-trips, case pairing, and load validation."""

import gzip

import numpy as np
import pytest

from lesionseg.io import (
    DataError,
    NonBinaryLabelError,
    ShapeMismatchError,
    VolumeCase,
    load_case,
    read_grid,
    read_manifest,
    read_nifti,
    write_grid,
    write_nifti,
)

rng = np.random.default_rng(11)


def test_grid_roundtrip(tmp_path):
    vol = rng.standard_normal((16, 16, 8)).astype(np.float32)
    path = tmp_path / "vol.grid"
    write_grid(path, vol)
    assert np.array_equal(read_grid(path), vol)


def test_grid_truncation(tmp_path):
    vol = rng.standard_normal((4, 4, 4)).astype(np.float32)
    path = tmp_path / "vol.grid"
    write_grid(path, vol)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataError, match="expected"):
        read_grid(path)


@pytest.mark.parametrize("ext", [".nii", ".nii.gz"])
def test_nifti_roundtrip(tmp_path, ext):
    vol = rng.standard_normal((10, 12, 6)).astype(np.float32)
    path = tmp_path / f"vol{ext}"
    write_nifti(path, vol, spacing=(0.9, 0.9, 3.0))
    data, spacing = read_nifti(path)
    assert np.allclose(data, vol)
    assert spacing == pytest.approx((0.9, 0.9, 3.0))


def test_nifti_int_dtype_and_scaling(tmp_path):
    # int16 data with scl slope/inter, written by hand
    vol = rng.integers(-100, 100, (5, 6, 4)).astype(np.int16)
    path = tmp_path / "raw.nii"
    write_nifti(path, np.zeros((5, 6, 4), np.float32))
    raw = bytearray(path.read_bytes())
    import struct
    struct.pack_into("<h", raw, 70, 4)      # datatype int16
    struct.pack_into("<h", raw, 72, 16)     # bitpix
    struct.pack_into("<2f", raw, 112, 2.0, 1.0)  # slope 2, inter 1
    body = np.asfortranarray(vol).tobytes(order="F")
    path.write_bytes(bytes(raw[:352]) + body)
    data, _ = read_nifti(path)
    assert np.allclose(data, vol.astype(np.float32) * 2.0 + 1.0)


def test_nifti_truncated(tmp_path):
    path = tmp_path / "bad.nii"
    path.write_bytes(b"\x00" * 100)
    with pytest.raises(DataError, match="truncated"):
        read_nifti(path)


def _write_pair(tmp_path, case_id="c01", shape=(16, 16, 8), label_value=1.0):
    img = rng.standard_normal(shape).astype(np.float32)
    lab = np.zeros(shape, np.float32)
    lab[4:8, 4:8, :] = label_value
    write_grid(tmp_path / f"{case_id}_t1.grid", img)
    write_grid(tmp_path / f"{case_id}_label.grid", lab)
    return tmp_path / f"{case_id}_t1.grid"


def test_load_case_roundtrip(tmp_path):
    path = _write_pair(tmp_path)
    case = load_case(path)
    assert case.case_id == "c01"
    assert case.image.shape == (16, 16, 8)
    assert case.label.dtype == np.uint8
    assert set(np.unique(case.label)) <= {0, 1}


def test_load_case_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_case(tmp_path / "nope_t1.grid")
    path = _write_pair(tmp_path, "c02")
    (tmp_path / "c02_label.grid").unlink()
    with pytest.raises(FileNotFoundError, match="label"):
        load_case(path)


def test_load_case_shape_mismatch(tmp_path):
    img = rng.standard_normal((16, 16, 8)).astype(np.float32)
    lab = np.zeros((16, 16, 7), np.float32)
    write_grid(tmp_path / "c03_t1.grid", img)
    write_grid(tmp_path / "c03_label.grid", lab)
    with pytest.raises(ShapeMismatchError):
        load_case(tmp_path / "c03_t1.grid")


def test_load_case_rejects_nonbinary_label(tmp_path):
    path = _write_pair(tmp_path, "c04", label_value=0.5)
    with pytest.raises(NonBinaryLabelError):
        load_case(path)


def test_volume_case_invariants():
    img = np.zeros((4, 4, 2), np.float32)
    lab = np.zeros((4, 4, 2), np.uint8)
    with pytest.raises(DataError):
        VolumeCase("x", img, lab, spacing=(1.0, 0.0, 1.0))
    with pytest.raises(ShapeMismatchError):
        VolumeCase("x", img, np.zeros((4, 4, 3), np.uint8))


def test_manifest(tmp_path):
    p = tmp_path / "cases.txt"
    p.write_text("c01\n\n# comment\nc02\n")
    assert read_manifest(p) == ["c01", "c02"]
    with pytest.raises(FileNotFoundError):
        read_manifest(tmp_path / "missing.txt")


def test_gzip_transparency(tmp_path):
    vol = rng.standard_normal((6, 7, 3)).astype(np.float32)
    plain = tmp_path / "a.nii"
    packed = tmp_path / "b.nii.gz"
    write_nifti(plain, vol)
    write_nifti(packed, vol)
    assert gzip.open(packed, "rb").read() == plain.read_bytes()
