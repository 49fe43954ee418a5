"""Volume containers and case loading.

Two on-disk formats are understood, dispatched by extension:

* ``.grid`` - a plain binary fixture format: three little-endian int32
  dimensions followed by float32 scalars in C order.
* ``.nii`` / ``.nii.gz`` - single-file NIfTI-1 volumes (a compact reader
  and writer; common integer/float datatypes, scl slope/inter honored).

Cases pair an image with a sidecar label through the naming convention
``<case_id>_t1.<ext>`` / ``<case_id>_label.<ext>``.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(Exception):
    pass


class ShapeMismatchError(DataError):
    pass


class NonBinaryLabelError(DataError):
    pass


@dataclass
class VolumeCase:
    """One subject: image volume, binary lesion volume, physical spacing."""

    case_id: str
    image: np.ndarray
    label: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.image.ndim != 3 or self.label.ndim != 3:
            raise ShapeMismatchError("image and label must be 3D volumes")
        if self.image.shape != self.label.shape:
            raise ShapeMismatchError(
                f"image {self.image.shape} vs label {self.label.shape}")
        if not np.all((self.label == 0) | (self.label == 1)):
            raise NonBinaryLabelError(
                "label contains values other than 0 and 1; refusing to binarize")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise DataError(f"spacings must be strictly positive, got {self.spacing}")
        self.image = np.ascontiguousarray(self.image, dtype=np.float32)
        self.label = np.ascontiguousarray(self.label, dtype=np.uint8)
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def depth(self) -> int:
        return self.image.shape[2]


# ---------------------------------------------------------------------------
# .grid fixture format
# ---------------------------------------------------------------------------

def read_grid(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise DataError(f"{path}: truncated grid header")
    dims = struct.unpack("<3i", raw[:12])
    if any(d <= 0 for d in dims):
        raise DataError(f"{path}: nonpositive grid dims {dims}")
    count = dims[0] * dims[1] * dims[2]
    body = np.frombuffer(raw, dtype="<f4", offset=12)
    if body.size != count:
        raise DataError(
            f"{path}: expected {count} scalars for dims {dims}, found {body.size}")
    return body.reshape(dims).astype(np.float32)


def write_grid(path, volume: np.ndarray) -> None:
    volume = np.asarray(volume, dtype=np.float32)
    if volume.ndim != 3:
        raise DataError("grid files hold 3D volumes")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3i", *volume.shape))
        fh.write(np.ascontiguousarray(volume, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# Minimal NIfTI-1 support
# ---------------------------------------------------------------------------

_NIFTI_DTYPES = {
    2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32,
    64: np.float64, 256: np.int8, 512: np.uint16, 768: np.uint32,
}


def _open_maybe_gz(path, mode="rb"):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def read_nifti(path) -> tuple[np.ndarray, tuple[float, float, float]]:
    with _open_maybe_gz(path) as fh:
        hdr = fh.read(348)
        if len(hdr) < 348:
            raise DataError(f"{path}: truncated NIfTI header")
        for order in ("<", ">"):
            (size,) = struct.unpack(order + "i", hdr[0:4])
            if size == 348:
                break
        else:
            raise DataError(f"{path}: not a NIfTI-1 file (bad header size)")
        dim = struct.unpack(order + "8h", hdr[40:56])
        (datatype,) = struct.unpack(order + "h", hdr[70:72])
        pixdim = struct.unpack(order + "8f", hdr[76:108])
        (vox_offset,) = struct.unpack(order + "f", hdr[108:112])
        slope, inter = struct.unpack(order + "2f", hdr[112:120])
        magic = hdr[344:348]
        if magic not in (b"n+1\x00", b"ni1\x00"):
            raise DataError(f"{path}: unsupported NIfTI magic {magic!r}")
        ndim = dim[0]
        if not 1 <= ndim <= 7:
            raise DataError(f"{path}: bad dim[0]={ndim}")
        shape = [max(1, d) for d in dim[1:1 + ndim]]
        if int(np.prod(shape[3:], initial=1)) != 1 or len(shape) < 3:
            raise DataError(f"{path}: expected a 3D volume, got dims {shape}")
        shape = shape[:3]
        if datatype not in _NIFTI_DTYPES:
            raise DataError(f"{path}: unsupported NIfTI datatype {datatype}")
        dt = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(order)
        fh.seek(int(vox_offset))
        count = int(np.prod(shape))
        body = fh.read(count * dt.itemsize)
        if len(body) < count * dt.itemsize:
            raise DataError(f"{path}: truncated NIfTI data section")
    data = np.frombuffer(body, dtype=dt).reshape(shape, order="F")
    out = data.astype(np.float32)
    if slope not in (0.0, 1.0) or inter != 0.0:
        scale = slope if slope != 0.0 else 1.0
        out = out * scale + inter
    spacing = tuple(abs(float(p)) or 1.0 for p in pixdim[1:4])
    return out, spacing


def write_nifti(path, volume: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> None:
    volume = np.asarray(volume, dtype=np.float32)
    if volume.ndim != 3:
        raise DataError("NIfTI writer only handles 3D volumes")
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, *volume.shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, 16)          # float32
    struct.pack_into("<h", hdr, 72, 32)          # bitpix
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)      # vox_offset
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl slope/inter
    hdr[344:348] = b"n+1\x00"
    with _open_maybe_gz(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00" * 4)                    # empty extension flag
        fh.write(np.asfortranarray(volume).tobytes(order="F"))


# ---------------------------------------------------------------------------
# Dispatch and case pairing
# ---------------------------------------------------------------------------

def load_volume(path) -> tuple[np.ndarray, tuple[float, float, float]]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"volume file not found: {p}")
    name = p.name.lower()
    if name.endswith(".grid"):
        return read_grid(p), (1.0, 1.0, 1.0)
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        return read_nifti(p)
    raise DataError(f"unrecognized volume container: {p.name}")


def save_volume(path, volume: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> None:
    name = Path(path).name.lower()
    if name.endswith(".grid"):
        write_grid(path, volume)
    elif name.endswith(".nii") or name.endswith(".nii.gz"):
        write_nifti(path, volume, spacing)
    else:
        raise DataError(f"unrecognized volume container: {name}")


def _split_suffix(name: str) -> tuple[str, str]:
    if name.endswith(".nii.gz"):
        return name[:-7], ".nii.gz"
    stem, dot, ext = name.rpartition(".")
    return (stem, "." + ext) if dot else (name, "")


def case_paths(image_path) -> tuple[Path, Path, str]:
    p = Path(image_path)
    stem, ext = _split_suffix(p.name)
    if not stem.endswith("_t1"):
        raise DataError(
            f"{p.name}: image files follow the <case_id>_t1{ext or '.<ext>'} convention")
    case_id = stem[:-3]
    return p, p.with_name(f"{case_id}_label{ext}"), case_id


def load_case(image_path) -> VolumeCase:
    """Load an image/label pair into a validated :class:`VolumeCase`."""
    img_path, lab_path, case_id = case_paths(image_path)
    if not img_path.exists():
        raise FileNotFoundError(f"image volume not found: {img_path}")
    if not lab_path.exists():
        raise FileNotFoundError(f"label volume not found: {lab_path}")
    image, spacing = load_volume(img_path)
    label, _ = load_volume(lab_path)
    if image.shape != label.shape:
        raise ShapeMismatchError(
            f"{case_id}: image {image.shape} vs label {label.shape}")
    if not np.all((label == 0) | (label == 1)):
        raise NonBinaryLabelError(
            f"{case_id}: label contains values other than 0 and 1")
    return VolumeCase(case_id=case_id, image=image,
                      label=label.astype(np.uint8), spacing=spacing)


def read_manifest(path) -> list[str]:
    """Case ids, one per line; blank lines and '#' comments ignored."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"manifest not found: {p}")
    ids = []
    for line in p.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            ids.append(line)
    return ids


def find_case_file(root, case_id) -> Path:
    root = Path(root)
    for ext in (".grid", ".nii.gz", ".nii"):
        candidate = root / f"{case_id}_t1{ext}"
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no image volume for case {case_id!r} under {root}")
