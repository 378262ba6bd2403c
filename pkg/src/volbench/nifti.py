"""NIfTI-1 reader.

Only the subset needed by the benchmark is supported: single-file ``.nii``
(optionally gzip-wrapped) and ``.hdr``/``.img`` pairs, integer and float
voxel types, and the first 3D volume of any higher-dimensional series.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from volbench.errors import VolbenchError

HEADER_SIZE = 348
NIFTI2_HEADER_SIZE = 540
MAGICS = (b"n+1\x00", b"ni1\x00")

# NIfTI datatype code -> numpy scalar type (byte order applied later)
DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
    1024: np.int64,
    1280: np.uint64,
}


class NiftiError(VolbenchError):
    reason = "nifti-unreadable"


class EmptyMaskError(VolbenchError):
    reason = "mask-empty"


@dataclass(frozen=True)
class Volume:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    data: np.ndarray
    orientation: tuple[str, str, str] | None = None


@dataclass(frozen=True)
class MaskVolume:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    bits: np.ndarray
    orientation: tuple[str, str, str] | None = None

    @property
    def count(self) -> int:
        return int(self.bits.sum())


def _read_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise NiftiError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise NiftiError(f"corrupt gzip stream in {path}: {exc}") from exc
    return raw


def _detect_endian(raw: bytes) -> str:
    if len(raw) < 4:
        raise NiftiError("not a NIfTI-1 file (too short)")
    for endian in "<>":
        size = struct.unpack(endian + "i", raw[:4])[0]
        if size == HEADER_SIZE:
            return endian
        if size == NIFTI2_HEADER_SIZE:
            raise NiftiError("NIfTI-2 files are not supported")
    raise NiftiError("not a NIfTI-1 file (bad header size)")


def _axis_codes(directions: np.ndarray) -> tuple[str, str, str] | None:
    """Snap each column of a 3x3 direction matrix to its dominant RAS axis."""
    if not np.all(np.isfinite(directions)):
        return None
    codes = []
    used = set()
    for col in directions.T:
        if not np.any(col):
            return None
        world = int(np.argmax(np.abs(col)))
        if world in used:
            return None
        used.add(world)
        codes.append("RAS"[world] if col[world] > 0 else "LPI"[world])
    return tuple(codes)


def _quaternion_directions(b: float, c: float, d: float, qfac: float) -> np.ndarray:
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a2) if a2 > 0 else 0.0
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )
    rot[:, 2] *= qfac
    return rot


def _orientation(hdr: dict) -> tuple[str, str, str] | None:
    if hdr["sform_code"] > 0:
        srow = np.array(hdr["srow"], dtype=np.float64).reshape(3, 4)
        return _axis_codes(srow[:, :3])
    if hdr["qform_code"] > 0:
        qfac = -1.0 if hdr["pixdim"][0] < 0 else 1.0
        b, c, d = hdr["quatern"]
        return _axis_codes(_quaternion_directions(b, c, d, qfac))
    return None


def _parse_header(raw: bytes) -> dict:
    endian = _detect_endian(raw)
    if len(raw) < HEADER_SIZE:
        raise NiftiError("truncated header")
    magic = raw[344:348]
    if magic not in MAGICS:
        raise NiftiError("not a NIfTI-1 file (bad magic)")
    u = lambda fmt, off: struct.unpack_from(endian + fmt, raw, off)  # noqa: E731
    return {
        "endian": endian,
        "magic": magic,
        "dim": u("8h", 40),
        "datatype": u("h", 70)[0],
        "pixdim": u("8f", 76),
        "vox_offset": u("f", 108)[0],
        "scl_slope": u("f", 112)[0],
        "scl_inter": u("f", 116)[0],
        "qform_code": u("h", 252)[0],
        "sform_code": u("h", 254)[0],
        "quatern": u("3f", 256),
        "srow": u("12f", 280),
    }


def _companion_image(path: Path) -> Path:
    name = path.name
    for suffix in (".hdr.gz", ".hdr"):
        if name.endswith(suffix):
            stem = name[: -len(suffix)]
            for ext in (".img", ".img.gz"):
                candidate = path.with_name(stem + ext)
                if candidate.exists():
                    return candidate
    raise NiftiError(f"no .img file found next to {path}")


def parse_nifti(path) -> Volume:
    """Read a NIfTI-1 file into a :class:`Volume` with float64 voxel data."""
    path = Path(path)
    raw = _read_bytes(path)
    hdr = _parse_header(raw)

    dim = hdr["dim"]
    ndim = dim[0]
    if not 3 <= ndim <= 7:
        raise NiftiError(f"need at least 3 dimensions, header has {ndim}")
    shape = tuple(int(n) for n in dim[1 : ndim + 1])
    if any(n < 1 for n in shape):
        raise NiftiError(f"non-positive dimension in {shape}")
    dims = shape[:3]

    code = hdr["datatype"]
    if code not in DTYPES:
        raise NiftiError(f"unsupported datatype code {code}")
    dtype = np.dtype(DTYPES[code]).newbyteorder(hdr["endian"])

    spacing = tuple(abs(float(p)) for p in hdr["pixdim"][1:4])
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise NiftiError(f"non-positive voxel spacing {spacing}")

    if hdr["magic"] == b"ni1\x00":
        data_bytes = _read_bytes(_companion_image(path))
        offset = max(int(hdr["vox_offset"]), 0)
    else:
        data_bytes = raw
        offset = max(int(hdr["vox_offset"]), HEADER_SIZE)

    count = int(np.prod(shape))
    needed = offset + count * dtype.itemsize
    if len(data_bytes) < needed:
        raise NiftiError(f"truncated data section: need {needed} bytes, file has {len(data_bytes)}")
    n_first = dims[0] * dims[1] * dims[2]
    values = np.frombuffer(data_bytes, dtype=dtype, count=n_first, offset=offset)
    data = values.astype(np.float64).reshape(dims, order="F")

    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope != 0 and np.isfinite(slope):
        if slope != 1 or inter != 0:
            data = data * slope + (inter if np.isfinite(inter) else 0.0)

    return Volume(dims=dims, spacing=spacing, data=data, orientation=_orientation(hdr))


def binarize(volume: Volume, threshold: float = 0.5, label: int | None = None) -> MaskVolume:
    """Foreground is ``value > threshold``, or ``value == label`` when a label is given."""
    if label is None:
        bits = volume.data > threshold
    else:
        bits = volume.data == label
    if not bits.any():
        what = f"label {label}" if label is not None else f"threshold {threshold}"
        raise EmptyMaskError(f"empty segmentation mask ({what})")
    return MaskVolume(dims=volume.dims, spacing=volume.spacing, bits=bits, orientation=volume.orientation)


def read_mask(path, threshold: float = 0.5, label: int | None = None) -> MaskVolume:
    return binarize(parse_nifti(path), threshold=threshold, label=label)
