"""Ground-truth surface extraction and masked midpoint slices."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from volbench.errors import VolbenchError
from volbench.geometry import PointCloud
from volbench.nifti import EmptyMaskError, MaskVolume, Volume

log = logging.getLogger(__name__)


class StructureAbsentError(VolbenchError):
    reason = "structure-absent-at-midpoint"


class ShapeMismatchError(VolbenchError):
    reason = "scan-mask-mismatch"


class Plane(str, Enum):
    CORONAL = "coronal"
    AXIAL = "axial"

    @classmethod
    def parse(cls, value) -> "Plane":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        if text == "sagittal":
            raise ValueError("sagittal plane is excluded from the benchmark; use coronal or axial")
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown plane {value!r}; expected coronal or axial") from None


# world axis each plane slices along, with the orientation codes that name it
_PLANE_CODES = {Plane.AXIAL: "SI", Plane.CORONAL: "AP"}
# fallback for volumes without a usable transform (RAS-like storage)
_DEFAULT_AXIS = {Plane.AXIAL: 2, Plane.CORONAL: 1}


@dataclass(frozen=True)
class Slice2D:
    """Masked 2D cross-section.

    ``pixels`` and ``mask`` are (height, width) arrays. The first in-plane
    index axis runs along the width; the second runs up the rows.
    """

    pixels: np.ndarray
    mask: np.ndarray
    plane: Plane
    slice_index: int

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def erode(bits: np.ndarray) -> np.ndarray:
    """Binary erosion with the 6-connected cross; outside the grid is background."""
    padded = np.pad(bits.astype(bool), 1, mode="constant", constant_values=False)
    core = padded[1:-1, 1:-1, 1:-1]
    out = core.copy()
    for axis in range(3):
        for shift in (-1, 1):
            sl = [slice(1, -1)] * 3
            sl[axis] = slice(1 + shift, padded.shape[axis] - 1 + shift)
            out &= padded[tuple(sl)]
    return out


def boundary_voxels(bits: np.ndarray) -> np.ndarray:
    bits = bits.astype(bool)
    return bits & ~erode(bits)


def surface_points(mask: MaskVolume) -> PointCloud:
    """Boundary voxel coordinates scaled to millimetres, in (i, j, k) lexicographic order."""
    if not mask.bits.any():
        raise EmptyMaskError("empty segmentation mask")
    idx = np.argwhere(boundary_voxels(mask.bits))
    return PointCloud(idx * np.asarray(mask.spacing, dtype=np.float64), frame="physical_mm")


def plane_axis(plane: Plane, orientation=None) -> int:
    plane = Plane.parse(plane)
    if orientation is None:
        log.warning("no orientation in header; assuming axis %d is %s", _DEFAULT_AXIS[plane], plane.value)
        return _DEFAULT_AXIS[plane]
    for axis, code in enumerate(orientation):
        if code in _PLANE_CODES[plane]:
            return axis
    raise VolbenchError(f"cannot resolve {plane.value} axis from orientation {orientation}")


def midpoint_index(dims, axis: int) -> int:
    return int(dims[axis]) // 2


def _to_display(plane2d: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.flipud(plane2d.T))


def midpoint_masked_slice(scan: Volume, mask: MaskVolume, plane) -> Slice2D:
    plane = Plane.parse(plane)
    if tuple(scan.dims) != tuple(mask.dims):
        raise ShapeMismatchError(f"scan dims {scan.dims} != mask dims {mask.dims}")
    axis = plane_axis(plane, scan.orientation if scan.orientation is not None else mask.orientation)
    index = midpoint_index(scan.dims, axis)
    img = np.take(scan.data, index, axis=axis)
    bits = np.take(mask.bits, index, axis=axis).astype(bool)
    if not bits.any():
        raise StructureAbsentError(f"structure absent at midpoint {plane.value} slice {index}")
    pixels = np.where(bits, img, 0.0)
    return Slice2D(_to_display(pixels), _to_display(bits), plane, index)


def slice_to_uint8(s: Slice2D) -> np.ndarray:
    """Min-max scale in-mask pixels to [1, 255]; background stays 0."""
    if not s.mask.any():
        raise VolbenchError("slice has no in-mask pixels")
    vals = s.pixels[s.mask]
    lo, hi = float(vals.min()), float(vals.max())
    out = np.zeros(s.pixels.shape, dtype=np.uint8)
    if hi == lo:
        out[s.mask] = 255
    else:
        scaled = 1.0 + (s.pixels[s.mask] - lo) / (hi - lo) * 254.0
        out[s.mask] = np.clip(np.rint(scaled), 1, 255).astype(np.uint8)
    return out


def export_slice(s: Slice2D, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(slice_to_uint8(s)).save(path, format="PNG")
    return path
