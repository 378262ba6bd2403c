import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

import oracle
from volbench.nifti import EmptyMaskError, MaskVolume, Volume
from volbench.volume import (
    Plane,
    Slice2D,
    StructureAbsentError,
    erode,
    export_slice,
    midpoint_index,
    midpoint_masked_slice,
    plane_axis,
    slice_to_uint8,
    surface_points,
)


def mask_of(bits, spacing=(1.0, 1.0, 1.0), orientation=None):
    bits = np.asarray(bits, dtype=bool)
    return MaskVolume(bits.shape, tuple(spacing), bits, orientation)


def test_full_cube_keeps_center_only():
    bits = np.ones((3, 3, 3), bool)
    assert erode(bits).sum() == 1 and erode(bits)[1, 1, 1]
    assert len(surface_points(mask_of(bits))) == 26


def test_singleton_is_its_own_boundary():
    bits = np.zeros((4, 3, 2), bool)
    bits[2, 1, 0] = True
    pts = surface_points(mask_of(bits, spacing=(2, 3, 4))).points
    np.testing.assert_array_equal(pts, [[4.0, 3.0, 0.0]])


def test_solid_block_inside_larger_grid():
    bits = np.zeros((9, 9, 9), bool)
    bits[2:7, 2:7, 2:7] = True
    assert len(surface_points(mask_of(bits))) == 125 - 27


def test_points_are_lexicographic():
    bits = np.zeros((5, 5, 5), bool)
    bits[1:4, 0:5, 2:4] = True
    pts = surface_points(mask_of(bits)).points
    keys = [tuple(p) for p in pts]
    assert keys == sorted(keys)


def test_empty_mask_raises():
    with pytest.raises(EmptyMaskError):
        surface_points(mask_of(np.zeros((2, 2, 2))))


masks = arrays(np.bool_, st.tuples(*[st.integers(1, 6)] * 3))


@settings(max_examples=60, deadline=None)
@given(masks)
def test_boundary_matches_loop_oracle(bits):
    if not bits.any():
        return
    pts = surface_points(mask_of(bits, spacing=(0.5, 1.0, 2.0))).points
    np.testing.assert_array_equal(pts, oracle.boundary_points(bits, (0.5, 1.0, 2.0)))


@settings(max_examples=60, deadline=None)
@given(masks)
def test_erosion_is_subset(bits):
    assert not (erode(bits) & ~bits).any()


@settings(max_examples=40, deadline=None)
@given(masks, st.tuples(*[st.floats(0.1, 5.0)] * 3))
def test_spacing_scales_points(bits, spacing):
    if not bits.any():
        return
    unit = surface_points(mask_of(bits)).points
    scaled = surface_points(mask_of(bits, spacing=spacing)).points
    np.testing.assert_array_equal(scaled, unit * np.asarray(spacing))


@settings(max_examples=40, deadline=None)
@given(masks)
def test_no_interior_voxel_in_output(bits):
    if not bits.any():
        return
    pts = {tuple(map(int, p)) for p in surface_points(mask_of(bits)).points}
    interior = erode(bits)
    for idx in np.argwhere(interior):
        assert tuple(idx) not in pts
    for p in pts:
        assert bits[p]


def test_plane_parse_rejects_sagittal():
    with pytest.raises(ValueError, match="sagittal"):
        Plane.parse("sagittal")
    assert Plane.parse("Coronal") is Plane.CORONAL


@pytest.mark.parametrize("n, expected", [(5, 2), (4, 2), (1, 0), (7, 3)])
def test_midpoint_index(n, expected):
    assert midpoint_index((n, n, n), 0) == expected


def test_plane_axis_from_orientation():
    assert plane_axis(Plane.AXIAL, ("R", "A", "S")) == 2
    assert plane_axis(Plane.CORONAL, ("R", "A", "S")) == 1
    assert plane_axis(Plane.AXIAL, ("I", "L", "P")) == 0
    assert plane_axis(Plane.CORONAL, ("I", "L", "P")) == 2


def test_plane_axis_default_warns(caplog):
    assert plane_axis(Plane.AXIAL, None) == 2
    assert plane_axis(Plane.CORONAL, None) == 1
    assert "no orientation" in caplog.text


def _pair(shape=(6, 5, 4), orientation=("R", "A", "S")):
    rng = np.random.default_rng(3)
    scan = Volume(shape, (1.0, 1.0, 1.0), rng.normal(size=shape) * 100, orientation)
    bits = np.zeros(shape, bool)
    bits[1:5, 1:4, 1:3] = True
    return scan, mask_of(bits, orientation=orientation)


def test_masked_slice_zero_outside_mask():
    scan, mask = _pair()
    s = midpoint_masked_slice(scan, mask, "axial")
    assert s.slice_index == 2
    assert s.plane is Plane.AXIAL
    assert (s.pixels[~s.mask] == 0).all()
    # in-plane axes: i along the width, j up the rows
    assert (s.height, s.width) == (5, 6)
    expected = np.where(mask.bits[:, :, 2], scan.data[:, :, 2], 0.0)
    np.testing.assert_array_equal(s.pixels, np.flipud(expected.T))


def test_masked_slice_intensity_invariant_index():
    scan, mask = _pair()
    other = Volume(scan.dims, scan.spacing, scan.data * 7 + 3, scan.orientation)
    assert midpoint_masked_slice(scan, mask, "coronal").slice_index == midpoint_masked_slice(other, mask, "coronal").slice_index


def test_structure_absent_at_midpoint():
    scan, _ = _pair()
    bits = np.zeros(scan.dims, bool)
    bits[0, 0, 0] = True
    with pytest.raises(StructureAbsentError, match="absent at midpoint"):
        midpoint_masked_slice(scan, mask_of(bits), "axial")


def test_dims_mismatch():
    scan, _ = _pair()
    with pytest.raises(ValueError, match="dims"):
        midpoint_masked_slice(scan, mask_of(np.ones((2, 2, 2))), "axial")


def _slice(values, mask):
    return Slice2D(np.where(mask, values, 0.0), np.asarray(mask, bool), Plane.AXIAL, 0)


def test_uniform_slice_maps_to_255():
    m = np.array([[1, 0], [1, 1]], bool)
    out = slice_to_uint8(_slice(np.full((2, 2), 42.0), m))
    np.testing.assert_array_equal(out, [[255, 0], [255, 255]])


def test_minmax_endpoints():
    m = np.array([[1, 1], [0, 0]], bool)
    out = slice_to_uint8(_slice(np.array([[100.0, 200.0], [0, 0]]), m))
    np.testing.assert_array_equal(out, [[1, 255], [0, 0]])


def test_negative_in_mask_values_are_not_background():
    m = np.array([[1, 1, 1]], bool)
    out = slice_to_uint8(_slice(np.array([[-1000.0, 0.0, 1000.0]]), m))
    np.testing.assert_array_equal(out, [[1, 128, 255]])


def test_export_is_deterministic(tmp_path):
    scan, mask = _pair()
    s = midpoint_masked_slice(scan, mask, "coronal")
    a, b = export_slice(s, tmp_path / "a.png"), export_slice(s, tmp_path / "b.png")
    assert a.read_bytes() == b.read_bytes()
    img = np.asarray(Image.open(a))
    assert img.dtype == np.uint8 and img.shape == s.pixels.shape
    np.testing.assert_array_equal(img, slice_to_uint8(s))
