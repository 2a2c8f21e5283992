import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from geofuse.errors import DataError, FormatError
from geofuse.imagery import (
    ByteMap,
    ColorImage,
    DepthMap,
    PropertyKind,
    PropertyMap,
    load_bytes,
    load_color,
    load_depth,
    load_property,
    mask_path,
    read_pnm,
    replicate_channels,
    save_color,
    save_depth,
    save_property,
    scale_to_bytes,
    write_pnm,
)


def test_depth_rejects_nonpositive_valid():
    with pytest.raises(DataError):
        DepthMap(np.array([[1.0, -1.0]]), np.array([[True, True]]))


def test_depth_from_array_masks_bad_pixels():
    d = DepthMap.from_array(np.array([[1.0, 0.0], [np.nan, 2.0]]))
    assert d.valid.tolist() == [[True, False], [False, True]]
    assert d.values[1, 0] == 0.0


def test_containers_are_read_only():
    d = DepthMap.from_array(np.ones((2, 2)))
    with pytest.raises(ValueError):
        d.values[0, 0] = 5


def test_angle_map_range_checked():
    with pytest.raises(DataError):
        PropertyMap(np.full((2, 2), 181.0), np.ones((2, 2), bool), PropertyKind.ANGLE)
    # invalid pixels are not range-checked
    PropertyMap(np.array([[181.0, 10.0]]), np.array([[False, True]]), PropertyKind.ANGLE)


def test_scale_to_bytes_extremes_and_invalid():
    v = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 99.0]])
    valid = np.array([[True, True, True], [True, True, False]])
    b = scale_to_bytes(PropertyMap(v, valid))
    assert b.values[0, 0] == 0 and b.values[1, 1] == 255
    assert b.values[1, 2] == 0
    # 2.0 -> 0.25 * 255 = 63.75 -> 64
    assert b.values[0, 1] == 64


def test_scale_to_bytes_constant_and_empty():
    b = scale_to_bytes(PropertyMap(np.full((2, 3), 7.0), np.ones((2, 3), bool)))
    assert np.all(b.values == 128)
    with pytest.raises(DataError):
        scale_to_bytes(PropertyMap(np.zeros((2, 2)), np.zeros((2, 2), bool)))


def test_scale_to_bytes_fixed_range_clips():
    pm = PropertyMap(np.array([[-5.0, 90.0, 500.0]]), np.ones((1, 3), bool))
    b = scale_to_bytes(pm, (0.0, 180.0))
    assert b.values.tolist() == [[0, 128, 255]]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 7), elements=st.floats(-1e3, 1e3)))
def test_scale_to_bytes_is_monotone(v):
    b = scale_to_bytes(PropertyMap(v, np.ones(v.shape, bool))).values.ravel().astype(int)
    order = np.argsort(v.ravel(), kind="stable")
    assert np.all(np.diff(b[order]) >= 0)


def test_replicate_channels():
    b = replicate_channels(ByteMap(np.arange(6, dtype=np.uint8).reshape(2, 3)))
    assert b.channels == 3 and b.replicated
    assert np.all(b.values[..., 0] == b.values[..., 2])


def test_depth_roundtrip_millimeters(tmp_path):
    z = np.array([[0.0, 1.2345], [2.0, 65.535]])
    d = DepthMap.from_array(z)
    save_depth(tmp_path / "d.pgm", d)
    back = load_depth(tmp_path / "d.pgm")
    assert back.valid.tolist() == d.valid.tolist()
    assert np.allclose(back.values, [[0.0, 1.235], [2.0, 65.535]], atol=1e-12)


def test_color_roundtrip(tmp_path, rng):
    c = ColorImage(rng.integers(0, 256, (5, 4, 3), dtype=np.uint8))
    save_color(tmp_path / "c.ppm", c)
    assert np.array_equal(load_color(tmp_path / "c.ppm").values, c.values)


def test_pnm_header_comments(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n# a comment\n2 1\n# another\n255\n\x01\x02")
    arr, maxval = read_pnm(p)
    assert maxval == 255 and arr.tolist() == [[1, 2]]
    assert load_bytes(p).values.tolist() == [[1, 2]]


@pytest.mark.parametrize(
    "payload",
    [b"P3\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n2 x\n255\n\x00\x00\x00\x00", b"P5\n1 1\n70000\n\x00\x00"],
)
def test_pnm_malformed(tmp_path, payload):
    p = tmp_path / "bad.pgm"
    p.write_bytes(payload)
    with pytest.raises(FormatError):
        read_pnm(p)


def test_depth_requires_16_bit(tmp_path):
    write_pnm(tmp_path / "d.pgm", np.ones((2, 2), np.uint8), maxval=255)
    with pytest.raises(FormatError):
        load_depth(tmp_path / "d.pgm")


def test_property_roundtrip(tmp_path, rng):
    v = rng.uniform(0, 180, (4, 5))
    valid = rng.random((4, 5)) > 0.3
    pm = PropertyMap(v, valid, PropertyKind.ANGLE)
    save_property(tmp_path / "a.pmap", pm)
    assert mask_path(tmp_path / "a.pmap").exists()
    back = load_property(tmp_path / "a.pmap")
    assert back.kind == PropertyKind.ANGLE
    assert np.array_equal(back.valid, valid)
    assert np.allclose(back.values[valid], v[valid].astype(np.float32), atol=0)


def test_property_bad_magic(tmp_path):
    (tmp_path / "x.pmap").write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(FormatError):
        load_property(tmp_path / "x.pmap")
