import json

import numpy as np
import pytest

from geofuse.detect import BACKGROUND
from geofuse.errors import DataError
from geofuse.geocentric import derive_all
from geofuse.synth import (
    CLASS_IDS,
    LabeledFrame,
    Room,
    SceneObject,
    SceneSpec,
    crop_patches,
    generate_scene,
    make_patch_dataset,
    random_scene_spec,
    render,
)


def test_center_pixel_hits_floor_at_analytic_depth():
    spec = SceneSpec(width=161, height=121, pitch=30, camera_height=1.5, room=Room(walls=()))
    sc = render(spec)
    # the optical axis meets the floor after 1.5 / sin(30 deg) = 3 m
    assert sc.depth.values[60, 80] == pytest.approx(3.0, abs=5e-4)
    unq = render(SceneSpec(width=161, height=121, pitch=30, camera_height=1.5, room=Room(walls=()), quantize=False))
    assert unq.depth.values[60, 80] == pytest.approx(1.5 / np.sin(np.radians(30)), abs=1e-12)


def test_floor_normals_are_minus_gravity():
    sc = render(SceneSpec(width=80, height=60, pitch=25, yaw=10))
    floor = sc.surface_id == 0
    assert floor.any()
    assert np.array_equal(sc.gt_normals.normals[floor], np.tile(-sc.gt_gravity, (floor.sum(), 1)))


def test_gravity_of_level_camera_is_y_axis():
    spec = SceneSpec(pitch=0, yaw=33)
    assert np.allclose(spec.gravity(), [0, 1, 0], atol=1e-15)


def test_render_is_deterministic():
    spec = random_scene_spec(7, width=80, height=60, depth_sigma=0.002, color_sigma=5)
    a, b = render(spec), render(spec)
    assert np.array_equal(a.depth.values, b.depth.values)
    assert np.array_equal(a.rgb.values, b.rgb.values)


def test_camera_inside_object():
    spec = SceneSpec(objects=(SceneObject("tallbox", (0.0, 0.0, 0.0), (0.5, 0.5, 2.0)),))
    with pytest.raises(DataError, match="inside"):
        render(spec)


def test_floating_and_interpenetrating_objects_rejected():
    with pytest.raises(DataError):
        render(SceneSpec(objects=(SceneObject("cube", (0.0, 2.0, 0.3), (0.4, 0.4, 0.4)),)))
    a = SceneObject("cube", (0.0, 2.0, 0.0), (0.4, 0.4, 0.4))
    b = SceneObject("cube", (0.1, 2.0, 0.0), (0.4, 0.4, 0.4))
    with pytest.raises(DataError):
        render(SceneSpec(objects=(a, b)))


def test_stacked_object_is_supported():
    slab = SceneObject("slab", (0.0, 2.5, 0.0), (1.0, 0.6, 0.4))
    cube = SceneObject("cube", (0.0, 2.5, 0.4), (0.3, 0.3, 0.3))
    sc = render(SceneSpec(width=80, height=60, objects=(slab, cube)))
    assert {c for c, _ in sc.gt_boxes} == {CLASS_IDS["slab"], CLASS_IDS["cube"]}


def test_boxes_tightly_bound_silhouettes():
    for seed in range(5):
        sc = generate_scene(seed, width=160, height=120)
        n_planes = len(sc.spec.room.planes())
        for k, (c, b) in enumerate(sc.gt_boxes):
            m = sc.surface_id == n_planes + k
            ys, xs = np.nonzero(m)
            assert xs.min() == b.x1 and xs.max() == b.x2 and ys.min() == b.y1 and ys.max() == b.y2


def test_box_top_heights_are_analytic():
    cube = SceneObject("cube", (0.0, 2.2, 0.0), (0.4, 0.4, 0.4))
    sc = render(SceneSpec(width=160, height=120, pitch=30, objects=(cube,)))
    n_planes = len(sc.spec.room.planes())
    top = sc.face_id == n_planes + 6 * 0 + 2 * 2 + 1
    assert top.any()
    assert np.allclose(sc.gt_heights.values[top], 0.4, atol=1e-9)


def test_derived_maps_match_ground_truth_noise_free():
    from dataclasses import replace

    from geofuse.geocentric import DeriveConfig

    sc0 = generate_scene(11, width=160, height=120)
    sc = render(replace(sc0.spec, quantize=False))
    cfg = DeriveConfig(schedule=((45, 3), (15, 3), (5, 3), (2, 3)), gravity_max_curvature=3e-4)
    ps = derive_all(sc.rgb, sc.depth, sc.intrinsics, cfg)
    m = sc.interior_mask(4)
    # the scene minimum is on the floor (height 0), so the maps share an origin
    err = np.abs(ps.maps["H"].values[m] - sc.gt_heights.values[m])
    assert err.max() < 1e-3


def test_scene_spec_json_roundtrip(tmp_path):
    spec = random_scene_spec(3)
    p = tmp_path / "s.json"
    p.write_text(json.dumps(spec.to_dict()))
    assert SceneSpec.from_json(p) == spec


def test_generated_objects_are_not_truncated():
    for seed in range(10):
        sc = generate_scene(seed, width=160, height=120)
        for _, b in sc.gt_boxes:
            assert b.x1 > 0 and b.y1 > 0 and b.x2 < 159 and b.y2 < 119


def test_crop_patches_nearest_and_padding():
    img = np.arange(100, dtype=np.uint8).reshape(1, 10, 10)
    p = crop_patches(img, np.array([[0, 0, 9, 9]]), 10)
    assert np.array_equal(p[0, 0], img[0])
    p = crop_patches(img, np.array([[0, 0, 1, 1]]), 4)
    assert p.shape == (1, 1, 4, 4)
    assert p[0, 0].tolist() == [[0, 0, 1, 1], [0, 0, 1, 1], [10, 10, 11, 11], [10, 10, 11, 11]]
    # a 1x3 box gets a 3x3 square that sticks out of the frame on top
    p = crop_patches(img, np.array([[0, 0, 2, 0]]), 3)
    assert p[0, 0, 0].tolist() == [0, 0, 0]


def _frames(n=6):
    frames = []
    for s in range(n):
        sc = generate_scene(s, width=160, height=120)
        ps = derive_all(sc.rgb, sc.depth, sc.intrinsics)
        frames.append((sc, LabeledFrame(f"f{s}", ps.byte_streams(), list(sc.gt_boxes))))
    return frames


@pytest.fixture(scope="module")
def frames():
    return _frames()


def test_patch_dataset_balanced_and_split(frames):
    ds = make_patch_dataset([f for _, f in frames], per_class=30, seed=2)
    assert np.bincount(ds.y).tolist() == [30, 30, 30, 30]
    assert ds.x.shape == (120, 3, 32, 32) and ds.x.dtype == np.uint8
    assert len(ds.train_idx) == 84 and len(np.intersect1d(ds.train_idx, ds.val_idx)) == 0
    again = make_patch_dataset([f for _, f in frames], per_class=30, seed=2)
    assert np.array_equal(again.x, ds.x)


def test_floor_background_patch_angle_is_high(frames):
    sc, fr = frames[0]
    # a window on the floor, away from every object
    floor = sc.interior_mask(8) & (sc.surface_id == 0)
    ys, xs = np.nonzero(floor)
    y, x = ys[len(ys) // 2], xs[len(xs) // 2]
    p = crop_patches(fr.streams["A"][None], np.array([[x - 4, y - 4, x + 4, y + 4]]), 8)
    # floor angles are close to 180 deg, the top of the byte range
    assert p.min() > 240


def test_tiny_box_rejected():
    from geofuse.detect import BoundingBox

    fr = LabeledFrame("t", {"D": np.zeros((40, 40), np.uint8)}, [(1, BoundingBox(5, 5, 7, 7))])
    with pytest.raises(DataError):
        make_patch_dataset([fr], streams=("D",), per_class=2)


def test_background_label_is_zero():
    assert BACKGROUND == 0
