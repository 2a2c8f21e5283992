import json

import numpy as np
import pytest

from geofuse.errors import DataError, FormatError
from geofuse.geometry import CameraIntrinsics, NormalMap, PointCloud, estimate_normals, project, unproject
from geofuse.imagery import DepthMap

K = CameraIntrinsics(100.0, 110.0, 15.5, 11.5)


def _plane_depth(n, offset, k, h=24, w=32):
    """Depth of the plane n.p = offset seen through pinhole k."""
    u, v = np.meshgrid(np.arange(w), np.arange(h))
    rays = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u, float)], axis=-1)
    return offset / (rays @ n)


def test_unproject_hand_computed():
    z = np.full((24, 32), 2.0)
    cloud = unproject(DepthMap.from_array(z), K)
    assert np.allclose(cloud.points[11, 20], [(20 - 15.5) * 2 / 100, (11 - 11.5) * 2 / 110, 2.0])


def test_project_inverts_unproject(rng):
    z = rng.uniform(0.5, 5, (24, 32))
    cloud = unproject(DepthMap.from_array(z), K)
    uv = project(cloud.points, K)
    u, v = np.meshgrid(np.arange(32), np.arange(24))
    assert np.allclose(uv[..., 0], u, atol=1e-9) and np.allclose(uv[..., 1], v, atol=1e-9)


def test_intrinsics_json(tmp_path):
    p = tmp_path / "k.json"
    K.to_json(p)
    assert CameraIntrinsics.from_json(p) == K
    with pytest.raises(DataError, match="nope.json"):
        CameraIntrinsics.from_json(tmp_path / "nope.json")
    p.write_text(json.dumps({"fx": 1}))
    with pytest.raises(FormatError):
        CameraIntrinsics.from_json(p)


def test_principal_point_outside_frame():
    with pytest.raises(DataError):
        CameraIntrinsics(1, 1, 50, 5).check_frame(32, 24)


def test_normals_of_tilted_plane():
    n = np.array([0.2, -0.4, -0.9])
    n /= np.linalg.norm(n)
    z = _plane_depth(n, -1.0, K)
    nm = estimate_normals(unproject(DepthMap.from_array(z), K))
    got = nm.normals[nm.valid]
    assert nm.valid[4:-4, 4:-4].all()
    # the plane faces the camera: n.p = -1 < 0
    assert np.allclose(got, n, atol=1e-9)


def test_normals_face_camera(rng):
    z = rng.uniform(1.0, 1.02, (20, 20))
    nm = estimate_normals(unproject(DepthMap.from_array(z), CameraIntrinsics(50, 50, 9.5, 9.5)), window=5)
    cloud = unproject(DepthMap.from_array(z), CameraIntrinsics(50, 50, 9.5, 9.5))
    assert np.all(np.sum(nm.normals * cloud.points, axis=2)[nm.valid] <= 0)


def test_depth_discontinuity_rejected():
    z = np.full((24, 32), 2.0)
    z[:, 16:] = 4.0
    nm = estimate_normals(unproject(DepthMap.from_array(z), K))
    # neighbors on the far side are dropped, so normals stay fronto-parallel
    assert np.allclose(nm.normals[nm.valid], [0, 0, -1], atol=1e-9)


def test_sparse_support_is_invalid():
    z = np.zeros((24, 32))
    z[10:13, 10:13] = 2.0
    nm = estimate_normals(unproject(DepthMap.from_array(z), K))
    assert not nm.valid.any()


def test_normal_map_requires_unit_vectors():
    with pytest.raises(DataError):
        NormalMap(np.full((1, 1, 3), 1.0), np.ones((1, 1), bool))


def test_curvature_filter(small_scene):
    cloud = unproject(small_scene.depth, small_scene.intrinsics)
    nm = estimate_normals(cloud)
    strict = estimate_normals(cloud, max_curvature=1e-4)
    assert strict.valid.sum() < nm.valid.sum()
    assert len(nm.valid_normals(1e-4)) == strict.valid.sum()


def test_normals_match_ground_truth_off_silhouette(small_scene):
    sc = small_scene
    nm = estimate_normals(unproject(sc.depth, sc.intrinsics))
    m = sc.interior_mask(4) & nm.valid
    cos = np.sum(nm.normals[m] * sc.gt_normals.normals[m], axis=1)
    assert m.sum() > 1000
    assert np.degrees(np.arccos(np.clip(cos.min(), -1, 1))) < 0.5


def test_point_cloud_invalid_points_rejected():
    with pytest.raises(DataError):
        PointCloud(np.zeros((1, 1, 3)), np.ones((1, 1), bool))
