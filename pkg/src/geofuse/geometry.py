"""Depth unprojection and covariance-based surface normals.

Camera frame: X right, Y down, Z forward.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .imagery import DepthMap, _frozen


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DataError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def check_frame(self, width: int, height: int) -> None:
        if not (0 <= self.cx < width and 0 <= self.cy < height):
            raise DataError(
                f"principal point ({self.cx}, {self.cy}) outside {width}x{height} frame"
            )

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @classmethod
    def from_json(cls, path: str | Path) -> "CameraIntrinsics":
        path = Path(path)
        if not path.exists():
            raise DataError(f"intrinsics file not found: {path}")
        try:
            d = json.loads(path.read_text())
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{path}: bad intrinsics ({e})") from None

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))


@dataclass(frozen=True)
class PointCloud:
    """Organized cloud, ``points`` has shape (h, w, 3)."""

    points: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if pts.ndim != 3 or pts.shape[2] != 3 or valid.shape != pts.shape[:2]:
            raise DataError(f"bad point cloud shapes {pts.shape} / {valid.shape}")
        ok = np.all(np.isfinite(pts), axis=2) & (pts[..., 2] > 0)
        if np.any(valid & ~ok):
            raise DataError("valid points must be finite with Z > 0")
        pts = np.where(valid[..., None], pts, 0.0)
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "valid", _frozen(valid))

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


@dataclass(frozen=True)
class NormalMap:
    """Per-pixel unit normals, shape (h, w, 3)."""

    normals: np.ndarray
    valid: np.ndarray
    curvature: np.ndarray | None = field(default=None, compare=False)
    """Surface variation of the fitting window, when estimated from points."""

    def __post_init__(self):
        n = np.asarray(self.normals, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if n.ndim != 3 or n.shape[2] != 3 or valid.shape != n.shape[:2]:
            raise DataError(f"bad normal map shapes {n.shape} / {valid.shape}")
        norms = np.linalg.norm(n[valid], axis=1)
        if norms.size and np.max(np.abs(norms - 1.0)) > 1e-6:
            raise DataError("valid normals must have unit length")
        if self.curvature is not None:
            object.__setattr__(self, "curvature", _frozen(np.asarray(self.curvature, dtype=np.float64)))
        n = np.where(valid[..., None], n, 0.0)
        object.__setattr__(self, "normals", _frozen(n))
        object.__setattr__(self, "valid", _frozen(valid))

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def valid_normals(self, max_curvature: float | None = None) -> np.ndarray:
        """(N, 3) array of valid normals in row-major pixel order."""
        mask = self.valid
        if max_curvature is not None:
            if self.curvature is None:
                raise ValueError("normal map carries no curvature")
            mask = mask & (self.curvature <= max_curvature)
        return self.normals[mask]


def unproject(depth: DepthMap, k: CameraIntrinsics) -> PointCloud:
    h, w = depth.shape
    u = np.arange(w, dtype=np.float64)[None, :]
    v = np.arange(h, dtype=np.float64)[:, None]
    z = depth.values
    pts = np.empty((h, w, 3))
    pts[..., 0] = (u - k.cx) * z / k.fx
    pts[..., 1] = (v - k.cy) * z / k.fy
    pts[..., 2] = z
    return PointCloud(pts, depth.valid)


def project(points: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of (..., 3) camera-frame points to (..., 2) pixel coords."""
    p = np.asarray(points, dtype=np.float64)
    u = k.fx * p[..., 0] / p[..., 2] + k.cx
    v = k.fy * p[..., 1] / p[..., 2] + k.cy
    return np.stack([u, v], axis=-1)


def _window_moments(cloud: PointCloud, window: int, rel_threshold: float):
    """Neighbor count and first/second moments of offsets from the center point.

    Offsets are accumulated in a fixed row-major window order.
    """
    h, w = cloud.shape
    r = window // 2
    pts = np.pad(cloud.points, ((r, r), (r, r), (0, 0)))
    val = np.pad(cloud.valid, r)
    center = cloud.points
    zc = center[..., 2]
    vc = cloud.valid
    count = np.zeros((h, w))
    s1 = np.zeros((h, w, 3))
    s2 = np.zeros((h, w, 6))
    for dy in range(window):
        for dx in range(window):
            nb = pts[dy : dy + h, dx : dx + w]
            m = val[dy : dy + h, dx : dx + w] & vc
            m &= np.abs(nb[..., 2] - zc) <= rel_threshold * zc
            q = np.where(m[..., None], nb - center, 0.0)
            count += m
            s1 += q
            s2[..., 0] += q[..., 0] * q[..., 0]
            s2[..., 1] += q[..., 0] * q[..., 1]
            s2[..., 2] += q[..., 0] * q[..., 2]
            s2[..., 3] += q[..., 1] * q[..., 1]
            s2[..., 4] += q[..., 1] * q[..., 2]
            s2[..., 5] += q[..., 2] * q[..., 2]
    return count, s1, s2


def estimate_normals(
    cloud: PointCloud,
    window: int = 9,
    rel_threshold: float = 0.05,
    degenerate_ratio: float = 1e-10,
    max_curvature: float | None = None,
) -> NormalMap:
    """Least-variance direction of each pixel's window neighborhood.

    Neighbors with ``|dz| > rel_threshold * z`` are dropped. Pixels with
    fewer than ``window**2 / 2`` usable neighbors, or whose neighborhood is
    collinear, come back invalid. With ``max_curvature`` set, pixels whose
    surface variation ``l0 / (l0 + l1 + l2)`` exceeds it (windows straddling
    a crease) are invalid too. Normals are flipped to face the camera.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    h, w = cloud.shape
    count, s1, s2 = _window_moments(cloud, window, rel_threshold)
    support = cloud.valid & (2 * count >= window * window)

    idx = np.flatnonzero(support)
    c = count.reshape(-1)[idx][:, None]
    m1 = s1.reshape(-1, 3)[idx] / c
    m2 = s2.reshape(-1, 6)[idx] / c
    cov = np.empty((idx.size, 3, 3))
    pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
    for j, (a, b) in enumerate(pairs):
        cov[:, a, b] = m2[:, j] - m1[:, a] * m1[:, b]
        cov[:, b, a] = cov[:, a, b]

    evals, evecs = np.linalg.eigh(cov)
    n = evecs[:, :, 0].copy()
    p = cloud.points.reshape(-1, 3)[idx]
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    ok = evals[:, 2] > 0
    ok &= evals[:, 1] > degenerate_ratio * scale
    curv = np.maximum(evals[:, 0], 0.0) / np.maximum(evals.sum(axis=1), np.finfo(float).tiny)
    if max_curvature is not None:
        ok &= curv <= max_curvature

    # near-repeated smallest eigenvalue: take the in-span direction facing the camera
    tie = ok & (evals[:, 1] - evals[:, 0] <= 1e-9 * scale)
    if np.any(tie):
        view = -p[tie] / np.linalg.norm(p[tie], axis=1, keepdims=True)
        v0, v1 = evecs[tie][:, :, 0], evecs[tie][:, :, 1]
        t = v0 * np.sum(view * v0, axis=1, keepdims=True)
        t += v1 * np.sum(view * v1, axis=1, keepdims=True)
        tn = np.linalg.norm(t, axis=1, keepdims=True)
        n[tie] = np.where(tn > 1e-12, t / np.maximum(tn, 1e-300), v0)

    n /= np.linalg.norm(n, axis=1, keepdims=True)
    flip = np.sum(n * p, axis=1) > 0
    n[flip] = -n[flip]

    normals = np.zeros((h * w, 3))
    valid = np.zeros(h * w, dtype=bool)
    curvature = np.full(h * w, np.inf)
    normals[idx[ok]] = n[ok]
    valid[idx[ok]] = True
    curvature[idx[ok]] = curv[ok]
    return NormalMap(normals.reshape(h, w, 3), valid.reshape(h, w), curvature.reshape(h, w))
