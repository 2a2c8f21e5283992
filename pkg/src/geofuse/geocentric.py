"""Disparity, height-above-ground, angle-with-gravity and contour maps."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from .errors import DataError, FormatError
from .geometry import CameraIntrinsics, NormalMap, PointCloud, estimate_normals, unproject
from .gravity import DEFAULT_SCHEDULE, Y_AXIS, GravityEstimate, estimate_gravity
from .imagery import (
    PMAP_MAGIC,
    ColorImage,
    DepthMap,
    PropertyKind,
    PropertyMap,
    load_property,
    read_pnm,
    scale_to_bytes,
)

MAP_NAMES = ("D", "H", "A", "Contour")


@dataclass(frozen=True)
class DeriveConfig:
    window: int = 9
    rel_threshold: float = 0.05
    schedule: tuple[tuple[float, int], ...] = DEFAULT_SCHEDULE
    max_normals: int = 20000
    seed: int = 0
    gravity_max_curvature: float | None = None
    height_axis: str = "gravity"
    ground_percentile: float | None = None
    contour: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "DeriveConfig":
        d = dict(d)
        if "schedule" in d:
            d["schedule"] = tuple((float(a), int(b)) for a, b in d["schedule"])
        return cls(**d)


@dataclass(frozen=True)
class PropertySet:
    rgb: ColorImage
    maps: dict[str, PropertyMap]
    gravity: GravityEstimate
    normals: NormalMap | None = field(default=None, compare=False)

    def __post_init__(self):
        for name, m in self.maps.items():
            if m.shape != self.rgb.shape:
                raise DataError(f"map {name} has shape {m.shape}, rgb has {self.rgb.shape}")

    def byte_streams(self) -> dict[str, np.ndarray]:
        """Single-channel byte rasters keyed by stream name (D, H, A, C, R, G, B)."""
        out = {}
        for name, key in (("D", "D"), ("H", "H"), ("A", "A"), ("Contour", "C")):
            if name in self.maps:
                out[key] = scale_to_bytes(self.maps[name]).values
        for i, key in enumerate("RGB"):
            out[key] = np.ascontiguousarray(self.rgb.values[..., i])
        return out


def disparity_map(depth: DepthMap) -> PropertyMap:
    if not depth.valid.any():
        raise DataError("depth map has no valid pixels")
    with np.errstate(divide="ignore"):
        d = np.where(depth.valid, 1.0 / np.where(depth.valid, depth.values, 1.0), 0.0)
    return PropertyMap(d, depth.valid, PropertyKind.DISPARITY)


def height_map(
    cloud: PointCloud,
    g,
    ground_percentile: float | None = None,
) -> PropertyMap:
    """Height along -g above the lowest valid point (or a low percentile)."""
    if not cloud.valid.any():
        raise DataError("point cloud has no valid points")
    g = np.asarray(g, dtype=np.float64)
    up = -g / np.linalg.norm(g)
    elev = cloud.points @ up
    ev = elev[cloud.valid]
    ground = ev.min() if ground_percentile is None else np.percentile(ev, ground_percentile)
    h = np.where(cloud.valid, np.maximum(elev - ground, 0.0), 0.0)
    return PropertyMap(h, cloud.valid, PropertyKind.HEIGHT)


def angle_map(normals: NormalMap, g) -> PropertyMap:
    g = np.asarray(g, dtype=np.float64)
    if abs(np.linalg.norm(g) - 1.0) > 1e-9:
        raise ValueError("gravity must be a unit vector")
    cos = np.clip(normals.normals @ g, -1.0, 1.0)
    a = np.where(normals.valid, np.degrees(np.arccos(cos)), 0.0)
    return PropertyMap(a, normals.valid, PropertyKind.ANGLE)


def ingest_contour(path: str | Path, shape: tuple[int, int] | None = None) -> PropertyMap:
    """Load a precomputed boundary-strength map (PMAP, 8-bit PGM or PNG)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"contour file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == PMAP_MAGIC:
        pm = load_property(path)
        values, valid = pm.values, pm.valid
    elif head[:2] == b"P5":
        arr, maxval = read_pnm(path)
        values = arr.astype(np.float64) / maxval
        valid = np.ones(arr.shape, dtype=bool)
    else:
        try:
            from PIL import Image
        except ImportError:  # pragma: no cover
            raise FormatError(f"{path}: unsupported contour format") from None
        try:
            with Image.open(path) as im:
                arr = np.asarray(im.convert("L"))
        except OSError as e:
            raise FormatError(f"{path}: {e}") from None
        values = arr.astype(np.float64) / 255.0
        valid = np.ones(arr.shape, dtype=bool)
    if shape is not None and tuple(values.shape) != tuple(shape):
        raise DataError(f"contour {path} has shape {values.shape}, frame is {tuple(shape)}")
    return PropertyMap(np.clip(values, 0.0, 1.0), valid, PropertyKind.CONTOUR)


def _minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def fallback_contour(rgb: ColorImage, depth: DepthMap) -> PropertyMap:
    """Equal blend of normalized luma and depth gradient magnitudes."""
    if rgb.shape != depth.shape:
        raise DataError(f"rgb {rgb.shape} and depth {depth.shape} differ in size")
    gy, gx = np.gradient(rgb.luma())
    luma_mag = np.hypot(gx, gy)
    gy, gx = np.gradient(depth.values)
    depth_mag = np.hypot(gx, gy)
    c = 0.5 * _minmax(luma_mag) + 0.5 * _minmax(depth_mag)
    return PropertyMap(np.clip(c, 0.0, 1.0), np.ones(c.shape, dtype=bool), PropertyKind.CONTOUR)


def derive_all(
    rgb: ColorImage,
    depth: DepthMap,
    intrinsics: CameraIntrinsics,
    config: DeriveConfig = DeriveConfig(),
    contour: str | Path | None = None,
) -> PropertySet:
    """Unproject, estimate normals and gravity, then build D, H, A and contour."""
    if rgb.shape != depth.shape:
        raise DataError(f"rgb {rgb.shape} and depth {depth.shape} differ in size")
    if not depth.valid.any():
        raise DataError("depth map has no valid pixels")
    intrinsics.check_frame(depth.width, depth.height)
    cloud = unproject(depth, intrinsics)
    normals = estimate_normals(cloud, config.window, config.rel_threshold)
    grav = estimate_gravity(
        normals.valid_normals(config.gravity_max_curvature),
        config.schedule,
        max_normals=config.max_normals,
        seed=config.seed,
    )
    if config.height_axis == "gravity":
        axis = grav.g
    elif config.height_axis == "camera":
        axis = Y_AXIS
    else:
        raise ValueError(f"unknown height axis {config.height_axis!r}")
    contour = contour if contour is not None else config.contour
    maps = {
        "D": disparity_map(depth),
        "H": height_map(cloud, axis, config.ground_percentile),
        "A": angle_map(normals, grav.g),
        "Contour": (
            ingest_contour(contour, depth.shape) if contour else fallback_contour(rgb, depth)
        ),
    }
    return PropertySet(rgb, maps, grav, normals)

