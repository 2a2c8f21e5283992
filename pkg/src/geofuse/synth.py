"""Procedural RGB-D rooms with analytic ground truth.

World frame: x right, y forward, z up; the floor is z = 0 and gravity is
(0, 0, -1). Every surface is either a room plane or an axis-aligned box, so
depth comes from closed-form ray intersections.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .detect import BoundingBox, iou_matrix
from .errors import DataError
from .geometry import CameraIntrinsics, NormalMap
from .imagery import ColorImage, DepthMap, PropertyKind, PropertyMap

CLASSES = ("cube", "tallbox", "slab")
CLASS_IDS = {name: i + 1 for i, name in enumerate(CLASSES)}
WALLS = ("left", "right", "back", "front")
WORLD_GRAVITY = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class SceneObject:
    cls: str
    position: tuple[float, float, float]
    size: tuple[float, float, float]
    albedo: tuple[int, int, int] = (200, 60, 60)

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise DataError(f"unknown object class {self.cls!r}")
        if min(self.size) <= 0:
            raise DataError(f"object size must be positive, got {self.size}")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(min corner, max corner); ``position`` is the center of the base."""
        x, y, z = self.position
        sx, sy, sz = self.size
        return np.array([x - sx / 2, y - sy / 2, z]), np.array([x + sx / 2, y + sy / 2, z + sz])


@dataclass(frozen=True)
class Room:
    x_range: tuple[float, float] = (-2.5, 2.5)
    y_range: tuple[float, float] = (-1.0, 5.5)
    walls: tuple[str, ...] = ("left", "right", "back", "front")
    floor_albedo: tuple[int, int, int] = (120, 110, 100)
    wall_albedo: tuple[int, int, int] = (190, 190, 175)

    def planes(self) -> list[tuple[str, np.ndarray, float]]:
        """(name, inward normal, offset) with points x satisfying n.x = offset."""
        out = [("floor", np.array([0.0, 0.0, 1.0]), 0.0)]
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        table = {
            "left": (np.array([1.0, 0.0, 0.0]), x0),
            "right": (np.array([-1.0, 0.0, 0.0]), -x1),
            "front": (np.array([0.0, 1.0, 0.0]), y0),
            "back": (np.array([0.0, -1.0, 0.0]), -y1),
        }
        for w in self.walls:
            if w not in table:
                raise DataError(f"unknown wall {w!r}")
            out.append((w, *table[w]))
        return out


@dataclass(frozen=True)
class SceneSpec:
    width: int = 320
    height: int = 240
    intrinsics: CameraIntrinsics | None = None
    camera_xy: tuple[float, float] = (0.0, 0.0)
    camera_height: float = 1.5
    pitch: float = 15.0
    yaw: float = 0.0
    room: Room = field(default_factory=Room)
    objects: tuple[SceneObject, ...] = ()
    depth_sigma: float = 0.0
    color_sigma: float = 0.0
    quantize: bool = True
    max_range: float = 10.0
    seed: int = 0

    def camera_intrinsics(self) -> CameraIntrinsics:
        if self.intrinsics is not None:
            return self.intrinsics
        f = 0.8125 * self.width
        return CameraIntrinsics(f, f, (self.width - 1) / 2, (self.height - 1) / 2)

    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation; columns are the camera X, Y, Z axes in world."""
        p, y = np.radians(self.pitch), np.radians(self.yaw)
        forward = np.array([np.sin(y) * np.cos(p), np.cos(y) * np.cos(p), -np.sin(p)])
        right = np.array([np.cos(y), -np.sin(y), 0.0])
        down = np.cross(forward, right)
        return np.stack([right, down, forward], axis=1)

    def camera_position(self) -> np.ndarray:
        return np.array([self.camera_xy[0], self.camera_xy[1], self.camera_height])

    def gravity(self) -> np.ndarray:
        return self.rotation().T @ WORLD_GRAVITY

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise DataError("image dimensions must be positive")
        self.camera_intrinsics().check_frame(self.width, self.height)
        boxes = [o.bounds() for o in self.objects]
        for i, (lo, hi) in enumerate(boxes):
            supported = abs(lo[2]) < 1e-9
            for j, (lo2, hi2) in enumerate(boxes):
                if i == j:
                    continue
                overlap = np.minimum(hi, hi2) - np.maximum(lo, lo2)
                if np.all(overlap > 1e-9):
                    raise DataError(f"objects {j} and {i} interpenetrate")
                if abs(lo[2] - hi2[2]) < 1e-9 and np.all(overlap[:2] > 0):
                    supported = True
            if not supported:
                raise DataError(f"object {i} neither rests on the floor nor on another object")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objects"] = [asdict(o) for o in self.objects]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if d.get("intrinsics") is not None:
            d["intrinsics"] = CameraIntrinsics(**d["intrinsics"])
        if "room" in d:
            r = dict(d["room"])
            for key in ("x_range", "y_range", "walls", "floor_albedo", "wall_albedo"):
                if key in r:
                    r[key] = tuple(r[key])
            d["room"] = Room(**r)
        objs = []
        for o in d.get("objects", ()):
            o = dict(o)
            for key in ("position", "size", "albedo"):
                if key in o:
                    o[key] = tuple(o[key])
            objs.append(SceneObject(**o))
        d["objects"] = tuple(objs)
        for key in ("camera_xy",):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as e:
            raise DataError(f"bad scene spec: {e}") from None

    @classmethod
    def from_json(cls, path: str | Path) -> "SceneSpec":
        path = Path(path)
        if not path.exists():
            raise DataError(f"scene spec not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


@dataclass(frozen=True)
class SyntheticScene:
    spec: SceneSpec
    rgb: ColorImage
    depth: DepthMap
    gt_gravity: np.ndarray
    gt_normals: NormalMap
    gt_heights: PropertyMap
    gt_boxes: list[tuple[int, BoundingBox]]
    gt_silhouette: np.ndarray
    surface_id: np.ndarray
    """-1 = no hit, 0 = floor, 1.. = walls in ``room.walls`` order, then objects."""
    face_id: np.ndarray
    """Like ``surface_id`` but distinct for every planar face of every box."""

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.spec.camera_intrinsics()

    def interior_mask(self, margin: int) -> np.ndarray:
        """Pixels whose (2*margin+1)^2 window sees a single planar face."""
        sid = self.face_id
        h, w = sid.shape
        pad = np.pad(sid, margin, constant_values=-2)
        ok = sid >= 0
        for dy in range(2 * margin + 1):
            for dx in range(2 * margin + 1):
                ok &= pad[dy : dy + h, dx : dx + w] == sid
        return ok

    def ground_truth_dict(self) -> dict:
        return {
            "gravity": [float(x) for x in self.gt_gravity],
            "intrinsics": asdict(self.intrinsics),
            "boxes": [
                {"class": CLASSES[c - 1], "class_id": c, "box": b.as_list()} for c, b in self.gt_boxes
            ],
            "spec": self.spec.to_dict(),
        }


def _ray_dirs(spec: SceneSpec) -> np.ndarray:
    k = spec.camera_intrinsics()
    u = np.arange(spec.width, dtype=np.float64)
    v = np.arange(spec.height, dtype=np.float64)
    d = np.empty((spec.height, spec.width, 3))
    d[..., 0] = ((u - k.cx) / k.fx)[None, :]
    d[..., 1] = ((v - k.cy) / k.fy)[:, None]
    d[..., 2] = 1.0
    return d


def render(spec: SceneSpec) -> SyntheticScene:
    """Ray-cast the scene; rays are scaled so the hit distance equals camera depth."""
    spec.validate()
    cam = spec.camera_position()
    for i, o in enumerate(spec.objects):
        lo, hi = o.bounds()
        if np.all(cam >= lo) and np.all(cam <= hi):
            raise DataError(f"camera is inside object {i}")
    R = spec.rotation()
    d_cam = _ray_dirs(spec)
    d = d_cam @ R.T
    h, w = spec.height, spec.width

    t_best = np.full((h, w), np.inf)
    sid = np.full((h, w), -1, dtype=np.int64)
    fid = np.full((h, w), -1, dtype=np.int64)
    n_world = np.zeros((h, w, 3))

    planes = spec.room.planes()
    for k, (_, n, off) in enumerate(planes):
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (off - n @ cam) / denom
        hit = (denom < 0) & (t > 0) & (t < t_best)
        t_best[hit] = t[hit]
        sid[hit] = k
        fid[hit] = k
        n_world[hit] = n

    n_planes = len(planes)
    for k, o in enumerate(spec.objects):
        lo, hi = o.bounds()
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - cam) / d
            t2 = (hi - cam) / d
        tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
        tmax = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
        axis = np.argmax(tmin, axis=2)
        t_near = np.max(tmin, axis=2)
        t_far = np.min(tmax, axis=2)
        hit = (t_near <= t_far) & (t_near > 0) & (t_near < t_best)
        t_best[hit] = t_near[hit]
        sid[hit] = n_planes + k
        fid[hit] = n_planes + 6 * k + 2 * axis[hit] + (d[hit, :][np.arange(hit.sum()), axis[hit]] < 0)
        nrm = np.zeros((h, w, 3))
        comp = np.take_along_axis(d, axis[..., None], axis=2)[..., 0]
        np.put_along_axis(nrm, axis[..., None], -np.sign(comp)[..., None], axis=2)
        n_world[hit] = nrm[hit]

    valid = np.isfinite(t_best) & (t_best <= spec.max_range)
    sid[~valid] = -1
    fid[~valid] = -1
    z_true = np.where(valid, t_best, 0.0)
    hit_pts = cam + d * z_true[..., None]

    rng = np.random.default_rng(spec.seed)
    z = z_true + (spec.depth_sigma * rng.standard_normal((h, w)) if spec.depth_sigma > 0 else 0.0)
    if spec.quantize:
        z = np.floor(z * 1000.0 + 0.5) / 1000.0
    valid &= z > 0
    sid[~valid] = -1
    fid[~valid] = -1
    z = np.where(valid, z, 0.0)

    albedo = np.zeros((n_planes + len(spec.objects), 3))
    albedo[0] = spec.room.floor_albedo
    albedo[1:n_planes] = spec.room.wall_albedo
    for k, o in enumerate(spec.objects):
        albedo[n_planes + k] = o.albedo
    rgb = np.where(valid[..., None], albedo[np.maximum(sid, 0)], 0.0)
    if spec.color_sigma > 0:
        rgb = rgb + spec.color_sigma * rng.standard_normal(rgb.shape)
    rgb = np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)

    normals_cam = n_world @ R
    heights = np.where(valid, np.maximum(hit_pts[..., 2], 0.0), 0.0)

    boxes = []
    for k, o in enumerate(spec.objects):
        m = sid == n_planes + k
        if not m.any():
            continue
        rows = np.flatnonzero(m.any(axis=1))
        cols = np.flatnonzero(m.any(axis=0))
        boxes.append((CLASS_IDS[o.cls], BoundingBox(int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))))

    return SyntheticScene(
        spec=spec,
        rgb=ColorImage(rgb),
        depth=DepthMap(z, valid),
        gt_gravity=spec.gravity(),
        gt_normals=NormalMap(normals_cam, valid),
        gt_heights=PropertyMap(heights, valid, PropertyKind.HEIGHT),
        gt_boxes=boxes,
        gt_silhouette=sid >= n_planes,
        surface_id=sid,
        face_id=fid,
    )


_SIZE_RANGES = {
    "cube": ((0.35, 0.5), None, None),
    "tallbox": ((0.25, 0.35), (0.25, 0.35), (0.9, 1.3)),
    "slab": ((0.8, 1.1), (0.5, 0.7), (0.35, 0.5)),
}


def _sample_size(rng: np.random.Generator, cls: str) -> tuple[float, float, float]:
    sx, sy, sz = _SIZE_RANGES[cls]
    a = float(rng.uniform(*sx))
    if sy is None:
        return (a, a, a)
    return (a, float(rng.uniform(*sy)), float(rng.uniform(*sz)))


def random_scene_spec(
    seed: int,
    width: int = 320,
    height: int = 240,
    pitch_range: tuple[float, float] = (5.0, 30.0),
    yaw_range: tuple[float, float] = (-20.0, 20.0),
    camera_height_range: tuple[float, float] = (1.2, 1.8),
    n_objects: tuple[int, int] = (2, 4),
    depth_sigma: float = 0.0,
    color_sigma: float = 0.0,
    stack_prob: float = 0.25,
    classes: Sequence[str] = CLASSES,
) -> SceneSpec:
    """Random room with a pitched camera and non-overlapping objects in view."""
    rng = np.random.default_rng(seed)
    pitch = float(rng.uniform(*pitch_range))
    yaw = float(rng.uniform(*yaw_range))
    cam_h = float(rng.uniform(*camera_height_range))
    room = Room(
        x_range=(float(rng.uniform(-3.0, -2.2)), float(rng.uniform(2.2, 3.0))),
        y_range=(-1.0, float(rng.uniform(4.5, 6.0))),
        floor_albedo=tuple(int(c) for c in rng.integers(60, 160, 3)),
        wall_albedo=tuple(int(c) for c in rng.integers(150, 230, 3)),
    )
    # floor point straight ahead of the camera, clamped to the room
    reach = min(cam_h / np.tan(np.radians(max(pitch, 1.0))) + 0.3, 3.8)
    yw = np.radians(yaw)
    fwd = np.array([np.sin(yw), np.cos(yw)])
    side = np.array([np.cos(yw), -np.sin(yw)])

    placed: list[SceneObject] = []
    target = int(rng.integers(n_objects[0], n_objects[1] + 1))
    for _ in range(200):
        if len(placed) >= target:
            break
        cls = str(rng.choice(list(classes)))
        size = _sample_size(rng, cls)
        albedo = tuple(int(c) for c in rng.integers(20, 256, 3))
        slabs = [o for o in placed if o.cls == "slab"]
        if cls == "cube" and slabs and rng.random() < stack_prob:
            base = slabs[int(rng.integers(len(slabs)))]
            lo, hi = base.bounds()
            if size[0] < (hi[0] - lo[0]) and size[1] < (hi[1] - lo[1]):
                obj = SceneObject(cls, (base.position[0], base.position[1], float(hi[2])), size, albedo)
                if not any(_overlaps(obj, o) for o in placed):
                    placed.append(obj)
                continue
        dist = float(rng.uniform(1.6, max(1.7, reach + 0.8)))
        lateral = float(rng.uniform(-0.45, 0.45)) * dist
        xy = fwd * dist + side * lateral
        obj = SceneObject(cls, (float(xy[0]), float(xy[1]), 0.0), size, albedo)
        lo, hi = obj.bounds()
        if lo[0] < room.x_range[0] + 0.05 or hi[0] > room.x_range[1] - 0.05:
            continue
        if lo[1] < 0.8 or hi[1] > room.y_range[1] - 0.05:
            continue
        if any(_overlaps(obj, o, margin=0.15) for o in placed):
            continue
        placed.append(obj)
    return SceneSpec(
        width=width,
        height=height,
        camera_xy=(0.0, 0.0),
        camera_height=cam_h,
        pitch=pitch,
        yaw=yaw,
        room=room,
        objects=tuple(placed),
        depth_sigma=depth_sigma,
        color_sigma=color_sigma,
        seed=seed,
    )


def _overlaps(a: SceneObject, b: SceneObject, margin: float = 0.0) -> bool:
    lo, hi = a.bounds()
    lo2, hi2 = b.bounds()
    ov = np.minimum(hi, hi2) - np.maximum(lo, lo2)
    return bool(ov[0] > -margin and ov[1] > -margin and ov[2] > 1e-9)


def generate_scene(seed: int, min_box: int = 8, allow_truncated: bool = False, **kwargs) -> SyntheticScene:
    """Render a random room, dropping objects whose visible box is too small.

    Unless ``allow_truncated``, objects cut by the frame border are dropped too.
    """
    spec = random_scene_spec(seed, **kwargs)
    while True:
        scene = render(spec)
        keep = []
        n_planes = len(spec.room.planes())
        for k, o in enumerate(spec.objects):
            m = scene.surface_id == n_planes + k
            if not m.any():
                continue
            rows = np.flatnonzero(m.any(axis=1))
            cols = np.flatnonzero(m.any(axis=0))
            if rows[-1] - rows[0] + 1 < min_box or cols[-1] - cols[0] + 1 < min_box:
                continue
            h, w = m.shape
            if not allow_truncated and (
                rows[0] == 0 or cols[0] == 0 or rows[-1] == h - 1 or cols[-1] == w - 1
            ):
                continue
            keep.append(o)
        keep = [o for o in keep if _is_supported(o, keep)]
        if len(keep) == len(spec.objects):
            return scene
        spec = replace(spec, objects=tuple(keep))


def _is_supported(o: SceneObject, others: Sequence[SceneObject]) -> bool:
    lo, _ = o.bounds()
    if abs(lo[2]) < 1e-9:
        return True
    for p in others:
        if p is o:
            continue
        lo2, hi2 = p.bounds()
        ov = np.minimum(o.bounds()[1], hi2) - np.maximum(lo, lo2)
        if abs(lo[2] - hi2[2]) < 1e-9 and ov[0] > 0 and ov[1] > 0:
            return True
    return False


# ------------------------------------------------------------- patch datasets


@dataclass(frozen=True)
class LabeledFrame:
    """Byte-encoded streams of one frame plus its labeled boxes."""

    name: str
    streams: dict[str, np.ndarray]
    gt: list[tuple[int, BoundingBox]]

    @property
    def shape(self) -> tuple[int, int]:
        return next(iter(self.streams.values())).shape


@dataclass
class PatchDataset:
    """Stacked crops, ``x`` shape (n, channels, patch, patch) uint8."""

    x: np.ndarray
    y: np.ndarray
    streams: tuple[str, ...]
    train_idx: np.ndarray
    val_idx: np.ndarray

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[self.train_idx], self.y[self.train_idx]

    @property
    def val(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[self.val_idx], self.y[self.val_idx]


def crop_patches(img: np.ndarray, boxes: np.ndarray, patch: int) -> np.ndarray:
    """Square crops centered on each box, resized to ``patch`` by nearest neighbor.

    ``img`` is (channels, h, w); returns (n, channels, patch, patch). The
    crop side is the longer box side; pixels outside the frame read as 0.
    """
    boxes = np.asarray(boxes, dtype=np.int64).reshape(-1, 4)
    c, h, w = img.shape
    bw = boxes[:, 2] - boxes[:, 0] + 1
    bh = boxes[:, 3] - boxes[:, 1] + 1
    side = np.maximum(bw, bh)
    # top-left of the square, centered on the box (twice-coordinates stay integral)
    x0 = (boxes[:, 0] + boxes[:, 2] + 1 - side) // 2
    y0 = (boxes[:, 1] + boxes[:, 3] + 1 - side) // 2
    steps = (np.arange(patch) + 0.5) / patch
    offs = np.floor(steps[None, :] * side[:, None]).astype(np.int64)
    rows = y0[:, None] + offs
    cols = x0[:, None] + offs
    rin = (rows >= 0) & (rows < h)
    cin = (cols >= 0) & (cols < w)
    rows = np.clip(rows, 0, h - 1)
    cols = np.clip(cols, 0, w - 1)
    out = img[:, rows[:, :, None], cols[:, None, :]]  # (c, n, p, p)
    mask = rin[:, :, None] & cin[:, None, :]
    out = np.where(mask[None], out, 0)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def frame_channels(frame: LabeledFrame, streams: Sequence[str]) -> np.ndarray:
    try:
        return np.stack([frame.streams[s] for s in streams])
    except KeyError as e:
        raise DataError(f"frame {frame.name} has no stream {e.args[0]!r}") from None


def background_boxes(
    rng: np.random.Generator,
    frame: LabeledFrame,
    n: int,
    side_range: tuple[int, int] = (12, 80),
    max_iou: float = 0.3,
) -> list[BoundingBox]:
    h, w = frame.shape
    gt = np.array([b.as_list() for _, b in frame.gt], dtype=np.int64).reshape(-1, 4)
    out: list[BoundingBox] = []
    for _ in range(50 * n):
        if len(out) >= n:
            break
        bw = int(rng.integers(side_range[0], min(side_range[1], w) + 1))
        bh = int(rng.integers(side_range[0], min(side_range[1], h) + 1))
        x = int(rng.integers(0, w - bw + 1))
        y = int(rng.integers(0, h - bh + 1))
        b = BoundingBox(x, y, x + bw - 1, y + bh - 1)
        if len(gt) and iou_matrix(np.array([b.as_list()]), gt).max() >= max_iou:
            continue
        out.append(b)
    return out


def make_patch_dataset(
    frames: Sequence[LabeledFrame],
    streams: Sequence[str] = ("D", "H", "A"),
    patch: int = 32,
    per_class: int = 100,
    seed: int = 0,
    train_fraction: float = 0.7,
    min_box: int = 4,
) -> PatchDataset:
    """Class-balanced crops of gt boxes and background windows.

    Label 0 is background, 1..len(CLASSES) the object classes. Each class
    gets exactly ``per_class`` crops (sampled with replacement only when a
    class has fewer instances).
    """
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[tuple[int, BoundingBox]]] = {c: [] for c in range(len(CLASSES) + 1)}
    for fi, fr in enumerate(frames):
        for c, b in fr.gt:
            if b.width < min_box or b.height < min_box:
                raise DataError(f"box {b.as_list()} in frame {fr.name} is smaller than {min_box} px")
            by_class[c].append((fi, b))
    per_frame_bg = max(1, -(-per_class // max(1, len(frames))))
    for fi, fr in enumerate(frames):
        by_class[0].extend((fi, b) for b in background_boxes(rng, fr, per_frame_bg))

    xs, ys = [], []
    for c in sorted(by_class):
        items = by_class[c]
        if not items:
            raise DataError(f"no instances of class {c} in the given frames")
        replace_ = len(items) < per_class
        pick = rng.choice(len(items), size=per_class, replace=replace_)
        chosen = [items[i] for i in sorted(pick)]
        for fi in sorted({fi for fi, _ in chosen}):
            boxes = np.array([b.as_list() for f, b in chosen if f == fi])
            xs.append(crop_patches(frame_channels(frames[fi], streams), boxes, patch))
            ys.append(np.full(len(boxes), c, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(len(y))
    n_train = int(round(train_fraction * len(y)))
    return PatchDataset(x, y, tuple(streams), np.sort(perm[:n_train]), np.sort(perm[n_train:]))
