"""Raster containers, Netpbm / PMAP file I/O and byte encoding of property maps."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

PMAP_MAGIC = b"PMAP"
_PMAP_HEADER = struct.Struct("<4sIII")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class PropertyKind(enum.IntEnum):
    DISPARITY = 0
    HEIGHT = 1
    ANGLE = 2
    CONTOUR = 3
    OTHER = 4


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth in meters with a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or values.size == 0:
            raise DataError(f"depth must be a non-empty 2-D array, got shape {values.shape}")
        if valid.shape != values.shape:
            raise DataError("depth mask shape does not match values")
        good = np.isfinite(values) & (values > 0)
        if np.any(valid & ~good):
            raise DataError("valid depth pixels must be finite and > 0")
        values = np.where(valid, values, 0.0)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))

    @classmethod
    def from_array(cls, z: np.ndarray) -> "DepthMap":
        """Wrap a raw depth array; non-positive or non-finite entries become invalid."""
        z = np.asarray(z, dtype=np.float64)
        valid = np.isfinite(z) & (z > 0)
        return cls(np.where(valid, z, 0.0), valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class ColorImage:
    """8-bit RGB image, shape (height, width, 3)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or v.shape[2] != 3 or v.shape[0] == 0 or v.shape[1] == 0:
            raise DataError(f"color image must have shape (h, w, 3), got {v.shape}")
        if v.dtype != np.uint8:
            if np.any((v < 0) | (v > 255)):
                raise DataError("color values must lie in [0, 255]")
            v = v.astype(np.uint8)
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    def luma(self) -> np.ndarray:
        rgb = self.values.astype(np.float64)
        return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


_KIND_RANGES = {
    PropertyKind.ANGLE: (0.0, 180.0),
    PropertyKind.HEIGHT: (0.0, np.inf),
    PropertyKind.CONTOUR: (0.0, 1.0),
}


@dataclass(frozen=True)
class PropertyMap:
    """Real-valued per-pixel map of one geocentric property."""

    values: np.ndarray
    valid: np.ndarray
    kind: PropertyKind = PropertyKind.OTHER

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or values.size == 0:
            raise DataError(f"property map must be a non-empty 2-D array, got {values.shape}")
        if valid.shape != values.shape:
            raise DataError("property mask shape does not match values")
        kind = PropertyKind(self.kind)
        v = values[valid]
        if not np.all(np.isfinite(v)):
            raise DataError("property map has non-finite values on valid pixels")
        if kind in _KIND_RANGES and v.size:
            lo, hi = _KIND_RANGES[kind]
            if v.min() < lo or v.max() > hi:
                raise DataError(
                    f"{kind.name} values outside [{lo}, {hi}]: [{v.min()}, {v.max()}]"
                )
        values = np.where(valid, values, 0.0)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))
        object.__setattr__(self, "kind", kind)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class ByteMap:
    """uint8 raster with one or three channels."""

    values: np.ndarray
    replicated: bool = field(default=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim not in (2, 3) or (v.ndim == 3 and v.shape[2] != 3):
            raise DataError(f"byte map must be (h, w) or (h, w, 3), got {v.shape}")
        if v.dtype != np.uint8:
            if np.any((v < 0) | (v > 255)):
                raise DataError("byte values must lie in [0, 255]")
            v = v.astype(np.uint8)
        object.__setattr__(self, "values", _frozen(v))

    @property
    def channels(self) -> int:
        return 1 if self.values.ndim == 2 else 3

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]


def scale_to_bytes(pmap: PropertyMap, value_range: tuple[float, float] | None = None) -> ByteMap:
    """Linearly map valid values onto 0..255 (min -> 0, max -> 255).

    ``value_range`` fixes ``(lo, hi)`` instead of the per-image valid min/max;
    values outside it are clipped. Invalid pixels encode as 0 and constant
    maps encode as 128.
    """
    valid = pmap.valid
    if not valid.any():
        raise DataError("cannot byte-scale a map with no valid pixels")
    v = pmap.values
    if value_range is None:
        lo, hi = float(v[valid].min()), float(v[valid].max())
    else:
        lo, hi = map(float, value_range)
        if not hi >= lo:
            raise ValueError(f"invalid range ({lo}, {hi})")
    out = np.zeros(v.shape, dtype=np.uint8)
    if hi == lo:
        out[valid] = 128
        return ByteMap(out)
    t = (np.clip(v[valid], lo, hi) - lo) * (255.0 / (hi - lo))
    out[valid] = np.clip(np.floor(t + 0.5), 0, 255).astype(np.uint8)
    return ByteMap(out)


def replicate_channels(b: ByteMap) -> ByteMap:
    if b.channels != 1:
        raise DataError("replicate_channels expects a single-channel byte map")
    return ByteMap(np.repeat(b.values[..., None], 3, axis=2), replicated=True)


# ---------------------------------------------------------------- Netpbm I/O


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated Netpbm header")
    return data[start:pos], pos


def read_pnm(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a binary P5/P6 file. Returns ``(array, maxval)``.

    Grayscale arrays have shape (h, w); color arrays (h, w, 3).
    """
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported Netpbm magic {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FormatError(f"{path}: malformed header field {tok!r}") from None
    w, h, maxval = fields
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: non-positive dimensions {w}x{h}")
    if not 0 < maxval <= 65535:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after header")
    pos += 1
    ch = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * ch * dtype.itemsize
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    arr = np.frombuffer(payload, dtype=dtype).reshape((h, w, ch) if ch == 3 else (h, w))
    return arr.astype(np.uint16 if maxval > 255 else np.uint8), maxval


def write_pnm(path: str | Path, arr: np.ndarray, maxval: int | None = None) -> None:
    arr = np.asarray(arr)
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write array of shape {arr.shape} as Netpbm")
    if maxval is None:
        maxval = 65535 if arr.dtype == np.uint16 else 255
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = arr.shape[:2]
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    Path(path).write_bytes(header + np.ascontiguousarray(arr).astype(dtype).tobytes())


def load_depth(path: str | Path) -> DepthMap:
    """Load a 16-bit P5 depth image in millimeters; 0 marks a missing reading."""
    arr, maxval = read_pnm(path)
    if arr.ndim != 2:
        raise FormatError(f"{path}: depth must be a grayscale (P5) image")
    if maxval != 65535:
        raise FormatError(f"{path}: depth maxval must be 65535, got {maxval}")
    mm = arr.astype(np.float64)
    valid = arr > 0
    return DepthMap(np.where(valid, mm / 1000.0, 0.0), valid)


def save_depth(path: str | Path, depth: DepthMap) -> None:
    mm = np.floor(depth.values * 1000.0 + 0.5)
    mm = np.where(depth.valid, np.clip(mm, 1, 65535), 0)
    write_pnm(path, mm.astype(np.uint16), maxval=65535)


def load_color(path: str | Path) -> ColorImage:
    arr, maxval = read_pnm(path)
    if arr.ndim != 3:
        raise FormatError(f"{path}: color must be a P6 image")
    if maxval != 255:
        raise FormatError(f"{path}: color maxval must be 255, got {maxval}")
    return ColorImage(arr)


def save_color(path: str | Path, rgb: ColorImage) -> None:
    write_pnm(path, rgb.values, maxval=255)


def save_bytes(path: str | Path, b: ByteMap) -> None:
    write_pnm(path, b.values, maxval=255)


def load_bytes(path: str | Path) -> ByteMap:
    arr, maxval = read_pnm(path)
    if maxval != 255:
        raise FormatError(f"{path}: byte map maxval must be 255, got {maxval}")
    return ByteMap(arr)


def mask_path(path: str | Path) -> Path:
    """Sidecar path holding the validity mask of a PMAP file."""
    p = Path(path)
    return p.with_name(p.name + ".mask.pgm")


def save_property(path: str | Path, pmap: PropertyMap) -> None:
    h, w = pmap.shape
    header = _PMAP_HEADER.pack(PMAP_MAGIC, w, h, int(pmap.kind))
    Path(path).write_bytes(header + pmap.values.astype("<f4").tobytes())
    write_pnm(mask_path(path), np.where(pmap.valid, 255, 0).astype(np.uint8))


def load_property(path: str | Path) -> PropertyMap:
    data = Path(path).read_bytes()
    if len(data) < _PMAP_HEADER.size:
        raise FormatError(f"{path}: file shorter than PMAP header")
    magic, w, h, kind = _PMAP_HEADER.unpack_from(data)
    if magic != PMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if w == 0 or h == 0:
        raise FormatError(f"{path}: zero dimension")
    try:
        kind = PropertyKind(kind)
    except ValueError:
        raise FormatError(f"{path}: unknown property kind {kind}") from None
    need = w * h * 4
    payload = data[_PMAP_HEADER.size : _PMAP_HEADER.size + need]
    if len(payload) < need:
        raise FormatError(f"{path}: truncated payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64)
    mpath = mask_path(path)
    if mpath.exists():
        mask, _ = read_pnm(mpath)
        if mask.shape != (h, w):
            raise FormatError(f"{mpath}: mask shape {mask.shape} != {(h, w)}")
        valid = mask > 0
    else:
        valid = np.isfinite(values)
    return PropertyMap(values, valid, kind)
