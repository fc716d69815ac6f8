"""Binary frame files, parameter checkpoints and PPM images.

Frame file layout (all integers and floats little-endian)::

    magic        4 bytes   b"RFRM"
    version      u16       format version that wrote the file
    min_reader   u16       oldest reader version able to read it
    n_sections   u32
    n_sections x { tag 4 bytes ASCII, length u64, payload[length] }

Sections (floats are f32 except the CALB section, which is f64):

    CALB  K[9] f64, R[9] f64, t[3] f64, image_width u32, image_height u32,
          range width u32, n_lasers u32, azimuth_min f64, azimuth_max f64,
          elevation_table[n_lasers] f64
    SWEP  timestamp f64, n u32, r[n] f32, e[n] f32, theta[n] f32, laser_id[n] u16
    RIMG  rows u32, cols u32, grid[rows*cols*5] f32, point_index[rows*cols] i32
    CIMG  height u32, width u32, channels u32, data[h*w*c] f32
    LABL  n u32, class[n] i8, object_id[n] i32
    GTBX  n u32, class[n] u8, object_id[n] i32, params[n*7] f32 (x y z l w h yaw)

Unknown section tags are skipped using their length prefix.  A reader never
looks past a section's declared length.
"""
from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import RVFusionError
from .geometry import CameraCalibration
from .rangeimage import LidarSweep, RangeImage, RangeImageConfig

FRAME_MAGIC = b"RFRM"
FORMAT_VERSION = 1
CHECKPOINT_MAGIC = b"RCKP"
CHECKPOINT_VERSION = 1

SECTION_NAMES = {
    b"CALB": "calibration",
    b"SWEP": "sweep",
    b"RIMG": "range image",
    b"CIMG": "camera image",
    b"LABL": "point labels",
    b"GTBX": "ground-truth boxes",
}


class FrameFormatError(RVFusionError, ValueError):
    pass


class BadMagicError(FrameFormatError):
    pass


class UnsupportedVersionError(FrameFormatError):
    pass


class TruncatedSectionError(FrameFormatError):
    def __init__(self, section: str, message: str):
        super().__init__(f"truncated {section} section: {message}")
        self.section = section


class CorruptSectionError(FrameFormatError):
    def __init__(self, section: str, message: str):
        super().__init__(f"corrupt {section} section: {message}")
        self.section = section


class FormatWarning(UserWarning):
    pass


@dataclass
class GroundTruthBoxes:
    """``params`` rows are ``(x, y, z, length, width, height, yaw)``."""

    cls: np.ndarray
    object_id: np.ndarray
    params: np.ndarray

    def __post_init__(self):
        self.cls = np.asarray(self.cls).astype(np.int64)
        self.object_id = np.asarray(self.object_id).astype(np.int64)
        self.params = np.asarray(self.params, dtype=np.float32).reshape(-1, 7)

    def __len__(self):
        return len(self.cls)


@dataclass
class Frame:
    """One synchronized LiDAR sweep + camera image with labels.

    Arrays are coerced to their storage dtypes on construction so that
    ``read_frame(write_frame(f))`` reproduces ``f`` exactly.
    """

    calibration: CameraCalibration
    range_config: RangeImageConfig
    sweep: LidarSweep
    range_image: RangeImage
    camera: np.ndarray
    labels: np.ndarray
    object_ids: np.ndarray
    boxes: GroundTruthBoxes

    def __post_init__(self):
        s = self.sweep
        self.sweep = LidarSweep(
            np.asarray(s.r, dtype=np.float32),
            np.asarray(s.e, dtype=np.float32),
            np.asarray(s.theta, dtype=np.float32),
            np.asarray(s.laser_id).astype(np.int64),
            float(s.timestamp),
        )
        self.range_image = RangeImage(
            np.asarray(self.range_image.grid, dtype=np.float32),
            np.asarray(self.range_image.point_index).astype(np.int64),
        )
        self.camera = np.asarray(self.camera, dtype=np.float32)
        self.labels = np.asarray(self.labels).astype(np.int64)
        self.object_ids = np.asarray(self.object_ids).astype(np.int64)


# ---------------------------------------------------------------- encoding


def _arr(a, dtype) -> bytes:
    return np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


def _encode_calibration(cal: CameraCalibration, cfg: RangeImageConfig) -> bytes:
    return b"".join([
        _arr(cal.K, "f8"), _arr(cal.R, "f8"), _arr(cal.t, "f8"),
        struct.pack("<IIII", cal.image_width, cal.image_height, cfg.width, cfg.num_lasers),
        struct.pack("<dd", cfg.azimuth_min, cfg.azimuth_max),
        _arr(cfg.elevation_table, "f8"),
    ])


def _encode_sweep(s: LidarSweep) -> bytes:
    if len(s) and (s.laser_id.min() < 0 or s.laser_id.max() > 0xFFFF):
        raise FrameFormatError("laser_id does not fit in u16")
    return b"".join([
        struct.pack("<dI", s.timestamp, len(s)),
        _arr(s.r, "f4"), _arr(s.e, "f4"), _arr(s.theta, "f4"), _arr(s.laser_id, "u2"),
    ])


def _encode_range_image(img: RangeImage) -> bytes:
    rows, cols = img.shape
    return struct.pack("<II", rows, cols) + _arr(img.grid, "f4") + _arr(img.point_index, "i4")


def _encode_camera(cam: np.ndarray) -> bytes:
    h, w, c = cam.shape
    return struct.pack("<III", h, w, c) + _arr(cam, "f4")


def _encode_labels(labels, ids) -> bytes:
    return struct.pack("<I", len(labels)) + _arr(labels, "i1") + _arr(ids, "i4")


def _encode_boxes(b: GroundTruthBoxes) -> bytes:
    return struct.pack("<I", len(b)) + _arr(b.cls, "u1") + _arr(b.object_id, "i4") + _arr(b.params, "f4")


def encode_frame(frame: Frame, extra_sections=(), version=FORMAT_VERSION, min_reader=FORMAT_VERSION) -> bytes:
    """Serialize a frame.  ``extra_sections`` is a list of ``(tag, payload)``."""
    sections = [
        (b"CALB", _encode_calibration(frame.calibration, frame.range_config)),
        (b"SWEP", _encode_sweep(frame.sweep)),
        (b"RIMG", _encode_range_image(frame.range_image)),
        (b"CIMG", _encode_camera(frame.camera)),
        (b"LABL", _encode_labels(frame.labels, frame.object_ids)),
        (b"GTBX", _encode_boxes(frame.boxes)),
        *extra_sections,
    ]
    out = [FRAME_MAGIC, struct.pack("<HHI", version, min_reader, len(sections))]
    for tag, payload in sections:
        out.append(struct.pack("<4sQ", tag, len(payload)))
        out.append(payload)
    return b"".join(out)


def write_frame(frame: Frame, path) -> None:
    Path(path).write_bytes(encode_frame(frame))


# ---------------------------------------------------------------- decoding


class _Cursor:
    """Reads typed values from a bounded buffer, raising on overrun."""

    def __init__(self, buf: memoryview, section: str, short=None):
        self.buf = buf
        self.pos = 0
        self.section = section
        self.short = short or CorruptSectionError

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise self.short(
                self.section, f"needs {self.pos + n} bytes but declares {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).astype(dt.newbyteorder("="))

    def finish(self):
        if self.pos != len(self.buf):
            raise CorruptSectionError(self.section, f"{len(self.buf) - self.pos} trailing bytes")


def _decode_calibration(c: _Cursor):
    K = c.array("f8", 9).reshape(3, 3)
    R = c.array("f8", 9).reshape(3, 3)
    t = c.array("f8", 3)
    iw, ih, width, nl = c.unpack("<IIII")
    az0, az1 = c.unpack("<dd")
    table = c.array("f8", nl)
    try:
        cal = CameraCalibration(K, R, t, iw, ih)
        cfg = RangeImageConfig(width, tuple(table), az0, az1)
    except ValueError as exc:
        raise CorruptSectionError(c.section, str(exc)) from exc
    return cal, cfg


def _decode_sweep(c: _Cursor) -> LidarSweep:
    ts, n = c.unpack("<dI")
    r, e, th = c.array("f4", n), c.array("f4", n), c.array("f4", n)
    lid = c.array("u2", n).astype(np.int64)
    return LidarSweep(r, e, th, lid, ts)


def _decode_range_image(c: _Cursor) -> RangeImage:
    rows, cols = c.unpack("<II")
    grid = c.array("f4", rows * cols * 5).reshape(rows, cols, 5)
    idx = c.array("i4", rows * cols).reshape(rows, cols).astype(np.int64)
    return RangeImage(grid, idx)


def _decode_camera(c: _Cursor) -> np.ndarray:
    h, w, ch = c.unpack("<III")
    return c.array("f4", h * w * ch).reshape(h, w, ch)


def _decode_labels(c: _Cursor):
    (n,) = c.unpack("<I")
    return c.array("i1", n).astype(np.int64), c.array("i4", n).astype(np.int64)


def _decode_boxes(c: _Cursor) -> GroundTruthBoxes:
    (n,) = c.unpack("<I")
    cls = c.array("u1", n)
    ids = c.array("i4", n)
    params = c.array("f4", n * 7).reshape(n, 7)
    return GroundTruthBoxes(cls, ids, params)


_DECODERS = {
    b"CALB": _decode_calibration,
    b"SWEP": _decode_sweep,
    b"RIMG": _decode_range_image,
    b"CIMG": _decode_camera,
    b"LABL": _decode_labels,
    b"GTBX": _decode_boxes,
}


def decode_frame(data: bytes) -> Frame:
    buf = memoryview(data)
    if len(buf) < 4 or bytes(buf[:4]) != FRAME_MAGIC:
        raise BadMagicError(f"not a frame file (magic {bytes(buf[:4])!r}, expected {FRAME_MAGIC!r})")
    if len(buf) < 12:
        raise TruncatedSectionError("header", f"{len(buf)} bytes, need 12")
    version, min_reader, count = struct.unpack_from("<HHI", buf, 4)
    if version == 0 or min_reader > FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"frame format version {version} requires reader >= {min_reader}; this reader is {FORMAT_VERSION}"
        )
    if version > FORMAT_VERSION:
        warnings.warn(
            f"frame format version {version} is newer than {FORMAT_VERSION}; reading known sections only",
            FormatWarning,
            stacklevel=3,
        )
    pos = 12
    found = {}
    for k in range(count):
        if pos + 12 > len(buf):
            raise TruncatedSectionError(f"header of section #{k}", f"{len(buf) - pos} bytes left, need 12")
        tag, length = struct.unpack_from("<4sQ", buf, pos)
        pos += 12
        name = SECTION_NAMES.get(tag, tag.decode("ascii", "replace"))
        if pos + length > len(buf):
            raise TruncatedSectionError(name, f"declares {length} bytes, {len(buf) - pos} available")
        payload = buf[pos : pos + length]
        pos += length
        if tag not in _DECODERS:
            warnings.warn(f"skipping unknown section {name!r} ({length} bytes)", FormatWarning, stacklevel=3)
            continue
        if tag in found:
            raise CorruptSectionError(name, "duplicate section")
        cur = _Cursor(payload, name)
        found[tag] = _DECODERS[tag](cur)
        cur.finish()
    missing = [SECTION_NAMES[t] for t in _DECODERS if t not in found]
    if missing:
        raise FrameFormatError(f"missing sections: {', '.join(missing)}")
    if pos != len(buf):
        warnings.warn(f"{len(buf) - pos} trailing bytes after last section", FormatWarning, stacklevel=3)
    cal, cfg = found[b"CALB"]
    labels, ids = found[b"LABL"]
    return Frame(cal, cfg, found[b"SWEP"], found[b"RIMG"], found[b"CIMG"], labels, ids, found[b"GTBX"])


def read_frame(path) -> Frame:
    return decode_frame(Path(path).read_bytes())


def frames_equal(a: Frame, b: Frame) -> bool:
    """Bit-exact structural equality."""

    def same(x, y):
        x, y = np.asarray(x), np.asarray(y)
        return x.dtype == y.dtype and x.shape == y.shape and x.tobytes() == y.tobytes()

    return (
        same(a.calibration.K, b.calibration.K)
        and same(a.calibration.R, b.calibration.R)
        and same(a.calibration.t, b.calibration.t)
        and (a.calibration.image_width, a.calibration.image_height)
        == (b.calibration.image_width, b.calibration.image_height)
        and a.range_config == b.range_config
        and same(a.sweep.r, b.sweep.r)
        and same(a.sweep.e, b.sweep.e)
        and same(a.sweep.theta, b.sweep.theta)
        and same(a.sweep.laser_id, b.sweep.laser_id)
        and struct.pack("<d", a.sweep.timestamp) == struct.pack("<d", b.sweep.timestamp)
        and same(a.range_image.grid, b.range_image.grid)
        and same(a.range_image.point_index, b.range_image.point_index)
        and same(a.camera, b.camera)
        and same(a.labels, b.labels)
        and same(a.object_ids, b.object_ids)
        and same(a.boxes.cls, b.boxes.cls)
        and same(a.boxes.object_id, b.boxes.object_id)
        and same(a.boxes.params, b.boxes.params)
    )


# ---------------------------------------------------------------- checkpoints
#
#   magic b"RCKP", version u16, reserved u16,
#   metadata_len u32, metadata (UTF-8 JSON),
#   n_tensors u32, n x { name_len u16, name, ndim u8, dims[ndim] u32 },
#   tensor data f32 in directory order.


def write_checkpoint(path, tensors: dict, metadata: dict | None = None) -> None:
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    head = [CHECKPOINT_MAGIC, struct.pack("<HHI", CHECKPOINT_VERSION, 0, len(meta)), meta]
    head.append(struct.pack("<I", len(tensors)))
    blobs = []
    for name, value in tensors.items():
        a = np.asarray(value, dtype=np.float32)
        nb = name.encode("utf-8")
        head.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        blobs.append(_arr(a, "f4"))
    Path(path).write_bytes(b"".join(head + blobs))


def read_checkpoint(path) -> tuple[dict, dict]:
    buf = memoryview(Path(path).read_bytes())
    if bytes(buf[:4]) != CHECKPOINT_MAGIC:
        raise BadMagicError(f"not a checkpoint file (magic {bytes(buf[:4])!r})")
    c = _Cursor(buf[4:], "checkpoint", TruncatedSectionError)
    version, _, mlen = c.unpack("<HHI")
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    meta = json.loads(bytes(c.take(mlen)).decode("utf-8"))
    (n,) = c.unpack("<I")
    directory = []
    for _ in range(n):
        (nl,) = c.unpack("<H")
        name = bytes(c.take(nl)).decode("utf-8")
        (nd,) = c.unpack("<B")
        dims = c.unpack(f"<{nd}I")
        directory.append((name, dims))
    tensors = {}
    for name, dims in directory:
        tensors[name] = c.array("f4", int(np.prod(dims, dtype=np.int64))).reshape(dims)
    c.finish()
    return tensors, meta


# ---------------------------------------------------------------- images


def to_rgb8(pixels) -> np.ndarray:
    a = np.asarray(pixels)
    if a.ndim == 2:
        a = np.repeat(a[..., None], 3, axis=2)
    if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError(f"expected (H, W, 3) or (H, W) pixels, got {a.shape}")
    if a.dtype != np.uint8:
        a = np.round(np.clip(a.astype(np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    return a


def write_image(pixels, path) -> None:
    """Binary PPM (P6).  Floats are taken as [0, 1]; 2-D input is grayscale."""
    a = to_rgb8(pixels)
    h, w, _ = a.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + a.tobytes())


def read_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ValueError("only 8-bit P6 images are supported")
    w, h = int(fields[1]), int(fields[2])
    pos += 1
    return np.frombuffer(data[pos : pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3)
