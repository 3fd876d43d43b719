"""Little-endian message codecs shared by every published topic.

Every payload except ``/clock`` starts with its ``frame_id`` string, so the
header can be recovered from a bag record (which stores only the stamp).
Strings are ``u16`` length-prefixed UTF-8. Numeric fields are written in
declared order with no padding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Twist

WORLD_FRAME = "world"


class CodecError(ValueError):
    pass


class Writer:
    def __init__(self):
        self._parts: list[bytes] = []

    def u8(self, v):
        self._parts.append(struct.pack("<B", v))

    def u16(self, v):
        self._parts.append(struct.pack("<H", v))

    def u32(self, v):
        self._parts.append(struct.pack("<I", v))

    def u64(self, v):
        self._parts.append(struct.pack("<Q", v))

    def i32(self, v):
        self._parts.append(struct.pack("<i", v))

    def f64(self, v):
        self._parts.append(struct.pack("<d", v))

    def f64s(self, values):
        a = np.ascontiguousarray(values, dtype="<f8").ravel()
        self._parts.append(a.tobytes())

    def string(self, s: str):
        b = s.encode("utf-8")
        if len(b) > 0xFFFF:
            raise CodecError("string too long")
        self.u16(len(b))
        self._parts.append(b)

    def raw(self, b: bytes):
        self._parts.append(bytes(b))

    def bytes(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes):
        self._mv = memoryview(data)
        self._pos = 0

    def _take(self, n):
        if self._pos + n > len(self._mv):
            raise CodecError("payload truncated")
        b = self._mv[self._pos:self._pos + n]
        self._pos += n
        return b

    def _unpack(self, fmt, n):
        return struct.unpack(fmt, self._take(n))[0]

    def u8(self):
        return self._unpack("<B", 1)

    def u16(self):
        return self._unpack("<H", 2)

    def u32(self):
        return self._unpack("<I", 4)

    def u64(self):
        return self._unpack("<Q", 8)

    def i32(self):
        return self._unpack("<i", 4)

    def f64(self):
        return self._unpack("<d", 8)

    def f64s(self, n):
        return np.frombuffer(self._take(8 * n), dtype="<f8").astype(float)

    def string(self):
        n = self.u16()
        return bytes(self._take(n)).decode("utf-8")

    def raw(self, n):
        return bytes(self._take(n))

    def done(self):
        if self._pos != len(self._mv):
            raise CodecError(f"{len(self._mv) - self._pos} trailing bytes in payload")


REGISTRY: dict[str, type] = {}


def register(cls):
    REGISTRY[cls.SCHEMA] = cls
    return cls


def decode(schema: str, payload: bytes):
    try:
        cls = REGISTRY[schema]
    except KeyError:
        raise CodecError(f"unknown schema {schema!r}") from None
    return cls.decode(payload)


def frame_id_of(schema: str, payload: bytes) -> str:
    if schema == Clock.SCHEMA:
        return WORLD_FRAME
    try:
        return Reader(payload).string()
    except (CodecError, UnicodeDecodeError):
        return ""


def _write_pose(w: Writer, p: Pose):
    w.f64s(p.translation)
    w.f64s(p.rotation)


def _read_pose(r: Reader) -> Pose:
    return Pose(r.f64s(3), r.f64s(4))


@register
@dataclass(frozen=True)
class Clock:
    SCHEMA = "isacsim/Clock"
    ns: int
    frame_id = WORLD_FRAME

    def encode(self) -> bytes:
        return struct.pack("<Q", self.ns)

    @classmethod
    def decode(cls, b: bytes) -> Clock:
        r = Reader(b)
        msg = cls(r.u64())
        r.done()
        return msg


@register
@dataclass(frozen=True)
class TFMessage:
    """A batch of stamped transforms (``StampedTransform`` records)."""

    SCHEMA = "isacsim/TFMessage"
    transforms: tuple
    frame_id: str = WORLD_FRAME

    def encode(self) -> bytes:
        w = Writer()
        w.string(self.frame_id)
        w.u32(len(self.transforms))
        for tf in self.transforms:
            w.u64(tf.stamp)
            w.string(tf.parent)
            w.string(tf.child)
            w.u8(1 if tf.static else 0)
            _write_pose(w, tf.pose)
        return w.bytes()

    @classmethod
    def decode(cls, b: bytes) -> TFMessage:
        from .timebase import StampedTransform
        r = Reader(b)
        frame = r.string()
        out = []
        for _ in range(r.u32()):
            stamp, parent, child, static = r.u64(), r.string(), r.string(), bool(r.u8())
            out.append(StampedTransform(stamp, parent, child, _read_pose(r), static))
        r.done()
        return cls(tuple(out), frame)


@register
@dataclass(frozen=True)
class Odometry:
    SCHEMA = "isacsim/Odometry"
    frame_id: str
    child_frame_id: str
    pose: Pose
    twist: Twist

    def encode(self) -> bytes:
        w = Writer()
        w.string(self.frame_id)
        w.string(self.child_frame_id)
        _write_pose(w, self.pose)
        w.f64s(self.twist.linear)
        w.f64s(self.twist.angular)
        return w.bytes()

    @classmethod
    def decode(cls, b: bytes) -> Odometry:
        r = Reader(b)
        frame, child = r.string(), r.string()
        pose = _read_pose(r)
        twist = Twist(r.f64s(3), r.f64s(3))
        r.done()
        return cls(frame, child, pose, twist)


@register
@dataclass(frozen=True)
class GnssFix:
    """Position fix in the local world frame (m) with per-axis noise sigma."""

    SCHEMA = "isacsim/GnssFix"
    frame_id: str
    position: np.ndarray
    sigma: np.ndarray

    def encode(self) -> bytes:
        w = Writer()
        w.string(self.frame_id)
        w.f64s(self.position)
        w.f64s(self.sigma)
        return w.bytes()

    @classmethod
    def decode(cls, b: bytes) -> GnssFix:
        r = Reader(b)
        msg = cls(r.string(), r.f64s(3), r.f64s(3))
        r.done()
        return msg


@register
@dataclass(frozen=True)
class ImuSample:
    SCHEMA = "isacsim/Imu"
    frame_id: str
    specific_force: np.ndarray
    angular_rate: np.ndarray

    def encode(self) -> bytes:
        w = Writer()
        w.string(self.frame_id)
        w.f64s(self.specific_force)
        w.f64s(self.angular_rate)
        return w.bytes()

    @classmethod
    def decode(cls, b: bytes) -> ImuSample:
        r = Reader(b)
        msg = cls(r.string(), r.f64s(3), r.f64s(3))
        r.done()
        return msg


_IMAGE_DTYPES = {"32FC1": "<f4", "32SC1": "<i4"}


@register
@dataclass(frozen=True)
class Image:
    """Single-channel image; ``32FC1`` for depth (m), ``32SC1`` for object ids."""

    SCHEMA = "isacsim/Image"
    frame_id: str
    encoding: str
    data: np.ndarray

    def encode(self) -> bytes:
        w = Writer()
        w.string(self.frame_id)
        h, wd = self.data.shape
        w.u32(h)
        w.u32(wd)
        w.string(self.encoding)
        w.raw(np.ascontiguousarray(self.data, dtype=_IMAGE_DTYPES[self.encoding]).tobytes())
        return w.bytes()

    @classmethod
    def decode(cls, b: bytes) -> Image:
        r = Reader(b)
        frame = r.string()
        h, wd = r.u32(), r.u32()
        enc = r.string()
        dt = np.dtype(_IMAGE_DTYPES[enc])
        data = np.frombuffer(r.raw(h * wd * dt.itemsize), dtype=dt).reshape(h, wd)
        r.done()
        return cls(frame, enc, data.astype(dt.newbyteorder("=")))


@register
@dataclass(frozen=True)
class PointCloud:
    """Sensor-frame points (m), float32."""

    SCHEMA = "isacsim/PointCloud"
    frame_id: str
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.float32))

    def encode(self) -> bytes:
        w = Writer()
        w.string(self.frame_id)
        pts = np.ascontiguousarray(self.points, dtype="<f4").reshape(-1, 3)
        w.u32(len(pts))
        w.raw(pts.tobytes())
        return w.bytes()

    @classmethod
    def decode(cls, b: bytes) -> PointCloud:
        r = Reader(b)
        frame = r.string()
        n = r.u32()
        pts = np.frombuffer(r.raw(12 * n), dtype="<f4").reshape(n, 3).astype(np.float32)
        r.done()
        return cls(frame, pts)
