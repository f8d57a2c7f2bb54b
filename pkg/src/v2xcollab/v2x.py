"""Detection and raw-cloud messages, their wire codec, and the message bus.

Wire layout (little-endian, no padding):

    header   magic[4] version:u8 agent_id:u8 t_i:f64 pose:12*f64 (row-major 3x4)
    "V2XD"   header + span:f32 + count:u16 + count * entry
             entry = x y z w l h yaw:7*f32 score:f32 class:u8 flow:3*f32  (45 B)
    "V2XE"   header + count:u32 + count * (x y z intensity time_lag: 5*f32)  (20 B)
"""

from __future__ import annotations

import struct
import threading
from bisect import bisect_right
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import BadMagic, BadVersion, ContractViolation, EncodingError, Truncated
from .geometry import Box, PointCloud, Pose

VERSION = 1
DET_MAGIC = b"V2XD"
EARLY_MAGIC = b"V2XE"

_BASE = struct.Struct("<4sBBd12d")
_DET_TAIL = struct.Struct("<fH")
_ENTRY = struct.Struct("<7ffB3f")
_EARLY_TAIL = struct.Struct("<I")
_POINT = np.dtype([("xyz", "<f4", (3,)), ("intensity", "<f4"), ("time_lag", "<f4")])

BASE_HEADER_BYTES = _BASE.size  # 110
DET_HEADER_BYTES = _BASE.size + _DET_TAIL.size  # 116
DET_ENTRY_BYTES = _ENTRY.size  # 45
EARLY_HEADER_BYTES = _BASE.size + _EARLY_TAIL.size  # 114
EARLY_POINT_BYTES = _POINT.itemsize  # 20
MAX_ENTRIES = 0xFFFF


@dataclass(frozen=True)
class DetectionMessage:
    agent_id: int
    t_i: float
    pose: Pose
    span: float
    entries: tuple = ()  # (Box, (fx, fy, fz)) pairs

    def __post_init__(self):
        object.__setattr__(
            self, "entries", tuple((b, tuple(float(v) for v in f)) for b, f in self.entries)
        )
        if self.t_i < 0 or self.span <= 0:
            raise ContractViolation("detection message needs t_i >= 0 and span > 0")

    @property
    def boxes(self) -> list:
        return [b for b, _ in self.entries]


@dataclass(frozen=True, eq=False)
class EarlyMessage:
    agent_id: int
    t_i: float
    pose: Pose
    points: PointCloud

    def __post_init__(self):
        if self.t_i < 0:
            raise ContractViolation("early message needs t_i >= 0")

    def __eq__(self, other):
        if not isinstance(other, EarlyMessage):
            return NotImplemented
        a, b = self.points, other.points
        return (
            self.agent_id == other.agent_id
            and self.t_i == other.t_i
            and self.pose == other.pose
            and np.array_equal(a.positions, b.positions)
            and np.array_equal(a.intensity, b.intensity)
            and np.array_equal(a.time_lag, b.time_lag)
        )


Message = Union[DetectionMessage, EarlyMessage]


def _pack_base(magic: bytes, agent_id: int, t_i: float, pose: Pose) -> bytes:
    if not 0 <= agent_id <= 255:
        raise EncodingError(f"agent_id {agent_id} does not fit in u8")
    rt = np.hstack([pose.rotation, pose.translation[:, None]]).ravel()
    return _BASE.pack(magic, VERSION, agent_id, t_i, *rt)


def _unpack_base(buf: bytes, magic: bytes):
    if len(buf) < 4:
        raise Truncated(4, len(buf))
    if buf[:4] != magic:
        raise BadMagic(bytes(buf[:4]))
    if len(buf) < _BASE.size:
        raise Truncated(_BASE.size, len(buf))
    _, version, agent_id, t_i, *rt = _BASE.unpack_from(buf, 0)
    if version != VERSION:
        raise BadVersion(version)
    m = np.array(rt).reshape(3, 4)
    return agent_id, t_i, Pose(m[:, :3], m[:, 3])


def encode_detection(msg: DetectionMessage) -> bytes:
    n = len(msg.entries)
    if n > MAX_ENTRIES:
        raise EncodingError(f"{n} entries exceed the u16 count field")
    parts = [_pack_base(DET_MAGIC, msg.agent_id, msg.t_i, msg.pose), _DET_TAIL.pack(msg.span, n)]
    for b, f in msg.entries:
        if not 0 <= b.class_id <= 255:
            raise EncodingError(f"class id {b.class_id} does not fit in u8")
        parts.append(_ENTRY.pack(*b.center, *b.size, b.yaw, b.score, b.class_id, *f))
    return b"".join(parts)


def decode_detection(buf: bytes) -> DetectionMessage:
    agent_id, t_i, pose = _unpack_base(buf, DET_MAGIC)
    if len(buf) < DET_HEADER_BYTES:
        raise Truncated(DET_HEADER_BYTES, len(buf))
    span, n = _DET_TAIL.unpack_from(buf, _BASE.size)
    need = DET_HEADER_BYTES + n * DET_ENTRY_BYTES
    if len(buf) < need:
        raise Truncated(need, len(buf))
    entries = []
    for k in range(n):
        v = _ENTRY.unpack_from(buf, DET_HEADER_BYTES + k * DET_ENTRY_BYTES)
        box = Box(v[0:3], v[3:6], v[6], v[7], v[8])
        entries.append((box, v[9:12]))
    return DetectionMessage(agent_id, t_i, pose, span, tuple(entries))


def encode_early(msg: EarlyMessage) -> bytes:
    pc = msg.points
    n = len(pc)
    if n > 0xFFFFFFFF:
        raise EncodingError("too many points for the u32 count field")
    arr = np.empty(n, dtype=_POINT)
    arr["xyz"] = pc.positions
    arr["intensity"] = pc.intensity
    arr["time_lag"] = pc.time_lag
    return _pack_base(EARLY_MAGIC, msg.agent_id, msg.t_i, msg.pose) + _EARLY_TAIL.pack(n) + arr.tobytes()


def decode_early(buf: bytes) -> EarlyMessage:
    agent_id, t_i, pose = _unpack_base(buf, EARLY_MAGIC)
    if len(buf) < EARLY_HEADER_BYTES:
        raise Truncated(EARLY_HEADER_BYTES, len(buf))
    (n,) = _EARLY_TAIL.unpack_from(buf, _BASE.size)
    need = EARLY_HEADER_BYTES + n * EARLY_POINT_BYTES
    if len(buf) < need:
        raise Truncated(need, len(buf))
    arr = np.frombuffer(buf, dtype=_POINT, count=n, offset=EARLY_HEADER_BYTES)
    pc = PointCloud(
        arr["xyz"].astype(float), arr["intensity"].astype(float), arr["time_lag"].astype(float),
        f"agent{agent_id}", t_i,
    )
    return EarlyMessage(agent_id, t_i, pose, pc)


def detection_size(n_entries: int) -> int:
    return DET_HEADER_BYTES + n_entries * DET_ENTRY_BYTES


def early_size(n_points: int) -> int:
    return EARLY_HEADER_BYTES + n_points * EARLY_POINT_BYTES


def encoded_size(msg: Message) -> int:
    if isinstance(msg, DetectionMessage):
        return len(encode_detection(msg))
    return len(encode_early(msg))


@dataclass(frozen=True)
class BusRecord:
    message: Message
    available_from: float


class MessageBus:
    """Per-agent append-only message store with latest-prior lookup."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: dict[int, list[BusRecord]] = {}
        self._times: dict[int, list[float]] = {}

    def publish(self, message: Message, latency: float = 0.0) -> BusRecord:
        if latency < 0:
            raise ContractViolation("latency must be >= 0")
        rec = BusRecord(message, message.t_i + latency)
        with self._lock:
            times = self._times.setdefault(message.agent_id, [])
            if times and message.t_i < times[-1]:
                raise ContractViolation(
                    f"agent {message.agent_id} published t_i={message.t_i} after t_i={times[-1]}"
                )
            times.append(message.t_i)
            self._records.setdefault(message.agent_id, []).append(rec)
        return rec

    def query(self, t: float, querier: Optional[int] = None) -> dict:
        """Latest message per agent with ``t_i <= t`` that is already available at ``t``."""
        if not np.isfinite(t):
            raise ContractViolation("query time must be finite")
        out = {}
        with self._lock:
            for aid in sorted(self._records):
                if aid == querier:
                    continue
                recs = self._records[aid]
                k = bisect_right(self._times[aid], t)
                # latency may differ per record, so walk back to the newest available one
                while k > 0 and recs[k - 1].available_from > t:
                    k -= 1
                if k > 0:
                    out[aid] = recs[k - 1].message
        return out

    def __len__(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._records.values())


def publish(bus: MessageBus, message: Message, latency: float = 0.0) -> BusRecord:
    return bus.publish(message, latency)


def query(bus: MessageBus, t: float, querier: Optional[int] = None) -> dict:
    return bus.query(t, querier)
