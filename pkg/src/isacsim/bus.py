"""
In-process publish/subscribe bus, approximate-time synchronizer and the
session bag codec.

Bag layout (little-endian)::

    b"SABG"  u16 version=1  u32 topic_count
    topic_count x { u16 id, u16 len + UTF-8 name, u16 len + UTF-8 schema }
    records      { u64 stamp_ns, u16 topic_id, u32 seq, u32 len, payload }

Topic ids follow sorted topic names. Records are ordered by
``(stamp, seq, topic_id)``.
"""

from __future__ import annotations

import struct
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .messages import frame_id_of

BAG_MAGIC = b"SABG"
BAG_VERSION = 1
_REC = struct.Struct("<QHII")


class BusError(Exception):
    pass


class SchemaMismatchError(BusError):
    pass


class CorruptBagError(Exception):
    pass


@dataclass(frozen=True)
class Header:
    stamp: int
    frame_id: str


@dataclass(frozen=True)
class Envelope:
    topic: str
    schema: str
    header: Header
    seq: int
    payload: bytes

    @property
    def stamp(self) -> int:
        return self.header.stamp


class Subscription:
    """FIFO of envelopes delivered to one subscriber."""

    def __init__(self, topic: str | None):
        self.topic = topic
        self._q: deque[Envelope] = deque()
        self._lock = threading.Lock()

    def _deliver(self, env: Envelope):
        with self._lock:
            self._q.append(env)

    def __len__(self):
        return len(self._q)

    def pop(self) -> Envelope | None:
        with self._lock:
            return self._q.popleft() if self._q else None

    def drain(self) -> list[Envelope]:
        with self._lock:
            out = list(self._q)
            self._q.clear()
        return out

    def __iter__(self) -> Iterator[Envelope]:
        while True:
            env = self.pop()
            if env is None:
                return
            yield env


class Bus:
    """Topic-based bus. Stamps default to the attached clock's time."""

    def __init__(self, clock=None):
        self.clock = clock
        self._lock = threading.Lock()
        self._schemas: dict[str, str] = {}
        self._next_seq: dict[str, int] = {}
        self._subs: dict[str, list[Subscription]] = {}
        self._wildcard: list[Subscription] = []

    @property
    def topics(self) -> dict[str, str]:
        with self._lock:
            return dict(self._schemas)

    def subscribe(self, topic: str) -> Subscription:
        sub = Subscription(topic)
        with self._lock:
            self._subs.setdefault(topic, []).append(sub)
        return sub

    def subscribe_all(self) -> Subscription:
        sub = Subscription(None)
        with self._lock:
            self._wildcard.append(sub)
        return sub

    def _check_schema(self, topic, schema):
        known = self._schemas.get(topic)
        if known is None:
            self._schemas[topic] = schema
            self._next_seq[topic] = 0
        elif known != schema:
            raise SchemaMismatchError(f"topic {topic!r} carries {known!r}, not {schema!r}")

    def _fanout(self, env):
        for sub in self._subs.get(env.topic, ()):
            sub._deliver(env)
        for sub in self._wildcard:
            sub._deliver(env)

    def publish(self, topic: str, schema: str, payload: bytes, stamp: int | None = None,
                frame_id: str | None = None) -> Envelope:
        if stamp is None:
            if self.clock is None:
                raise BusError("no stamp given and no clock attached")
            stamp = self.clock.now
        if frame_id is None:
            frame_id = frame_id_of(schema, payload)
        # delivery happens under the lock so per-topic FIFO matches seq order
        with self._lock:
            self._check_schema(topic, schema)
            seq = self._next_seq[topic]
            self._next_seq[topic] = seq + 1
            env = Envelope(topic, schema, Header(int(stamp), frame_id), seq, bytes(payload))
            self._fanout(env)
        return env

    def publish_msg(self, topic: str, msg, stamp: int | None = None) -> Envelope:
        return self.publish(topic, msg.SCHEMA, msg.encode(), stamp, msg.frame_id)

    def republish(self, env: Envelope) -> Envelope:
        """Re-inject a recorded envelope keeping its stamp and sequence number."""
        with self._lock:
            self._check_schema(env.topic, env.schema)
            if env.seq < self._next_seq[env.topic]:
                raise BusError(f"sequence regression on {env.topic!r}")
            self._next_seq[env.topic] = env.seq + 1
            self._fanout(env)
        return env


class ApproxTimeSynchronizer:
    """Greedy approximate-time matcher over a fixed list of topics.

    When every queue is non-empty the queue heads are tested: if their stamp
    range is within ``slop_ns`` the tuple is emitted, otherwise the single
    oldest head is dropped and the test repeats.
    """

    def __init__(self, topics: list[str], slop_ns: int):
        if len(topics) < 2:
            raise ValueError("approximate sync needs at least two topics")
        if slop_ns < 0:
            raise ValueError("slop must be non-negative")
        self.topics = list(topics)
        self.slop = int(slop_ns)
        self._queues = {t: deque() for t in self.topics}
        self.dropped = 0

    def push(self, env: Envelope) -> list[tuple[Envelope, ...]]:
        if env.topic not in self._queues:
            return []
        self._queues[env.topic].append(env)
        out = []
        while all(self._queues[t] for t in self.topics):
            heads = [self._queues[t][0] for t in self.topics]
            stamps = [h.stamp for h in heads]
            if max(stamps) - min(stamps) <= self.slop:
                for t in self.topics:
                    self._queues[t].popleft()
                out.append(tuple(heads))
            else:
                oldest = min(range(len(heads)), key=lambda i: (stamps[i], i))
                self._queues[self.topics[oldest]].popleft()
                self.dropped += 1
        return out


def approx_sync(envelopes: Iterable[Envelope], topics: list[str], slop_ns: int):
    """Run the synchronizer over an envelope stream, returning all tuples."""
    sync = ApproxTimeSynchronizer(topics, slop_ns)
    out = []
    for env in envelopes:
        out.extend(sync.push(env))
    return out


# ---------------------------------------------------------------------
# Bags
# ---------------------------------------------------------------------
def _pstr(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def encode_bag(envelopes: Iterable[Envelope], topics: dict[str, str] | None = None) -> bytes:
    envs = list(envelopes)
    table = dict(topics or {})
    for e in envs:
        if table.setdefault(e.topic, e.schema) != e.schema:
            raise SchemaMismatchError(f"topic {e.topic!r} recorded with two schemas")
    names = sorted(table)
    ids = {name: i for i, name in enumerate(names)}
    out = [BAG_MAGIC, struct.pack("<HI", BAG_VERSION, len(names))]
    for name in names:
        out.append(struct.pack("<H", ids[name]) + _pstr(name) + _pstr(table[name]))
    envs.sort(key=lambda e: (e.stamp, e.seq, ids[e.topic]))
    for e in envs:
        out.append(_REC.pack(e.stamp, ids[e.topic], e.seq, len(e.payload)))
        out.append(e.payload)
    return b"".join(out)


def write_bag(path, envelopes: Iterable[Envelope], topics: dict[str, str] | None = None) -> Path:
    path = Path(path)
    data = encode_bag(envelopes, topics)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise BusError(f"cannot write bag {path}: {exc}") from exc
    return path


class BagReader:
    """Streaming reader; truncation raises only after earlier records were yielded."""

    def __init__(self, path):
        self.path = Path(path)
        self._data = self.path.read_bytes()
        self.topics: dict[int, tuple[str, str]] = {}
        self._body = self._parse_header()

    def _parse_header(self) -> int:
        d = self._data
        if len(d) < 10 or d[:4] != BAG_MAGIC:
            raise CorruptBagError(f"{self.path}: bad magic")
        version, n = struct.unpack_from("<HI", d, 4)
        if version != BAG_VERSION:
            raise CorruptBagError(f"{self.path}: unsupported version {version}")
        pos = 10
        try:
            for _ in range(n):
                (tid,) = struct.unpack_from("<H", d, pos)
                pos += 2
                names = []
                for _ in range(2):
                    (ln,) = struct.unpack_from("<H", d, pos)
                    pos += 2
                    if pos + ln > len(d):
                        raise CorruptBagError(f"{self.path}: truncated topic table")
                    names.append(d[pos:pos + ln].decode("utf-8"))
                    pos += ln
                self.topics[tid] = (names[0], names[1])
        except struct.error:
            raise CorruptBagError(f"{self.path}: truncated topic table") from None
        return pos

    @property
    def topic_schemas(self) -> dict[str, str]:
        return {name: schema for name, schema in self.topics.values()}

    def __iter__(self) -> Iterator[Envelope]:
        d = self._data
        pos = self._body
        while pos < len(d):
            if pos + _REC.size > len(d):
                raise CorruptBagError(f"{self.path}: truncated record header at byte {pos}")
            stamp, tid, seq, ln = _REC.unpack_from(d, pos)
            pos += _REC.size
            if pos + ln > len(d):
                raise CorruptBagError(f"{self.path}: truncated record payload at byte {pos}")
            if tid not in self.topics:
                raise CorruptBagError(f"{self.path}: undeclared topic id {tid}")
            payload = d[pos:pos + ln]
            pos += ln
            name, schema = self.topics[tid]
            yield Envelope(name, schema, Header(stamp, frame_id_of(schema, payload)), seq, payload)


def read_bag(path) -> list[Envelope]:
    return list(BagReader(path))


class BagRecorder:
    """Collects envelopes from a bus and writes them as one bag."""

    def __init__(self, bus: Bus, topics: list[str] | None = None):
        self.bus = bus
        self.topics = topics
        if topics is None:
            self._subs = [bus.subscribe_all()]
        else:
            self._subs = [bus.subscribe(t) for t in topics]
        self._envs: list[Envelope] = []

    def collect(self) -> list[Envelope]:
        for s in self._subs:
            self._envs.extend(s.drain())
        return self._envs

    def write(self, path) -> Path:
        envs = self.collect()
        table = {t: s for t, s in self.bus.topics.items() if self.topics is None or t in self.topics}
        return write_bag(path, envs, table)


def bag_record(bus: Bus, topics: list[str] | None = None) -> BagRecorder:
    return BagRecorder(bus, topics)


def bag_inspect(path) -> dict[str, tuple[str, int]]:
    reader = BagReader(path)
    counts = {name: [schema, 0] for name, schema in reader.topics.values()}
    for env in reader:
        counts[env.topic][1] += 1
    return {k: (v[0], v[1]) for k, v in sorted(counts.items())}


def format_inspect(path) -> str:
    info = bag_inspect(path)
    width = max([len(t) for t in info] + [5])
    lines = [f"bag: {path}", f"{'topic':<{width}}  {'count':>7}  schema"]
    total = 0
    for topic, (schema, count) in info.items():
        lines.append(f"{topic:<{width}}  {count:>7}  {schema}")
        total += count
    lines.append(f"{len(info)} topics, {total} records")
    return "\n".join(lines)


def bag_replay(path, bus: Bus, clock=None, publish_clock: bool = False) -> int:
    """Re-publish a bag in stored order, advancing ``clock`` to each stamp.

    Stored ``/clock`` records are re-published verbatim; ``publish_clock``
    additionally lets the clock announce its own advances (for bags without
    a clock topic). Returns the number of records delivered.
    """
    n = 0
    for env in BagReader(path):
        if clock is not None and env.stamp > clock.now:
            clock.advance_to(env.stamp, publish=publish_clock)
        bus.republish(env)
        n += 1
    return n
