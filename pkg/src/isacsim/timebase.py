"""Shared simulated clock and the time-indexed coordinate frame tree."""

from __future__ import annotations

import bisect
import threading
from dataclasses import dataclass

from .geometry import Pose, pose_compose, pose_interpolate, pose_inverse

NS_PER_S = 1_000_000_000
DEFAULT_TICK_NS = 10_000_000


class FrameError(Exception):
    pass


class UnknownFrameError(FrameError):
    pass


class ExtrapolationError(FrameError):
    pass


def seconds_to_ns(t: float) -> int:
    return int(round(t * NS_PER_S))


class SimClock:
    """Single-writer simulated clock.

    ``publish`` is called with every new time value (in ns); the session
    wires it to the ``/clock`` topic.
    """

    def __init__(self, publish=None):
        self._now = 0
        self._publish = publish
        self._started = False

    @property
    def now(self) -> int:
        return self._now

    def start(self) -> int:
        if not self._started:
            self._started = True
            if self._publish is not None:
                self._publish(self._now)
        return self._now

    def advance(self, dt_ns: int, publish: bool = True) -> int:
        dt_ns = int(dt_ns)
        if dt_ns <= 0:
            raise ValueError("clock step must be positive")
        self._now += dt_ns
        self._started = True
        if publish and self._publish is not None:
            self._publish(self._now)
        return self._now

    def advance_to(self, t_ns: int, publish: bool = True) -> int:
        return self.advance(int(t_ns) - self._now, publish=publish)


def advance_clock(clock: SimClock, dt_ns: int) -> int:
    return clock.advance(dt_ns)


@dataclass(frozen=True)
class StampedTransform:
    stamp: int
    parent: str
    child: str
    pose: Pose
    static: bool = False


class _Edge:
    __slots__ = ("parent", "stamps", "poses", "static")

    def __init__(self, parent, static):
        self.parent = parent
        self.stamps: list[int] = []
        self.poses: list[Pose] = []
        self.static = static


class FrameTree:
    """Rooted tree of frames with per-edge transform histories.

    ``lookup(a, b, t)`` returns the pose of frame ``b`` expressed in frame
    ``a``, i.e. the map from ``b`` coordinates into ``a`` coordinates.
    Queries newer than an edge's newest stamp by up to ``extrapolation_slack_ns``
    return the newest pose; static edges are valid at all times.
    """

    def __init__(self, root: str = "world", extrapolation_slack_ns: int = DEFAULT_TICK_NS,
                 retention_ns: int | None = None):
        self.root = root
        self.slack = int(extrapolation_slack_ns)
        self.retention = retention_ns
        self._edges: dict[str, _Edge] = {}
        self._lock = threading.RLock()

    @property
    def frames(self) -> set[str]:
        with self._lock:
            return {self.root, *self._edges}

    def has_frame(self, name: str) -> bool:
        return name == self.root or name in self._edges

    def parent_of(self, name: str) -> str | None:
        e = self._edges.get(name)
        return e.parent if e else None

    def _ancestors(self, frame):
        chain = [frame]
        while frame != self.root:
            frame = self._edges[frame].parent
            chain.append(frame)
        return chain

    def set_transform(self, tf: StampedTransform) -> None:
        with self._lock:
            parent, child = tf.parent, tf.child
            if parent == child:
                raise FrameError(f"frame {child!r} cannot be its own parent")
            if child == self.root:
                raise FrameError(f"edge {parent!r}->{child!r} would create a cycle through the root")
            if not self.has_frame(parent):
                raise UnknownFrameError(f"parent frame {parent!r} is not registered")
            edge = self._edges.get(child)
            if edge is None:
                if child in self._ancestors(parent):
                    raise FrameError(f"edge {parent!r}->{child!r} would create a cycle")
                edge = self._edges[child] = _Edge(parent, tf.static)
            elif edge.parent != parent:
                raise FrameError(f"frame {child!r} already has parent {edge.parent!r}")
            stamp = int(tf.stamp)
            i = bisect.bisect_left(edge.stamps, stamp)
            if i < len(edge.stamps) and edge.stamps[i] == stamp:
                edge.poses[i] = tf.pose
            else:
                edge.stamps.insert(i, stamp)
                edge.poses.insert(i, tf.pose)
            if self.retention is not None and len(edge.stamps) > 1:
                cut = bisect.bisect_left(edge.stamps, edge.stamps[-1] - self.retention)
                cut = min(cut, len(edge.stamps) - 1)
                if cut > 0:
                    del edge.stamps[:cut]
                    del edge.poses[:cut]

    def _edge_pose(self, child: str, t: int) -> Pose:
        e = self._edges[child]
        if e.static:
            return e.poses[-1]
        stamps = e.stamps
        if t < stamps[0]:
            raise ExtrapolationError(f"t={t} precedes history of {e.parent!r}->{child!r}")
        if t >= stamps[-1]:
            if t - stamps[-1] > self.slack:
                raise ExtrapolationError(
                    f"t={t} is beyond newest stamp {stamps[-1]} of {e.parent!r}->{child!r}")
            return e.poses[-1]
        i = bisect.bisect_right(stamps, t) - 1
        if stamps[i] == t:
            return e.poses[i]
        alpha = (t - stamps[i]) / (stamps[i + 1] - stamps[i])
        return pose_interpolate(e.poses[i], e.poses[i + 1], alpha)

    def lookup(self, source: str, target: str, t: int) -> Pose:
        with self._lock:
            for f in (source, target):
                if not self.has_frame(f):
                    raise UnknownFrameError(f"unknown frame {f!r}")
            if source == target:
                return Pose.identity()
            # direct edge: return the stored/interpolated sample untouched
            if self._edges.get(target) is not None and self._edges[target].parent == source:
                return self._edge_pose(target, int(t))
            up_s = self._ancestors(source)
            up_t = self._ancestors(target)
            common = next(f for f in up_s if f in set(up_t))
            a = self._chain(source, common, int(t))
            b = self._chain(target, common, int(t))
            return pose_compose(pose_inverse(a), b)

    def _chain(self, frame, ancestor, t):
        pose = Pose.identity()
        while frame != ancestor:
            pose = pose_compose(self._edge_pose(frame, t), pose)
            frame = self._edges[frame].parent
        return pose

    def can_resolve(self, source: str, target: str, t: int) -> bool:
        try:
            self.lookup(source, target, t)
            return True
        except FrameError:
            return False


def lookup_transform(tree: FrameTree, source: str, target: str, t: int) -> Pose:
    return tree.lookup(source, target, t)


def set_transform(tree: FrameTree, tf: StampedTransform) -> None:
    tree.set_transform(tf)
