"""
Vector, rotation and pose algebra, triangle meshes, ray queries and a
bounding volume hierarchy.

Conventions: right-handed, z-up, meters, radians. Points and directions are
plain ``numpy`` arrays of shape ``(3,)``. Quaternions are ``(w, x, y, z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-9
T_EPS = 1e-9            # tolerance on ray parameter bounds
SELF_HIT_EPS = 1e-6     # hits closer than this are ignored
MIN_TRIANGLE_AREA = 1e-12
LEAF_SIZE = 4


def vec3(x, y=None, z=None) -> np.ndarray:
    if y is None:
        return np.asarray(x, dtype=float).reshape(3)
    return np.array([x, y, z], dtype=float)


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / n


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------
# Quaternions
# ---------------------------------------------------------------------
def quat_mul(q1, q2) -> np.ndarray:
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector(s) ``v`` (shape (3,) or (N, 3)) by unit quaternion ``q``."""
    v = np.asarray(v, dtype=float)
    w = q[0]
    u = np.asarray(q[1:], dtype=float)
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = normalize(axis)
    s = np.sin(angle / 2.0)
    return np.array([np.cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic Z-Y-X (yaw, then pitch, then roll) rotation."""
    qz = quat_from_axis_angle([0, 0, 1], yaw)
    qy = quat_from_axis_angle([0, 1, 0], pitch)
    qx = quat_from_axis_angle([1, 0, 0], roll)
    return quat_mul(quat_mul(qz, qy), qx)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def quat_to_rotvec(q) -> np.ndarray:
    """Rotation vector (axis * angle) of the shortest rotation equal to ``q``."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    s = np.linalg.norm(q[1:])
    if s < 1e-15:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(s, q[0])
    return q[1:] / s * angle


def slerp(q0, q1, alpha: float) -> np.ndarray:
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1 = -q1
        d = -d
    if d > 1.0 - 1e-12:
        q = q0 + alpha * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = np.arccos(min(d, 1.0))
    s = np.sin(theta)
    return (np.sin((1 - alpha) * theta) * q0 + np.sin(alpha * theta) * q1) / s


# ---------------------------------------------------------------------
# Pose / Twist
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``x_parent = R @ x_child + translation``."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))

    def __post_init__(self):
        t = _frozen(self.translation).reshape(3)
        q = np.array(self.rotation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"rotation quaternion is not unit (norm={n})")
        if n != 1.0:
            q = q / n
        q.flags.writeable = False
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_xyz_rpy(cls, xyz, rpy=(0.0, 0.0, 0.0)) -> Pose:
        return cls(np.asarray(xyz, dtype=float), quat_from_rpy(*rpy))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.translation, other.translation)
                and np.array_equal(self.rotation, other.rotation))

    def __hash__(self):
        return hash((self.translation.tobytes(), self.rotation.tobytes()))


def pose_apply(pose: Pose, point) -> np.ndarray:
    """Map point(s) from the child frame into the parent frame."""
    return quat_rotate(pose.rotation, point) + pose.translation


def pose_compose(a: Pose, b: Pose) -> Pose:
    """``pose_apply(pose_compose(a, b), x) == pose_apply(a, pose_apply(b, x))``."""
    q = quat_mul(a.rotation, b.rotation)
    return Pose(pose_apply(a, b.translation), q / np.linalg.norm(q))


def pose_inverse(p: Pose) -> Pose:
    qi = quat_conj(p.rotation)
    return Pose(-quat_rotate(qi, p.translation), qi)


def pose_interpolate(p0: Pose, p1: Pose, alpha: float) -> Pose:
    """Linear translation, spherical rotation interpolation."""
    if alpha == 0.0:
        return p0
    if alpha == 1.0:
        return p1
    t = (1.0 - alpha) * p0.translation + alpha * p1.translation
    return Pose(t, slerp(p0.rotation, p1.rotation, alpha))


@dataclass(frozen=True)
class Twist:
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        lin = _frozen(self.linear).reshape(3)
        ang = _frozen(self.angular).reshape(3)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(ang))):
            raise ValueError("twist components must be finite")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    def __eq__(self, other):
        if not isinstance(other, Twist):
            return NotImplemented
        return (np.array_equal(self.linear, other.linear)
                and np.array_equal(self.angular, other.angular))

    def __hash__(self):
        return hash((self.linear.tobytes(), self.angular.tobytes()))


def mirror_across_plane(point, plane_point, normal) -> np.ndarray:
    """Reflect ``point`` across the plane through ``plane_point`` with unit ``normal``."""
    n = np.asarray(normal, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
        raise ValueError("plane normal must be a unit vector")
    p = np.asarray(point, dtype=float)
    return p - 2.0 * np.dot(p - np.asarray(plane_point, dtype=float), n) * n


# ---------------------------------------------------------------------
# Meshes and rays
# ---------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    object_ids: np.ndarray = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        f = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        ids = (np.zeros(len(f), dtype=np.int64) if self.object_ids is None
               else np.array(self.object_ids, dtype=np.int64).reshape(-1))
        if len(ids) != len(f):
            raise ValueError("one object id per triangle required")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle vertex index out of range")
        for a in (v, f, ids):
            a.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        object.__setattr__(self, "object_ids", ids)
        if len(f):
            area = self.areas()
            bad = np.flatnonzero(area <= MIN_TRIANGLE_AREA)
            if len(bad):
                raise ValueError(f"degenerate triangle(s) {bad[:5].tolist()}")

    def __len__(self):
        return len(self.triangles)

    @classmethod
    def empty(cls) -> TriangleMesh:
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    def corners(self):
        v = self.vertices[self.triangles]
        return v[:, 0], v[:, 1], v[:, 2]

    def areas(self) -> np.ndarray:
        a, b, c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def normals(self) -> np.ndarray:
        a, b, c = self.corners()
        return normalize(np.cross(b - a, c - a))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = np.inf

    def __post_init__(self):
        d = _frozen(self.direction).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > UNIT_TOL:
            raise ValueError("ray direction must be a unit vector")
        if self.t_min < 0 or not self.t_max > self.t_min:
            raise ValueError("require 0 <= t_min < t_max")
        object.__setattr__(self, "origin", _frozen(self.origin).reshape(3))
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    triangle: int
    object_id: int
    normal: np.ndarray


class _RayBatch:
    """Per-ray constants of the watertight intersection test."""

    def __init__(self, origins, dirs):
        self.o = np.asarray(origins, dtype=float).reshape(-1, 3)
        self.d = np.asarray(dirs, dtype=float).reshape(-1, 3)
        n = len(self.d)
        kz = np.argmax(np.abs(self.d), axis=1)
        kx = (kz + 1) % 3
        ky = (kx + 1) % 3
        swap = self.d[np.arange(n), kz] < 0
        kx, ky = np.where(swap, ky, kx), np.where(swap, kx, ky)
        rows = np.arange(n)
        dz = self.d[rows, kz]
        self.kx, self.ky, self.kz = kx, ky, kz
        self.sx = self.d[rows, kx] / dz
        self.sy = self.d[rows, ky] / dz
        self.sz = 1.0 / dz
        with np.errstate(divide="ignore", over="ignore"):
            self.inv_d = 1.0 / self.d


def _watertight(batch: _RayBatch, ri, A, B, C):
    """Watertight ray/triangle test (Woop et al.) for aligned pairs.

    ``ri`` indexes rays of ``batch``; ``A, B, C`` are the matching triangle
    corners. Returns ``t`` with ``nan`` for misses.
    """
    o = batch.o[ri]
    kx, ky, kz = batch.kx[ri], batch.ky[ri], batch.kz[ri]
    sx, sy, sz = batch.sx[ri], batch.sy[ri], batch.sz[ri]
    rows = np.arange(len(ri))

    def proj(P):
        p = P - o
        pz = p[rows, kz]
        return p[rows, kx] - sx * pz, p[rows, ky] - sy * pz, sz * pz

    ax, ay, az = proj(A)
    bx, by, bz = proj(B)
    cx, cy, cz = proj(C)
    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    neg = (u < 0) | (v < 0) | (w < 0)
    pos = (u > 0) | (v > 0) | (w > 0)
    det = u + v + w
    ok = ~(neg & pos) & (det != 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (u * az + v * bz + w * cz) / det
    return np.where(ok, t, np.nan)


class Bvh:
    """Axis-aligned box hierarchy over a mesh's triangles.

    Nodes are stored flat: ``lo``/``hi`` box corners, ``left``/``right``
    children (-1 for leaves) and a ``start``/``count`` slice into ``order``.
    """

    def __init__(self, mesh: TriangleMesh, leaf_size: int = LEAF_SIZE):
        self.mesh = mesh
        self.leaf_size = leaf_size
        A, B, C = mesh.corners()
        self._A, self._B, self._C = A, B, C
        self._normals = mesh.normals() if len(mesh) else np.zeros((0, 3))
        tri_lo = np.minimum(np.minimum(A, B), C)
        tri_hi = np.maximum(np.maximum(A, B), C)
        centroids = (A + B + C) / 3.0
        lo, hi, left, right, start, count = [], [], [], [], [], []
        order = np.arange(len(mesh))

        def build(s, e):
            idx = len(lo)
            sl = order[s:e]
            lo.append(tri_lo[sl].min(axis=0) if e > s else np.zeros(3))
            hi.append(tri_hi[sl].max(axis=0) if e > s else np.zeros(3))
            left.append(-1)
            right.append(-1)
            start.append(s)
            count.append(e - s)
            if e - s <= leaf_size:
                return idx
            c = centroids[sl]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            # stable sort keeps the build deterministic
            order[s:e] = sl[np.argsort(c[:, axis], kind="stable")]
            mid = (s + e) // 2
            left[idx] = build(s, mid)
            right[idx] = build(mid, e)
            count[idx] = 0
            return idx

        if len(mesh):
            build(0, len(mesh))
        self.order = order
        self.lo = np.array(lo).reshape(-1, 3)
        self.hi = np.array(hi).reshape(-1, 3)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)

    def __len__(self):
        return len(self.lo)

    def _slab(self, batch, ri, node, t_lo, t_hi):
        o = batch.o[ri]
        inv = batch.inv_d[ri]
        with np.errstate(invalid="ignore"):
            t1 = (self.lo[node] - o) * inv
            t2 = (self.hi[node] - o) * inv
        # nan arises from 0 * inf when the origin lies on a slab plane; such
        # an axis does not constrain the interval
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        near[np.isnan(near)] = -np.inf
        far[np.isnan(far)] = np.inf
        tn = near.max(axis=1)
        tf = far.min(axis=1)
        return (tn <= tf + T_EPS) & (tf >= t_lo - T_EPS) & (tn <= t_hi + T_EPS)

    def _traverse(self, origins, dirs, t_min, t_max, any_hit=False, exclude=None):
        batch = _RayBatch(origins, dirs)
        n = len(batch.o)
        lo_t = np.maximum(np.broadcast_to(np.asarray(t_min, dtype=float), (n,)) - T_EPS,
                          SELF_HIT_EPS)
        best_t = np.broadcast_to(np.asarray(t_max, dtype=float), (n,)) + T_EPS
        best_t = best_t.copy()
        best_tri = np.full(n, -1, dtype=np.int64)
        if n == 0 or len(self.mesh) == 0:
            return np.full(n, np.inf), best_tri
        if exclude is not None:
            exclude = np.asarray(exclude, dtype=np.int64).reshape(n, -1)
        stack = [(0, np.arange(n))]
        while stack:
            node, ri = stack.pop()
            if any_hit:
                ri = ri[best_tri[ri] < 0]
            if len(ri) == 0:
                continue
            ri = ri[self._slab(batch, ri, node, lo_t[ri], best_t[ri])]
            if len(ri) == 0:
                continue
            if self.left[node] >= 0:
                stack.append((self.right[node], ri))
                stack.append((self.left[node], ri))
                continue
            tris = self.order[self.start[node]:self.start[node] + self.count[node]]
            rr = np.repeat(ri, len(tris))
            tt = np.tile(tris, len(ri))
            t = _watertight(batch, rr, self._A[tt], self._B[tt], self._C[tt])
            ok = (t >= lo_t[rr]) & (t <= best_t[rr])
            if exclude is not None:
                ok &= ~np.any(exclude[rr] == tt[:, None], axis=1)
            if not np.any(ok):
                continue
            rr, tt, t = rr[ok], tt[ok], t[ok]
            # closest first, lowest triangle index on exact ties
            srt = np.lexsort((tt, t, rr))
            rr, tt, t = rr[srt], tt[srt], t[srt]
            first = np.r_[True, rr[1:] != rr[:-1]]
            rr, tt, t = rr[first], tt[first], t[first]
            better = (t < best_t[rr]) | ((t == best_t[rr]) & ((best_tri[rr] < 0) | (tt < best_tri[rr])))
            rr, tt, t = rr[better], tt[better], t[better]
            best_t[rr] = t
            best_tri[rr] = tt
        best_t[best_tri < 0] = np.inf
        return best_t, best_tri

    def first_hits(self, origins, dirs, t_min=0.0, t_max=np.inf):
        """Nearest hit per ray; returns ``(t, triangle)`` arrays, ``-1`` for none."""
        return self._traverse(origins, dirs, t_min, t_max)

    def occluded(self, origins, dirs, t_min, t_max, exclude=None) -> np.ndarray:
        """True where any triangle (not in ``exclude``) lies in ``[t_min, t_max]``."""
        _, tri = self._traverse(origins, dirs, t_min, t_max, any_hit=True, exclude=exclude)
        return tri >= 0

    def hit_record(self, origin, direction, t: float, tri: int) -> Hit:
        p = np.asarray(origin, dtype=float) + t * np.asarray(direction, dtype=float)
        return Hit(float(t), p, int(tri), int(self.mesh.object_ids[tri]), self._normals[tri].copy())


def ray_mesh_first_hit(ray: Ray, bvh: Bvh) -> Hit | None:
    t, tri = bvh.first_hits(ray.origin[None], ray.direction[None], ray.t_min, ray.t_max)
    if tri[0] < 0:
        return None
    return bvh.hit_record(ray.origin, ray.direction, t[0], tri[0])


def segments_occluded(bvh: Bvh, starts, ends, eps: float = SELF_HIT_EPS, exclude=None) -> np.ndarray:
    """Occlusion of the open segments ``starts[i] -> ends[i]`` trimmed by ``eps``."""
    starts = np.asarray(starts, dtype=float).reshape(-1, 3)
    ends = np.asarray(ends, dtype=float).reshape(-1, 3)
    d = ends - starts
    length = np.linalg.norm(d, axis=1)
    d = d / np.where(length > 0, length, 1.0)[:, None]
    return bvh.occluded(starts, d, eps, length - eps, exclude=exclude)
