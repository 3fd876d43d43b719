"""
Dual scene construction: footprint extrusion, material assignment, mesh
simplification into a propagation mesh, and the SimMesh text format.

SimMesh (one record per line, ``#`` comments)::

    origin x y z
    v x y z
    o <name> class=<tag> material=<material>
    f i j k            # 1-based vertex indices, belongs to the last ``o``

Footprint files are JSON::

    {"origin": {"name": "demo", "xyz": [0, 0, 0]},      # or {"lat":…, "lon":…, "alt":…}
     "footprints": [{"name": "b1", "class": "building", "height": 20.0,
                     "base": 0.0, "polygon": [[x, y], …]}, …]}
"""

from __future__ import annotations

import heapq
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import TriangleMesh


class SceneError(Exception):
    pass


class AlignmentError(SceneError):
    pass


@dataclass(frozen=True)
class Material:
    name: str
    eps_r: float
    sigma: float

    def __post_init__(self):
        if self.eps_r < 1.0 or self.sigma < 0.0:
            raise ValueError(f"material {self.name!r}: need eps_r >= 1 and sigma >= 0")


# Configurable defaults around 3.5 GHz.
DEFAULT_MATERIALS = {
    # perfectly matched surface (reflection coefficient 0); occludes but never reflects
    "absorber": Material("absorber", 1.0, 0.0),
    "concrete": Material("concrete", 5.24, 0.123),
    "glass": Material("glass", 6.27, 0.034),
    "medium_dry_ground": Material("medium_dry_ground", 15.0, 0.035),
    "metal": Material("metal", 1.0, 1e7),
    "wet_ground": Material("wet_ground", 30.0, 0.15),
}

DETAIL_CLASSES = frozenset({"window_frame", "railing", "vegetation", "furniture"})
PLANAR_CLASSES = frozenset({"ground", "road"})

DEFAULT_CLASS_MATERIALS = {
    "building": "concrete",
    "road": "concrete",
    "ground": "medium_dry_ground",
    "window_frame": "glass",
    "railing": "metal",
    "vegetation": "wet_ground",
    "furniture": "glass",
}
DEFAULT_MATERIAL = "medium_dry_ground"


@dataclass(frozen=True)
class SceneObject:
    name: str
    cls: str
    material: str | None = None


@dataclass(frozen=True, eq=False)
class TaggedMesh:
    """Triangle mesh whose ``object_ids`` index into ``objects``."""

    mesh: TriangleMesh
    objects: tuple = ()
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))
        ids = self.mesh.object_ids
        if len(ids) and (ids.min() < 0 or ids.max() >= len(self.objects)):
            raise SceneError("triangle references an unknown object")

    def __len__(self):
        return len(self.mesh)

    @property
    def triangle_materials(self) -> list:
        return [self.objects[i].material for i in self.mesh.object_ids]

    def object_areas(self) -> np.ndarray:
        return np.bincount(self.mesh.object_ids, weights=self.mesh.areas(),
                           minlength=len(self.objects))


class SceneAsset(TaggedMesh):
    """Full-detail scene used by the sensing front end."""


@dataclass(frozen=True, eq=False)
class RtMesh(TaggedMesh):
    """Simplified, material-annotated mesh used for propagation.

    ``target`` is the requested triangle budget when produced by
    :func:`simplify_mesh`.
    """

    target: int | None = None


# ---------------------------------------------------------------------
# Footprints
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class Footprint:
    polygon: np.ndarray
    height: float
    cls: str = "building"
    name: str = ""
    base: float = 0.0

    def __post_init__(self):
        poly = np.array(self.polygon, dtype=float).reshape(-1, 2)
        if len(poly) > 1 and np.allclose(poly[0], poly[-1]):
            poly = poly[:-1]
        object.__setattr__(self, "polygon", poly)


@dataclass(frozen=True)
class FootprintSet:
    footprints: tuple = ()
    origin: tuple = (0.0, 0.0, 0.0)
    origin_name: str = "local"


def load_footprints(path) -> FootprintSet:
    data = json.loads(Path(path).read_text())
    org = data.get("origin", {})
    if "lat" in org:
        origin = (float(org["lat"]), float(org["lon"]), float(org.get("alt", 0.0)))
        name = org.get("name", "geodetic")
    else:
        origin = tuple(float(c) for c in org.get("xyz", (0.0, 0.0, 0.0)))
        name = org.get("name", "local")
    fps = []
    for i, f in enumerate(data.get("footprints", [])):
        fps.append(Footprint(f["polygon"], float(f.get("height", 0.0)), f.get("class", "building"),
                             f.get("name", f"obj{i}"), float(f.get("base", 0.0))))
    return FootprintSet(tuple(fps), origin, name)


def save_footprints(fp: FootprintSet, path) -> None:
    data = {
        "origin": {"name": fp.origin_name, "xyz": list(fp.origin)},
        "footprints": [
            {"name": f.name, "class": f.cls, "height": f.height, "base": f.base,
             "polygon": f.polygon.tolist()} for f in fp.footprints
        ],
    }
    Path(path).write_text(json.dumps(data, indent=1))


def polygon_area(poly) -> float:
    x, y = np.asarray(poly, dtype=float).T
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
                and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12)

    o1, o2, o3, o4 = orient(p1, p2, q1), orient(p1, p2, q2), orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4):
        return True
    return ((o1 == 0 and on_seg(p1, p2, q1)) or (o2 == 0 and on_seg(p1, p2, q2))
            or (o3 == 0 and on_seg(q1, q2, p1)) or (o4 == 0 and on_seg(q1, q2, p2)))


def is_simple_polygon(poly) -> bool:
    poly = np.asarray(poly, dtype=float)
    n = len(poly)
    if n < 3 or abs(polygon_area(poly)) < 1e-12:
        return False
    for i in range(n):
        a1, a2 = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_cross(a1, a2, poly[j], poly[(j + 1) % n]):
                return False
    return True


def ear_clip(poly) -> list[tuple[int, int, int]]:
    """Triangulate a simple counter-clockwise polygon (indices into ``poly``)."""
    poly = np.asarray(poly, dtype=float)
    idx = list(range(len(poly)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    guard = 0
    while len(idx) > 3:
        n = len(idx)
        for k in range(n):
            i0, i1, i2 = idx[(k - 1) % n], idx[k], idx[(k + 1) % n]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if cross(a, b, c) <= 1e-12:
                continue
            inside = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = poly[j]
                if cross(a, b, p) >= 0 and cross(b, c, p) >= 0 and cross(c, a, p) >= 0:
                    inside = True
                    break
            if not inside:
                tris.append((i0, i1, i2))
                del idx[k]
                break
        else:
            guard += 1
            if guard > 1:
                raise SceneError("ear clipping failed; polygon not simple")
            # collinear leftovers: drop the flattest vertex
            n = len(idx)
            k = min(range(n), key=lambda k: abs(cross(poly[idx[k - 1]], poly[idx[k]], poly[idx[(k + 1) % n]])))
            del idx[k]
    if len(idx) == 3 and abs(cross(*poly[idx])) > 1e-12:
        tris.append(tuple(idx))
    return tris


class _Builder:
    """Collects welded per-object geometry."""

    def __init__(self):
        self.vertices: list = []
        self.faces: list = []
        self.obj: list = []
        self._keys: dict = {}

    def start_object(self):
        self._keys = {}

    def v(self, p) -> int:
        key = tuple(np.round(np.asarray(p, dtype=float), 9))
        i = self._keys.get(key)
        if i is None:
            i = self._keys[key] = len(self.vertices)
            self.vertices.append(np.asarray(p, dtype=float))
        return i

    def tri(self, a, b, c, obj):
        self.faces.append((self.v(a), self.v(b), self.v(c)))
        self.obj.append(obj)


def _subdivide(tri, levels):
    out = [tri]
    for _ in range(levels):
        nxt = []
        for a, b, c in out:
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            nxt += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        out = nxt
    return out


def extrude_footprints(fp: FootprintSet, class_materials: dict | None = None,
                       visual_cell: float = 0.0) -> SceneAsset:
    """Extrude footprints into a tagged scene mesh.

    Buildings and other non-planar classes become side walls plus a flat roof
    (and a bottom cap when ``base > 0``); ``ground``/``road`` become planar
    meshes at z=0. ``visual_cell > 0`` tessellates walls and roofs so no
    segment is longer than ``visual_cell`` (edge splits are powers of two).
    """
    mats = dict(DEFAULT_CLASS_MATERIALS)
    mats.update(class_materials or {})
    b = _Builder()
    objects = []
    for k, f in enumerate(fp.footprints):
        poly = f.polygon
        if not is_simple_polygon(poly):
            raise SceneError(f"footprint {f.name or k!r} is not a simple polygon")
        if polygon_area(poly) < 0:
            poly = poly[::-1]
        oid = len(objects)
        objects.append(SceneObject(f.name or f"obj{k}", f.cls, mats.get(f.cls, DEFAULT_MATERIAL)))
        b.start_object()
        tris2d = ear_clip(poly)
        if f.cls in PLANAR_CLASSES:
            for i, j, l in tris2d:
                b.tri(np.r_[poly[i], 0.0], np.r_[poly[j], 0.0], np.r_[poly[l], 0.0], oid)
            continue
        if f.height <= 0:
            raise SceneError(f"footprint {f.name or k!r} needs a positive height")
        z0, z1 = f.base, f.base + f.height
        levels, rows = 0, 1
        if visual_cell > 0:
            longest = max(np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1))
            levels = max(0, math.ceil(math.log2(max(longest / visual_cell, 1.0))))
            rows = max(1, math.ceil(f.height / visual_cell))
        segs = 2 ** levels
        n = len(poly)
        for i in range(n):
            p, q = poly[i], poly[(i + 1) % n]
            for s in range(segs):
                a2 = p + (q - p) * (s / segs)
                b2 = p + (q - p) * ((s + 1) / segs)
                for r in range(rows):
                    za = z0 + (z1 - z0) * r / rows
                    zb = z0 + (z1 - z0) * (r + 1) / rows
                    A, B = np.r_[a2, za], np.r_[b2, za]
                    C, D = np.r_[b2, zb], np.r_[a2, zb]
                    b.tri(A, B, C, oid)
                    b.tri(A, C, D, oid)
        for i, j, l in tris2d:
            top = (np.r_[poly[i], z1], np.r_[poly[j], z1], np.r_[poly[l], z1])
            for t in _subdivide(top, levels):
                b.tri(*t, oid)
            if f.base > 0:
                bot = (np.r_[poly[i], z0], np.r_[poly[l], z0], np.r_[poly[j], z0])
                for t in _subdivide(bot, levels):
                    b.tri(*t, oid)
    mesh = TriangleMesh(np.array(b.vertices).reshape(-1, 3), np.array(b.faces, dtype=np.int64).reshape(-1, 3),
                        np.array(b.obj, dtype=np.int64))
    return SceneAsset(mesh, tuple(objects), fp.origin)


def assign_materials(asset: TaggedMesh, rules, default: str | None = None,
                     library: dict | None = None) -> TaggedMesh:
    """Set each object's material from ``class -> material`` rules.

    ``rules`` may be a mapping or an ordered list of pairs; a later rule for
    the same class replaces an earlier one. Unmapped classes get ``default``.
    """
    library = DEFAULT_MATERIALS if library is None else library
    pairs = rules.items() if isinstance(rules, dict) else rules
    table = {}
    for cls, mat in pairs:
        table[cls] = mat
    objs = []
    for o in asset.objects:
        mat = table.get(o.cls, default)
        if mat is None:
            raise SceneError(f"no material rule for class {o.cls!r} and no default")
        if mat not in library:
            raise SceneError(f"unknown material {mat!r}")
        objs.append(replace(o, material=mat))
    return replace(asset, objects=tuple(objs))


# ---------------------------------------------------------------------
# Simplification
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class SimplifyConfig:
    size_threshold: float = 1.0
    ratio: float = 0.1
    sharp_angle_deg: float = 40.0
    detail_classes: frozenset = field(default=DETAIL_CLASSES)


def _face_plane(P):
    n = np.cross(P[1] - P[0], P[2] - P[0])
    area2 = np.linalg.norm(n)
    return n / area2, area2 / 2


def _cross3(a, b, c):
    ux, uy, uz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    vx, vy, vz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    return (uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx)


class _Qem:
    """Half-edge-collapse decimation driven by quadric error metrics."""

    BOUNDARY_WEIGHT = 1e3

    def __init__(self, verts, faces, locked, sharp_cos):
        self.V = verts
        self._P = [tuple(map(float, p)) for p in verts]
        self._H = np.c_[verts, np.ones(len(verts))]
        self.faces = {i: list(f) for i, f in enumerate(faces)}
        self.vf = defaultdict(set)
        for i, f in self.faces.items():
            for v in f:
                self.vf[v].add(i)
        self.Q = defaultdict(lambda: np.zeros((4, 4)))
        self.normals = {}
        for i, f in self.faces.items():
            n, area = _face_plane(self.V[f])
            self.normals[i] = n
            p = np.r_[n, -n @ self.V[f[0]]]
            K = area * np.outer(p, p)
            for v in f:
                self.Q[v] = self.Q[v] + K
        self.locked = set(locked)
        self.sharp = set()
        self.boundary = set()
        for e, fs in self._edge_faces().items():
            if len(fs) == 1:
                self.boundary.add(e)
                f = fs[0]
                a, b = self.V[e[0]], self.V[e[1]]
                m = np.cross(b - a, self.normals[f])
                ln = np.linalg.norm(m)
                if ln > 0:
                    m /= ln
                    p = np.r_[m, -m @ a]
                    K = self.BOUNDARY_WEIGHT * np.linalg.norm(b - a) ** 2 * np.outer(p, p)
                    self.Q[e[0]] = self.Q[e[0]] + K
                    self.Q[e[1]] = self.Q[e[1]] + K
            elif len(fs) == 2:
                if self.normals[fs[0]] @ self.normals[fs[1]] < sharp_cos:
                    self.sharp.add(e)
            else:
                self.sharp.add(e)  # non-manifold edges are kept verbatim
        for e in self.sharp:
            self.locked.update(e)
        # boundary corners (where the open border turns) are kept, so borders never cut inwards
        bdirs = defaultdict(list)
        for a, b in self.boundary:
            d = self.V[b] - self.V[a]
            d = d / np.linalg.norm(d)
            bdirs[a].append(d)
            bdirs[b].append(d)
        for v, ds in bdirs.items():
            if len(ds) != 2 or abs(ds[0] @ ds[1]) < 1.0 - 1e-9:
                self.locked.add(v)
        self.boundary_verts = {v for e in self.boundary for v in e}

    def _edge_faces(self):
        ef = defaultdict(list)
        for i, f in self.faces.items():
            for k in range(3):
                a, b = f[k], f[(k + 1) % 3]
                ef[(min(a, b), max(a, b))].append(i)
        return ef

    def _neighbors(self, v):
        return {w for fi in self.vf[v] for w in self.faces[fi] if w != v}

    def _cost(self, u, v):
        """Cost of moving ``u`` onto ``v``; ``None`` if the collapse is illegal."""
        if u in self.locked:
            return None
        e = (min(u, v), max(u, v))
        if e in self.sharp:
            return None
        if u in self.boundary_verts and e not in self.boundary:
            return None
        shared = self.vf[u] & self.vf[v]
        if len(shared) not in (1, 2):
            return None
        if len(self._neighbors(u) & self._neighbors(v)) != len(shared):
            return None
        P = self._P
        for fi in self.vf[u] - shared:
            a, b, c = (P[v if w == u else w] for w in self.faces[fi])
            n = _cross3(a, b, c)
            ln = math.sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2])
            m = self.normals[fi]
            if ln <= 2e-12 or (n[0] * m[0] + n[1] * m[1] + n[2] * m[2]) / ln <= 1e-6:
                return None
        h = self._H[v]
        return max(float(h @ (self.Q[u] + self.Q[v]) @ h), 0.0)

    def _push(self, heap, u, v):
        c = self._cost(u, v)
        if c is not None:
            heapq.heappush(heap, (c, u, v))

    def run(self, target: int):
        heap = []
        for (a, b) in self._edge_faces():
            self._push(heap, a, b)
            self._push(heap, b, a)
        while len(self.faces) > target and heap:
            c, u, v = heapq.heappop(heap)
            if u not in self.vf or v not in self.vf or v not in self._neighbors(u):
                continue
            now = self._cost(u, v)
            if now is None:
                continue
            if now > c + 1e-12 * max(1.0, c):
                heapq.heappush(heap, (now, u, v))
                continue
            self._collapse(u, v)
            ring = self._neighbors(v)
            for w in ring:
                self._push(heap, w, v)
                self._push(heap, v, w)
            # collapses around the ring may have become legal
            for w in ring:
                for x in self._neighbors(w) - ring - {v}:
                    self._push(heap, x, w)

    def _collapse(self, u, v):
        shared = self.vf[u] & self.vf[v]
        for fi in shared:
            for w in self.faces[fi]:
                if w != u:
                    self.vf[w].discard(fi)
            del self.faces[fi]
            del self.normals[fi]
        for fi in self.vf[u] - shared:
            f = self.faces[fi]
            self.faces[fi] = [v if w == u else w for w in f]
            self.vf[v].add(fi)
            n = _cross3(*(self._P[w] for w in self.faces[fi]))
            ln = math.sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2])
            self.normals[fi] = (n[0] / ln, n[1] / ln, n[2] / ln)
        del self.vf[u]
        self.Q[v] = self.Q[v] + self.Q[u]
        if u in self.boundary_verts:
            new_b = set()
            for (a, b) in self.boundary:
                if u in (a, b):
                    a, b = (v if a == u else a), (v if b == u else b)
                    if a == b:
                        continue
                new_b.add((min(a, b), max(a, b)))
            self.boundary = new_b
            self.boundary_verts = {w for e in self.boundary for w in e}


def simplify_mesh(asset: TaggedMesh, config: SimplifyConfig | None = None) -> RtMesh:
    """Drop detail objects, decimate the rest, and keep per-object materials."""
    cfg = config or SimplifyConfig()
    if not (0.0 < cfg.ratio <= 1.0):
        raise SceneError("decimation ratio must be in (0, 1]")
    if cfg.size_threshold < 0:
        raise SceneError("size threshold must be non-negative")
    mesh = asset.mesh
    areas = asset.object_areas()
    keep = [i for i, o in enumerate(asset.objects)
            if o.cls not in cfg.detail_classes and areas[i] >= cfg.size_threshold]
    tri_keep = np.isin(mesh.object_ids, keep)
    faces = mesh.triangles[tri_keep]
    obj_of_face = mesh.object_ids[tri_keep]
    target_total = int(math.floor(cfg.ratio * len(faces) + 1e-9))
    out_faces, out_obj = [], []
    if cfg.ratio < 1.0 and len(faces):
        # vertices used by several objects must not move
        owners = defaultdict(set)
        for f, o in zip(faces, obj_of_face):
            for v in f:
                owners[v].add(o)
        shared = {v for v, s in owners.items() if len(s) > 1}
        sharp_cos = math.cos(math.radians(cfg.sharp_angle_deg))
        for o in keep:
            sel = faces[obj_of_face == o]
            if not len(sel):
                continue
            target = max(1, int(math.floor(cfg.ratio * len(sel) + 1e-9)))
            qem = _Qem(mesh.vertices, sel, shared, sharp_cos)
            qem.run(target)
            for fi in sorted(qem.faces):
                out_faces.append(qem.faces[fi])
                out_obj.append(o)
    else:
        out_faces, out_obj = faces.tolist(), obj_of_face.tolist()
    out_faces = np.array(out_faces, dtype=np.int64).reshape(-1, 3)
    used = np.unique(out_faces)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    obj_remap = {o: i for i, o in enumerate(keep)}
    new_mesh = TriangleMesh(mesh.vertices[used], remap[out_faces],
                            np.array([obj_remap[o] for o in out_obj], dtype=np.int64))
    objects = tuple(asset.objects[o] for o in keep)
    return RtMesh(new_mesh, objects, asset.origin, target_total)


# ---------------------------------------------------------------------
# SimMesh I/O
# ---------------------------------------------------------------------
def _check_token(s, what):
    if not s or any(ch.isspace() for ch in s):
        raise SceneError(f"{what} {s!r} must be a non-empty token without whitespace")
    return s


def write_simmesh(mesh: TaggedMesh, path) -> Path:
    lines = ["# simmesh v1", "origin " + " ".join(repr(float(c)) for c in mesh.origin)]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.mesh.vertices.tolist()]
    tri = mesh.mesh.triangles + 1
    for oid, o in enumerate(mesh.objects):
        lines.append(f"o {_check_token(o.name, 'object name')} class={_check_token(o.cls, 'class')} "
                     f"material={_check_token(o.material or 'none', 'material')}")
        for i, j, k in tri[mesh.mesh.object_ids == oid].tolist():
            lines.append(f"f {i} {j} {k}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_simmesh(path, kind=SceneAsset) -> TaggedMesh:
    origin = (0.0, 0.0, 0.0)
    verts, faces, obj, objects = [], [], [], []
    for ln, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        try:
            if tag == "origin":
                origin = tuple(float(x) for x in rest[:3])
            elif tag == "v":
                verts.append([float(x) for x in rest[:3]])
            elif tag == "o":
                kv = dict(item.split("=", 1) for item in rest[1:])
                mat = kv.get("material")
                objects.append(SceneObject(rest[0], kv.get("class", "building"),
                                           None if mat in (None, "none") else mat))
            elif tag == "f":
                if not objects:
                    raise SceneError("face before any object")
                faces.append([int(x) - 1 for x in rest[:3]])
                obj.append(len(objects) - 1)
            else:
                raise SceneError(f"unknown record {tag!r}")
        except (ValueError, IndexError) as exc:
            raise SceneError(f"{path}:{ln}: malformed record ({exc})") from exc
    mesh = TriangleMesh(np.array(verts, dtype=float).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3), np.array(obj, dtype=np.int64))
    return kind(mesh, tuple(objects), origin)


ASSET_FILE = "scene_asset.simmesh"
RTMESH_FILE = "rt_mesh.simmesh"


def export_assets(asset: SceneAsset, rtmesh: RtMesh, out_dir) -> tuple[Path, Path]:
    verify_alignment(asset, rtmesh)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return write_simmesh(asset, out / ASSET_FILE), write_simmesh(rtmesh, out / RTMESH_FILE)


def verify_alignment(asset: TaggedMesh, rtmesh: TaggedMesh, n_landmarks: int = 64, tol: float = 1e-6) -> None:
    """Raise ``AlignmentError`` unless origins agree and sampled landmarks coincide."""
    if not np.allclose(asset.origin, rtmesh.origin, rtol=0.0, atol=1e-9):
        raise AlignmentError(f"origin mismatch: {asset.origin} vs {rtmesh.origin}")
    rv = rtmesh.mesh.vertices
    if not len(rv):
        return
    if not len(asset.mesh.vertices):
        raise AlignmentError("scene asset has no vertices")
    pick = np.unique(np.linspace(0, len(rv) - 1, min(n_landmarks, len(rv))).round().astype(int))
    dist, _ = cKDTree(asset.mesh.vertices).query(rv[pick])
    worst = float(dist.max())
    if worst > tol:
        raise AlignmentError(f"landmark deviation {worst:.3g} m exceeds {tol} m")
