"""
Specular image-method ray tracer over an :class:`~isacsim.scene.RtMesh`.

Triangles are grouped into coplanar planes. For every sequence of up to
``max_order`` planes (no plane twice in a row) the transmitter is mirrored
across each plane in turn and the path is recovered by walking back from the
receiver through the images. A candidate survives when every reflection
point lies strictly between its neighbours, falls inside a triangle of its
plane, and no segment is blocked. Both faces of a triangle reflect.

Amplitudes follow the isotropic Friis convention
``a = lambda / (4 pi L) * prod(Gamma) * exp(-j 2 pi f tau)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Bvh, SELF_HIT_EPS, TriangleMesh
from .messages import Reader, Writer, register
from .scene import DEFAULT_MATERIALS, Material, TaggedMesh

C0 = 299_792_458.0
EPS0 = 8.8541878128e-12
MAX_ORDER = 3

PLANE_NORMAL_TOL = 1e-9
PLANE_OFFSET_TOL = 1e-7
BARY_TOL = 1e-12


class RayTracerError(Exception):
    pass


@dataclass(frozen=True)
class RtConfig:
    carrier_hz: float
    max_order: int = 2
    tx_power_dbm: float = 30.0

    def __post_init__(self):
        if not self.carrier_hz > 0:
            raise RayTracerError("carrier frequency must be positive")
        if not (0 <= self.max_order <= MAX_ORDER):
            raise RayTracerError(f"reflection order must be in [0, {MAX_ORDER}]")

    @property
    def wavelength(self) -> float:
        return C0 / self.carrier_hz


@dataclass(frozen=True, eq=False)
class PropPath:
    """One propagation path. ``order`` 0 is line of sight.

    ``vertices`` holds TX, the reflection points and RX; ``triangles`` the
    reflecting triangle per bounce. ``dir_dep`` leaves the TX and ``dir_arr``
    is the propagation direction when reaching the RX.
    """

    order: int
    vertices: np.ndarray
    triangles: tuple
    length: float
    delay: float
    amplitude: complex
    dir_dep: np.ndarray
    dir_arr: np.ndarray
    doppler: float = 0.0

    def key(self):
        return (self.delay, self.order, self.triangles)

    def __eq__(self, other):
        if not isinstance(other, PropPath):
            return NotImplemented
        return (self.order == other.order and self.triangles == other.triangles
                and np.array_equal(self.vertices, other.vertices)
                and self.length == other.length and self.delay == other.delay
                and self.amplitude == other.amplitude and self.doppler == other.doppler
                and np.array_equal(self.dir_dep, other.dir_dep)
                and np.array_equal(self.dir_arr, other.dir_arr))

    __hash__ = None


def direction_to_azel(d) -> tuple[float, float]:
    d = np.asarray(d, dtype=float)
    return float(np.arctan2(d[1], d[0])), float(np.arcsin(np.clip(d[2], -1.0, 1.0)))


# ---------------------------------------------------------------------
# Physics
# ---------------------------------------------------------------------
def complex_permittivity(material: Material, f: float) -> complex:
    return complex(material.eps_r, -material.sigma / (2 * math.pi * f * EPS0))


def fresnel_gamma(material: Material, theta_i, f: float):
    """Vertical (TM) reflection coefficient at incidence angle ``theta_i`` from the normal.

    ``Gamma = (sqrt(eps - sin^2) - eps cos) / (sqrt(eps - sin^2) + eps cos)``.
    """
    eps = complex_permittivity(material, f)
    th = np.asarray(theta_i, dtype=float)
    c = np.cos(th)
    root = np.sqrt(eps - np.sin(th) ** 2 + 0j)
    g = (root - eps * c) / (root + eps * c)
    return complex(g) if g.ndim == 0 else g


def _gamma_cos(eps: complex, cos_t):
    """Same as :func:`fresnel_gamma` from ``cos(theta)`` directly."""
    root = np.sqrt(eps - (1.0 - cos_t * cos_t) + 0j)
    return (root - eps * cos_t) / (root + eps * cos_t)


def path_doppler(dir_dep, dir_arr, v_tx, v_rx, f: float) -> float:
    """``(f/c) (u_dep . v_tx - u_arr . v_rx)`` in Hz."""
    return float(f / C0 * (np.dot(dir_dep, v_tx) - np.dot(dir_arr, v_rx)))


def friis_path_loss_db(d: float, f: float) -> float:
    return 20.0 * math.log10(4 * math.pi * d * f / C0)


# ---------------------------------------------------------------------
# Plane groups
# ---------------------------------------------------------------------
@dataclass
class _Plane:
    normal: np.ndarray
    offset: float
    tris: np.ndarray                       # sorted triangle indices
    basis: np.ndarray = field(default=None)   # (2, 3) in-plane axes
    a2: np.ndarray = field(default=None)      # projected corners, (m, 2) each
    e1: np.ndarray = field(default=None)
    e2: np.ndarray = field(default=None)
    inv_det: np.ndarray = field(default=None)


def _canonical(n):
    for c in n:
        if abs(c) > 1e-12:
            return n if c > 0 else -n
    return n


def plane_groups(mesh: TriangleMesh) -> list[_Plane]:
    """Group triangles into unoriented planes, in order of first triangle."""
    if len(mesh) == 0:
        return []
    normals = mesh.normals()
    A, B, C = mesh.corners()
    reps_n, reps_d, members = [], [], []
    for i in range(len(mesh)):
        n = _canonical(normals[i])
        d = float(n @ A[i])
        if reps_n:
            N = np.array(reps_n)
            D = np.array(reps_d)
            match = np.flatnonzero((N @ n > 1 - PLANE_NORMAL_TOL) & (np.abs(D - d) < PLANE_OFFSET_TOL))
            if len(match):
                members[match[0]].append(i)
                continue
        reps_n.append(n)
        reps_d.append(d)
        members.append([i])
    planes = []
    for n, d, tris in zip(reps_n, reps_d, members):
        tris = np.array(tris, dtype=np.int64)
        u = np.cross(n, [1.0, 0.0, 0.0] if abs(n[0]) < 0.9 else [0.0, 1.0, 0.0])
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        basis = np.stack([u, v])
        a2, b2, c2 = A[tris] @ basis.T, B[tris] @ basis.T, C[tris] @ basis.T
        e1, e2 = b2 - a2, c2 - a2
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        planes.append(_Plane(n, d, tris, basis, a2, e1, e2, 1.0 / det))
    return planes


def _containing_triangle(plane: _Plane, pts) -> np.ndarray:
    """Lowest-index triangle of ``plane`` containing each point, -1 if none."""
    p2 = pts @ plane.basis.T
    r = p2[:, None, :] - plane.a2[None]
    s = (r[..., 0] * plane.e2[None, :, 1] - r[..., 1] * plane.e2[None, :, 0]) * plane.inv_det
    t = (plane.e1[None, :, 0] * r[..., 1] - plane.e1[None, :, 1] * r[..., 0]) * plane.inv_det
    inside = (s >= -BARY_TOL) & (t >= -BARY_TOL) & (s + t <= 1 + BARY_TOL)
    first = np.argmax(inside, axis=1)
    return np.where(inside.any(axis=1), plane.tris[first], -1)


# ---------------------------------------------------------------------
# Tracer
# ---------------------------------------------------------------------
class RayTracer:
    """Reusable tracer bound to one mesh; :meth:`trace` is a pure function of its inputs."""

    def __init__(self, rtmesh: TaggedMesh, cfg: RtConfig, library: dict | None = None):
        self.rtmesh = rtmesh
        self.cfg = cfg
        self.mesh = rtmesh.mesh
        self.bvh = Bvh(self.mesh)
        self.planes = plane_groups(self.mesh)
        library = DEFAULT_MATERIALS if library is None else library
        eps = {}
        for name in {o.material for o in rtmesh.objects}:
            if name not in library:
                raise RayTracerError(f"unknown material {name!r}")
            eps[name] = complex_permittivity(library[name], cfg.carrier_hz)
        self._tri_eps = np.array([eps[m] for m in rtmesh.triangle_materials], dtype=complex)

    def is_inside(self, p) -> bool:
        """Heuristic solid test: an upward ray from ``p`` first hits a back face."""
        p = np.asarray(p, dtype=float)
        up = np.array([[0.0, 0.0, 1.0]])
        t, tri = self.bvh.first_hits(p[None], up, 0.0)
        return bool(tri[0] >= 0 and self.bvh._normals[tri[0]][2] > 0)

    def _sequences(self, tx):
        """Depth-first plane sequences with the matching TX images."""
        out = []

        def rec(seq, image):
            if seq:
                out.append((tuple(seq), image))
            if len(seq) == self.cfg.max_order:
                return
            for gi, pl in enumerate(self.planes):
                if seq and seq[-1] == gi:
                    continue
                h = pl.normal @ image - pl.offset
                if abs(h) < 1e-9:
                    continue
                rec(seq + [gi], image - 2.0 * h * pl.normal)

        rec([], np.asarray(tx, dtype=float))
        return out

    def _candidates(self, tx, rx):
        """Geometrically valid candidates before occlusion.

        Returns a list of ``(rx_index, vertices (n, k+2, 3), tris (n, k))``.
        """
        M = len(rx)
        cands = []
        keep = np.linalg.norm(rx - tx, axis=1) > 1e-9
        idx = np.flatnonzero(keep)
        verts = np.empty((len(idx), 2, 3))
        verts[:, 0] = tx
        verts[:, 1] = rx[idx]
        cands.append((idx, verts, np.zeros((len(idx), 0), dtype=np.int64)))
        if M == 0:
            return cands
        for seq, _ in self._sequences(tx):
            k = len(seq)
            images = [np.asarray(tx, dtype=float)]
            for gi in seq:
                pl = self.planes[gi]
                im = images[-1]
                images.append(im - 2.0 * (pl.normal @ im - pl.offset) * pl.normal)
            target = rx
            ok = np.ones(M, dtype=bool)
            pts = [None] * k
            tris = [None] * k
            for j in range(k - 1, -1, -1):
                pl = self.planes[seq[j]]
                im = images[j + 1]
                d = target - im
                denom = d @ pl.normal
                with np.errstate(divide="ignore", invalid="ignore"):
                    s = (pl.offset - im @ pl.normal) / denom
                ok &= np.isfinite(s) & (s > 1e-9) & (s < 1 - 1e-9)
                if not ok.any():
                    break
                x = im + np.where(ok, s, 0.5)[:, None] * d
                pts[j] = x
                target = x
            if not ok.any():
                continue
            # the first leg must also leave the TX towards the first plane
            for j in range(k):
                pl = self.planes[seq[j]]
                prev = tx if j == 0 else pts[j - 1]
                nxt = rx if j == k - 1 else pts[j + 1]
                hp = (prev @ pl.normal if j else float(pl.normal @ tx)) - pl.offset
                hn = nxt @ pl.normal - pl.offset
                ok &= (hp * hn > 0) & (np.abs(hp) > 1e-9) & (np.abs(hn) > 1e-9)
            if not ok.any():
                continue
            sel = np.flatnonzero(ok)
            for j in range(k):
                tri = _containing_triangle(self.planes[seq[j]], pts[j][sel])
                good = tri >= 0
                sel = sel[good]
                for jj in range(j):
                    tris[jj] = tris[jj][good]
                tris[j] = tri[good]
                if not len(sel):
                    break
            if not len(sel):
                continue
            verts = np.empty((len(sel), k + 2, 3))
            verts[:, 0] = tx
            for j in range(k):
                verts[:, j + 1] = pts[j][sel]
            verts[:, -1] = rx[sel]
            cands.append((sel, verts, np.stack(tris, axis=1)))
        return cands

    def trace(self, tx, rx_points, v_tx=None, v_rx=None) -> list[list[PropPath]]:
        """Paths from ``tx`` to each receiver; one sorted list per receiver."""
        tx = np.asarray(tx, dtype=float).reshape(3)
        rx = np.asarray(rx_points, dtype=float).reshape(-1, 3)
        v_tx = np.zeros(3) if v_tx is None else np.asarray(v_tx, dtype=float)
        v_rx = np.zeros((len(rx), 3)) if v_rx is None else np.broadcast_to(
            np.asarray(v_rx, dtype=float), (len(rx), 3))
        cands = self._candidates(tx, rx)
        # one batched occlusion query over every candidate segment
        starts, ends, excl, owner = [], [], [], []
        for ci, (sel, verts, tris) in enumerate(cands):
            k = tris.shape[1]
            pad = np.full((len(sel), 1), -1, dtype=np.int64)
            ext = np.concatenate([pad, tris, pad], axis=1)
            for j in range(k + 1):
                starts.append(verts[:, j])
                ends.append(verts[:, j + 1])
                excl.append(np.stack([ext[:, j], ext[:, j + 1]], axis=1))
                owner.append((ci, np.arange(len(sel))))
        out: list[list[PropPath]] = [[] for _ in range(len(rx))]
        if not starts:
            return out
        S = np.concatenate(starts)
        E = np.concatenate(ends)
        X = np.concatenate(excl)
        d = E - S
        seg_len = np.linalg.norm(d, axis=1)
        d = d / np.where(seg_len > 0, seg_len, 1.0)[:, None]
        blocked = self.bvh.occluded(S, d, SELF_HIT_EPS, seg_len - SELF_HIT_EPS, exclude=X)
        blocked |= seg_len <= 2 * SELF_HIT_EPS
        free = [np.ones(len(c[0]), dtype=bool) for c in cands]
        pos = 0
        for ci, rows in owner:
            free[ci][rows] &= ~blocked[pos:pos + len(rows)]
            pos += len(rows)
        f = self.cfg.carrier_hz
        lam = self.cfg.wavelength
        for ci, (sel, verts, tris) in enumerate(cands):
            m = free[ci]
            if not m.any():
                continue
            sel, verts, tris = sel[m], verts[m], tris[m]
            legs = np.diff(verts, axis=1)
            leg_len = np.linalg.norm(legs, axis=2)
            units = legs / leg_len[..., None]
            L = leg_len.sum(axis=1)
            tau = L / C0
            amp = lam / (4 * np.pi * L) * np.exp(-2j * np.pi * f * tau)
            for j in range(tris.shape[1]):
                n = self.mesh_normals[tris[:, j]]
                cos_t = np.abs(np.einsum("ij,ij->i", units[:, j], n))
                amp = amp * _gamma_cos(self._tri_eps[tris[:, j]], np.minimum(cos_t, 1.0))
            dep, arr = units[:, 0], units[:, -1]
            dop = f / C0 * (dep @ v_tx - np.einsum("ij,ij->i", arr, v_rx[sel]))
            for r in range(len(sel)):
                out[sel[r]].append(PropPath(
                    tris.shape[1], verts[r], tuple(int(t) for t in tris[r]), float(L[r]),
                    float(tau[r]), complex(amp[r]), dep[r], arr[r], float(dop[r])))
        for paths in out:
            paths.sort(key=PropPath.key)
        return out

    @property
    def mesh_normals(self) -> np.ndarray:
        return self.bvh._normals


def compute_paths(tx, rx, scene, cfg: RtConfig | None = None) -> list[PropPath]:
    """Paths for one link. ``tx``/``rx`` are points or ``(Pose, Twist)`` pairs.

    ``scene`` is an :class:`RtMesh` (with ``cfg``) or a prepared :class:`RayTracer`.
    """
    tracer = scene if isinstance(scene, RayTracer) else RayTracer(scene, cfg)

    def split(x):
        if isinstance(x, tuple) and len(x) == 2 and hasattr(x[0], "translation"):
            return x[0].translation, x[1].linear
        return np.asarray(x, dtype=float), np.zeros(3)

    p_tx, v_tx = split(tx)
    p_rx, v_rx = split(rx)
    return tracer.trace(p_tx, p_rx[None], v_tx, v_rx)[0]


# ---------------------------------------------------------------------
# CIR message
# ---------------------------------------------------------------------
@register
@dataclass(frozen=True, eq=False)
class Cir:
    """Delay-sorted paths of one (tx, rx, stamp); empty means outage."""

    SCHEMA = "isacsim/Cir"
    frame_id: str
    stamp: int
    tx_id: str
    rx_id: str
    paths: tuple = ()

    def __eq__(self, other):
        if not isinstance(other, Cir):
            return NotImplemented
        return self.encode() == other.encode()

    __hash__ = None

    def encode(self) -> bytes:
        w = Writer()
        w.string(self.frame_id)
        w.u64(self.stamp)
        w.string(self.tx_id)
        w.string(self.rx_id)
        w.u32(len(self.paths))
        for p in self.paths:
            w.u8(p.order)
            for t in p.triangles:
                w.i32(t)
            w.f64s(np.asarray(p.vertices).reshape(-1))
            w.f64(p.length)
            w.f64(p.delay)
            w.f64(p.amplitude.real)
            w.f64(p.amplitude.imag)
            w.f64s(p.dir_dep)
            w.f64s(p.dir_arr)
            w.f64(p.doppler)
        return w.bytes()

    @classmethod
    def decode(cls, b: bytes) -> Cir:
        r = Reader(b)
        frame, stamp, tx_id, rx_id = r.string(), r.u64(), r.string(), r.string()
        paths = []
        for _ in range(r.u32()):
            k = r.u8()
            tris = tuple(r.i32() for _ in range(k))
            verts = r.f64s(3 * (k + 2)).reshape(k + 2, 3)
            length, delay = r.f64(), r.f64()
            amp = complex(r.f64(), r.f64())
            dep, arr = r.f64s(3), r.f64s(3)
            paths.append(PropPath(k, verts, tris, length, delay, amp, dep, arr, r.f64()))
        r.done()
        return cls(frame, stamp, tx_id, rx_id, tuple(paths))


def assemble_cir(paths, stamp: int, tx_id: str, rx_id: str, frame_id: str = "world") -> Cir:
    return Cir(frame_id, int(stamp), tx_id, rx_id, tuple(sorted(paths, key=PropPath.key)))
