"""
Channel knowledge map generation by grid scan.

A virtual receiver is placed at every cell centre of a ground-plane grid;
paths, link KPIs and per-cell summaries are computed independently per cell
and written back by index, so the result does not depend on the worker
count.

Raster files start with one ASCII line::

    CKM1 <layer> <n_x> <n_y> <x0> <y0> <cell> <rx_h> <units>

followed by ``n_x * n_y`` little-endian float32 values, index ``i * n_y + j``
for cell ``(i, j)``. NaN marks nodata.
"""

from __future__ import annotations

import hashlib
import json
import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose, pose_compose
from .linksys import (
    ArrayConfig, BlerCurve, OfdmConfig, best_beam_gain_db, cir_to_cfr, dft_codebook, evaluate_link,
)
from .raytracer import RayTracer, RtConfig
from .scene import TaggedMesh

LAYERS = (
    ("path_loss_db", "dB"),
    ("rx_power_dbm", "dBm"),
    ("rms_delay_spread_s", "s"),
    ("angular_spread_rad", "rad"),
    ("sinr_eff_db", "dB"),
    ("rate_bpshz", "bit/s/Hz"),
    ("best_beam", "index"),
)
LAYER_UNITS = dict(LAYERS)

# 5-stop ramp from low (dark blue) to high (yellow)
RAMP = np.array([
    [48, 18, 59],
    [40, 120, 230],
    [30, 200, 150],
    [170, 220, 50],
    [250, 235, 35],
], dtype=float)


class CkmError(Exception):
    pass


@dataclass(frozen=True)
class GridSpec:
    x0: float
    y0: float
    n_x: int
    n_y: int
    cell: float
    rx_height: float = 1.5

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise CkmError("grid needs at least one cell per axis")
        if not self.cell > 0:
            raise CkmError("cell size must be positive")

    def centers(self) -> np.ndarray:
        """Cell centres, shape ``(n_x, n_y, 3)``."""
        xs = self.x0 + (np.arange(self.n_x) + 0.5) * self.cell
        ys = self.y0 + (np.arange(self.n_y) + 0.5) * self.cell
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([X, Y, np.full_like(X, self.rx_height)], axis=-1)


@dataclass(frozen=True)
class LinkSetup:
    """Everything besides geometry that a link evaluation needs."""

    rt: RtConfig
    array: ArrayConfig = field(default_factory=ArrayConfig)
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    bler: BlerCurve = field(default_factory=BlerCurve)

    @property
    def tx_power_dbm(self) -> float:
        return self.rt.tx_power_dbm


@dataclass(eq=False)
class Ckm:
    grid: GridSpec
    tx_pose: Pose
    digest: str
    layers: dict   # name -> (n_x, n_y) float64 array

    def lookup(self, x: float, y: float) -> dict:
        return lookup(self, x, y)


# ---------------------------------------------------------------------
# Per-cell reduction
# ---------------------------------------------------------------------
def delay_spread(powers, delays) -> float:
    p = np.asarray(powers, dtype=float)
    p = p / p.sum()
    tau = np.asarray(delays, dtype=float)
    mean = p @ tau
    return float(math.sqrt(max(p @ (tau - mean) ** 2, 0.0)))


def angular_spread(powers, azimuths) -> float:
    p = np.asarray(powers, dtype=float)
    p = p / p.sum()
    r = abs(np.sum(p * np.exp(1j * np.asarray(azimuths, dtype=float))))
    return float(math.sqrt(max(-2.0 * math.log(min(r, 1.0)), 0.0))) if r > 0 else float("inf")


def reduce_cell(paths, kpi, tx_power_dbm: float, gain_db: float) -> dict:
    """Summaries of one cell; every layer is NaN for an outage."""
    if not len(paths):
        return {name: float("nan") for name, _ in LAYERS}
    pw = np.array([abs(p.amplitude) ** 2 for p in paths])
    total = pw.sum()
    if total <= 0:
        # geometric paths exist but carry no energy (perfect absorbers)
        return {name: float("nan") for name, _ in LAYERS}
    pl = -10 * math.log10(total)
    az = [math.atan2(p.dir_arr[1], p.dir_arr[0]) for p in paths]
    return {
        "path_loss_db": pl,
        "rx_power_dbm": tx_power_dbm - pl + gain_db,
        "rms_delay_spread_s": delay_spread(pw, [p.delay for p in paths]),
        "angular_spread_rad": angular_spread(pw, az),
        "sinr_eff_db": kpi.sinr_eff_db,
        "rate_bpshz": kpi.rate,
        "best_beam": float(kpi.best_beam),
    }


def evaluate_cell(paths, setup: LinkSetup, codebook, array_rotation):
    H = cir_to_cfr(paths, setup.array, setup.ofdm, array_rotation)
    kpi = evaluate_link(H, codebook, setup.ofdm, setup.tx_power_dbm, bler=setup.bler)
    gain = best_beam_gain_db(H, codebook, kpi.best_beam, paths) if paths else float("nan")
    return kpi, reduce_cell(paths, kpi, setup.tx_power_dbm, gain)


# ---------------------------------------------------------------------
# Grid scan
# ---------------------------------------------------------------------
_STATE: dict = {}


def _init_worker(rtmesh, setup, tx_pose, grid):
    _STATE.clear()
    _STATE.update(tracer=RayTracer(rtmesh, setup.rt), setup=setup, tx_pose=tx_pose,
                  grid=grid, codebook=dft_codebook(setup.array), centers=grid.centers(),
                  array_rotation=_array_rotation(tx_pose, setup.array))


def _array_rotation(tx_pose: Pose, array: ArrayConfig):
    return pose_compose(tx_pose, array.mount).rotation


def _scan_row(i: int) -> np.ndarray:
    st = _STATE
    setup = st["setup"]
    rx = st["centers"][i]
    all_paths = st["tracer"].trace(st["tx_pose"].translation, rx)
    out = np.empty((len(LAYERS), len(rx)))
    for j, paths in enumerate(all_paths):
        _, vals = evaluate_cell(paths, setup, st["codebook"], st["array_rotation"])
        out[:, j] = [vals[name] for name, _ in LAYERS]
    return out


def config_digest(rtmesh: TaggedMesh, tx_pose: Pose, grid: GridSpec, setup: LinkSetup) -> str:
    h = hashlib.sha256()
    m = rtmesh.mesh
    for arr in (m.vertices, m.triangles, m.object_ids):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(json.dumps([[o.name, o.cls, o.material] for o in rtmesh.objects]).encode())
    h.update(tx_pose.translation.tobytes() + tx_pose.rotation.tobytes())
    cfg = {
        "grid": asdict(grid),
        "rt": asdict(setup.rt),
        "array": [setup.array.n_x, setup.array.n_y, setup.array.spacing,
                  list(setup.array.mount.translation), list(setup.array.mount.rotation)],
        "ofdm": asdict(setup.ofdm),
        "bler": asdict(setup.bler),
    }
    h.update(json.dumps(cfg, sort_keys=True).encode())
    return h.hexdigest()


def generate_ckm(rtmesh: TaggedMesh, tx_pose: Pose, grid: GridSpec, setup: LinkSetup,
                 workers: int = 1) -> Ckm:
    """Scan every cell of ``grid`` from the transmitter at ``tx_pose``."""
    probe = RayTracer(rtmesh, setup.rt)
    if probe.is_inside(tx_pose.translation):
        raise CkmError(f"transmitter at {tx_pose.translation.tolist()} lies inside scene geometry")
    args = (rtmesh, setup, tx_pose, grid)
    rows = range(grid.n_x)
    if workers <= 1:
        _init_worker(*args)
        results = [_scan_row(i) for i in rows]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(workers, mp_context=ctx, initializer=_init_worker, initargs=args) as ex:
            results = list(ex.map(_scan_row, rows, chunksize=max(1, grid.n_x // (4 * workers))))
    stack = np.stack(results, axis=1)   # (layer, n_x, n_y)
    layers = {name: stack[k] for k, (name, _) in enumerate(LAYERS)}
    return Ckm(grid, tx_pose, config_digest(rtmesh, tx_pose, grid, setup), layers)


def lookup(ckm: Ckm, x: float, y: float) -> dict:
    g = ckm.grid
    fx = (x - g.x0) / g.cell
    fy = (y - g.y0) / g.cell
    if not (0 <= fx <= g.n_x and 0 <= fy <= g.n_y):
        raise CkmError(f"({x}, {y}) lies outside the grid")
    i = min(int(math.floor(fx)), g.n_x - 1)
    j = min(int(math.floor(fy)), g.n_y - 1)
    return {name: float(arr[i, j]) for name, arr in ckm.layers.items()}


# ---------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------
def _fmt(v: float) -> str:
    return repr(float(v))


def encode_raster(ckm: Ckm, name: str) -> bytes:
    g = ckm.grid
    head = f"CKM1 {name} {g.n_x} {g.n_y} {_fmt(g.x0)} {_fmt(g.y0)} {_fmt(g.cell)} " \
           f"{_fmt(g.rx_height)} {LAYER_UNITS[name]}\n"
    data = np.ascontiguousarray(ckm.layers[name], dtype="<f4").tobytes()
    return head.encode("ascii") + data


def read_raster(path) -> tuple[str, GridSpec, str, np.ndarray]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CkmError(f"{path}: missing raster header")
    parts = raw[:nl].decode("ascii").split()
    if len(parts) != 9 or parts[0] != "CKM1":
        raise CkmError(f"{path}: bad raster header")
    _, name, nx, ny, x0, y0, cell, rh, units = parts
    grid = GridSpec(float(x0), float(y0), int(nx), int(ny), float(cell), float(rh))
    body = raw[nl + 1:]
    if len(body) != 4 * grid.n_x * grid.n_y:
        raise CkmError(f"{path}: expected {grid.n_x * grid.n_y} cells, found {len(body) // 4}")
    data = np.frombuffer(body, dtype="<f4").reshape(grid.n_x, grid.n_y)
    return name, grid, units, data.astype(np.float32)


def colorize(values) -> np.ndarray:
    """RGB bytes for ``values`` (any shape); non-finite cells are black."""
    v = np.asarray(values, dtype=float)
    finite = np.isfinite(v)
    out = np.zeros(v.shape + (3,), dtype=np.uint8)
    if not finite.any():
        return out
    lo, hi = v[finite].min(), v[finite].max()
    t = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    t = np.clip(np.where(finite, t, 0.0), 0.0, 1.0) * (len(RAMP) - 1)
    k = np.minimum(np.floor(t).astype(int), len(RAMP) - 2)
    frac = (t - k)[..., None]
    rgb = RAMP[k] * (1 - frac) + RAMP[k + 1] * frac
    out[finite] = np.rint(rgb[finite]).astype(np.uint8)
    return out


def encode_heatmap(layer) -> bytes:
    """Binary PPM; columns follow x, the top row is the largest y."""
    img = colorize(np.asarray(layer).T[::-1])
    h, w = img.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6":
        raise CkmError(f"{path}: not a binary PPM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def write_outputs(ckm: Ckm, out_dir) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, _ in LAYERS:
            p = out / f"{name}.ckm"
            p.write_bytes(encode_raster(ckm, name))
            q = out / f"{name}.ppm"
            q.write_bytes(encode_heatmap(ckm.layers[name]))
            written += [p, q]
        meta = {
            "digest": ckm.digest,
            "grid": asdict(ckm.grid),
            "tx_position": [float(c) for c in ckm.tx_pose.translation],
            "tx_rotation": [float(c) for c in ckm.tx_pose.rotation],
            "layers": [{"name": n, "units": u} for n, u in LAYERS],
        }
        m = out / "ckm_meta.json"
        m.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        written.append(m)
    except OSError as exc:
        raise CkmError(f"cannot write CKM outputs to {out}: {exc}") from exc
    return written


def load_ckm(out_dir) -> Ckm:
    out = Path(out_dir)
    meta = json.loads((out / "ckm_meta.json").read_text())
    layers = {}
    grid = None
    for name, _ in LAYERS:
        _, grid, _, data = read_raster(out / f"{name}.ckm")
        layers[name] = data.astype(float)
    return Ckm(grid, Pose(meta["tx_position"], meta["tx_rotation"]), meta["digest"], layers)
