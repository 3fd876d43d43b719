"""
Generators for the bundled demo data: the two-building scene, the synthetic
city and the demo flight. The files under ``data/`` are the output of these
functions; :func:`write_bundled` regenerates them.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import Pose, quat_from_rpy
from .scene import Footprint, FootprintSet, save_footprints
from .sensing import Trajectory, save_trajectory
from .timebase import NS_PER_S

DEMO_FOOTPRINTS = "demo_footprints.json"
CITY_FOOTPRINTS = "city_footprints.json"
DEMO_TRAJECTORY = "demo_trajectory.txt"
DEMO_TRAJECTORY_BAG = "demo_trajectory.bag"
DEMO_CONFIG = "demo.cfg"


def data_dir() -> Path:
    return Path(str(resources.files("isacsim") / "data"))


def _rect(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


def _ngon(cx, cy, r, n=12):
    return [[cx + r * math.cos(a), cy + r * math.sin(a)] for a in np.arange(n) * 2 * math.pi / n]


def demo_footprints() -> FootprintSet:
    """Two buildings on a ground plate, plus window frames, a railing and trees."""
    fps = [
        Footprint(_rect(-100, -100, 100, 100), 0.0, "ground", "ground"),
        Footprint(_rect(20, 10, 40, 40), 20.0, "building", "tower_a"),
        Footprint(_rect(-40, -35, -15, -15), 16.0, "building", "block_b"),
    ]
    k = 0
    for x in (23, 28, 33, 37):
        for z in (4, 10, 16):
            fps.append(Footprint(_rect(x, 9.8, x + 1.5, 10.0), 1.5, "window_frame", f"win{k}", z))
            k += 1
    fps.append(Footprint(_rect(-40, -35.3, -15, -35.0), 1.0, "railing", "rail_b", 16.0))
    k = 0
    for x in (-60, -45, 0, 10, 60, 75):
        for y in (-60, 30, 60):
            fps.append(Footprint(_ngon(x, y, 1.5), 6.0, "vegetation", f"tree{k}"))
            k += 1
    return FootprintSet(tuple(fps), (0.0, 0.0, 0.0), "demo")


def city_footprints(seed: int = 7) -> FootprintSet:
    """3x3 blocks with facade details; heights are multiples of 4 m."""
    rng = np.random.default_rng(seed)
    fps = [Footprint(_rect(-120, -120, 120, 120), 0.0, "ground", "ground")]
    for i in range(3):
        for j in range(3):
            x0, y0 = -100 + 70 * i, -100 + 70 * j
            w, d = (int(v) for v in rng.integers(20, 36, 2))
            h = 4.0 * int(rng.integers(3, 8))
            tag = f"{i}{j}"
            fps.append(Footprint(_rect(x0, y0, x0 + w, y0 + d), h, "building", f"bldg_{tag}"))
            fps.append(Footprint(_rect(x0 + 1, y0 + 1, x0 + w - 1, y0 + 1.2), 1.0, "railing", f"rail_{tag}", h))
            for k, z in enumerate(np.arange(3.0, h - 2, 4.0)):
                for m, xx in enumerate(np.arange(x0 + 3.0, x0 + w - 3, 5.0)):
                    fps.append(Footprint(_rect(xx, y0 - 0.2, xx + 1.5, y0), 1.5, "window_frame",
                                         f"win_{tag}_{k}_{m}", float(z)))
            for k in range(3):
                fps.append(Footprint(_ngon(x0 + w + 8, y0 + 5 + 10 * k, 1.5), 6.0, "vegetation", f"tree_{tag}_{k}"))
    return FootprintSet(tuple(fps), (0.0, 0.0, 0.0), "city")


def city_corners(fp: FootprintSet) -> np.ndarray:
    """Facade corners (footprint vertices at ground and roof level) of every building."""
    pts = []
    for f in fp.footprints:
        if f.cls != "building":
            continue
        for x, y in f.polygon:
            pts.append((x, y, f.base))
            pts.append((x, y, f.base + f.height))
    return np.array(pts, dtype=float)


def demo_trajectory() -> Trajectory:
    """A 20 s loop at 30 m altitude through the demo scene, one waypoint per 0.5 s."""
    stamps, poses = [], []
    n = 41
    for k in range(n):
        s = k / (n - 1)
        ang = 2 * math.pi * s
        x, y = 55 * math.cos(ang) - 5, 45 * math.sin(ang)
        z = 30.0 + 5.0 * math.sin(2 * ang)
        yaw = math.atan2(45 * math.cos(ang), -55 * math.sin(ang))
        stamps.append(int(round(k * 0.5 * NS_PER_S)))
        poses.append(Pose([x, y, z], quat_from_rpy(0.0, 0.0, yaw)))
    return Trajectory(tuple(stamps), tuple(poses), "uav")


DEMO_CONFIG_TEXT = """\
# Two-building demo session. Paths are relative to this file.
scene.footprints = demo_footprints.json
scene.visual_cell = 4.0

session.trajectory = demo_trajectory.txt
session.tick_ms = 10
session.seed = 7
session.output_dir = isacsim_out

sensors.rate_pose_hz = 100
sensors.rate_gnss_hz = 10
sensors.rate_imu_hz = 100
sensors.rate_depth_hz = 1
sensors.rate_semantic_hz = 1
sensors.rate_lidar_hz = 1
sensors.gnss_sigma_m = 0.5
sensors.accel_sigma = 0.05
sensors.gyro_sigma = 0.002
sensors.camera = 64, 48, 50.0, 50.0
sensors.lidar_azimuths = 90
sensors.lidar_elevations_deg = -30, -20, -10, 0, 10
sensors.lidar_range_m = 150

bs.position = 0.0, -80.0, 15.0
bs.rpy_deg = 0.0, 0.0, 90.0
bs.array_rpy_deg = 0.0, 80.0, 0.0
bs.camera = 320, 240, 200.0, 200.0

array.n_x = 8
array.n_y = 8
array.spacing = 0.5

rt.carrier_hz = 3.5e9
rt.max_order = 2

link.tx_power_dbm = 30
link.noise_figure_db = 7
link.rate_hz = 10
ofdm.n_subcarriers = 64
ofdm.spacing_hz = 30e3
bler.threshold_db = 5
bler.slope_per_db = 1

grid.x0 = -64
grid.y0 = -64
grid.n_x = 64
grid.n_y = 64
grid.cell = 2
grid.rx_height = 1.5
ckm.workers = 4

beampred.slop_ms = 5
beampred.k = 5
beampred.train_fraction = 0.8
beampred.seed = 0
"""


def write_bundled(out_dir=None) -> list[Path]:
    """(Re)write every bundled data file; the trajectory bag comes from the txt."""
    from .session import trajectory_bag
    out = Path(out_dir) if out_dir is not None else data_dir()
    out.mkdir(parents=True, exist_ok=True)
    save_footprints(demo_footprints(), out / DEMO_FOOTPRINTS)
    save_footprints(city_footprints(), out / CITY_FOOTPRINTS)
    save_trajectory(demo_trajectory(), out / DEMO_TRAJECTORY)
    (out / DEMO_CONFIG).write_text(DEMO_CONFIG_TEXT)
    trajectory_bag(out / DEMO_TRAJECTORY, out / DEMO_TRAJECTORY_BAG, tick_ns=10_000_000, rate_hz=100.0)
    return [out / n for n in (DEMO_FOOTPRINTS, CITY_FOOTPRINTS, DEMO_TRAJECTORY, DEMO_CONFIG, DEMO_TRAJECTORY_BAG)]
