"""
Kinematic platform front end: trajectory playback plus ray-cast depth,
semantic and lidar sensors and noisy GNSS / IMU samples.

Sensor frames are x forward, y left, z up. A camera pixel ``(u, v)`` looks
along ``(1, -(u - cx)/fx, -(v - cy)/fy)``, so image columns grow to the
right and rows grow downward.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    Bvh, Pose, Twist, pose_interpolate, quat_conj, quat_mul, quat_rotate, quat_to_rotvec,
)
from .messages import GnssFix, Image, ImuSample, PointCloud
from .timebase import NS_PER_S, seconds_to_ns

GRAVITY = 9.80665
_G = np.array([0.0, 0.0, -GRAVITY])


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    stamps: tuple      # ns, strictly increasing
    poses: tuple       # Pose per stamp
    frame: str = "uav"

    def __post_init__(self):
        if len(self.stamps) == 0 or len(self.stamps) != len(self.poses):
            raise TrajectoryError("trajectory needs at least one waypoint and one pose per stamp")
        if any(b <= a for a, b in zip(self.stamps, self.stamps[1:])):
            raise TrajectoryError("trajectory stamps must be strictly increasing")

    @property
    def start(self) -> int:
        return self.stamps[0]

    @property
    def end(self) -> int:
        return self.stamps[-1]


def load_trajectory(path, frame: str = "uav") -> Trajectory:
    """Read ``t x y z qw qx qy qz`` lines (t in seconds, ``#`` comments)."""
    stamps, poses = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 8:
            raise TrajectoryError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            vals = [float(x) for x in parts]
        except ValueError:
            raise TrajectoryError(f"{path}:{lineno}: non-numeric field") from None
        stamps.append(seconds_to_ns(vals[0]))
        try:
            poses.append(Pose(vals[1:4], vals[4:8]))
        except ValueError as exc:
            raise TrajectoryError(f"{path}:{lineno}: {exc}") from None
    return Trajectory(tuple(stamps), tuple(poses), frame)


def save_trajectory(traj: Trajectory, path) -> None:
    lines = []
    for t, p in zip(traj.stamps, traj.poses):
        vals = [t / NS_PER_S, *p.translation, *p.rotation]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def _segment(traj: Trajectory, t: int) -> int:
    """Index ``i`` of the segment ``[stamps[i], stamps[i+1])`` containing ``t``."""
    i = int(np.searchsorted(traj.stamps, t, side="right")) - 1
    return min(i, len(traj.stamps) - 2)


def state_at(traj: Trajectory, t: int) -> tuple[Pose, Twist]:
    """Pose and twist at ``t`` (ns). Both twist vectors are in the world frame.

    Velocities are constant per segment; at an interior waypoint the
    outgoing segment's velocity applies, at the final waypoint the last one.
    """
    if t < traj.start or t > traj.end:
        raise TrajectoryError(f"t={t} ns outside trajectory span [{traj.start}, {traj.end}]")
    if len(traj.stamps) == 1:
        return traj.poses[0], Twist()
    i = _segment(traj, t)
    t0, t1 = traj.stamps[i], traj.stamps[i + 1]
    p0, p1 = traj.poses[i], traj.poses[i + 1]
    dt = (t1 - t0) / NS_PER_S
    alpha = (t - t0) / (t1 - t0)
    pose = pose_interpolate(p0, p1, alpha)
    lin = (p1.translation - p0.translation) / dt
    dq = quat_mul(quat_conj(p0.rotation), p1.rotation)
    ang = quat_rotate(p0.rotation, quat_to_rotvec(dq) / dt)
    return pose, Twist(lin, ang)


# ---------------------------------------------------------------------
# Sensor models
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def center(self) -> tuple[float, float]:
        cx = (self.width - 1) / 2.0 if self.cx is None else self.cx
        cy = (self.height - 1) / 2.0 if self.cy is None else self.cy
        return cx, cy

    def rays(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, shape ``(height, width, 3)``."""
        cx, cy = self.center
        u, v = np.meshgrid(np.arange(self.width, dtype=float), np.arange(self.height, dtype=float))
        d = np.stack([np.ones_like(u), -(u - cx) / self.fx, -(v - cy) / self.fy], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def project(self, p_sensor) -> tuple[float, float] | None:
        """Pixel of a sensor-frame point, ``None`` if it is behind the camera."""
        x, y, z = np.asarray(p_sensor, dtype=float)
        if x <= 0:
            return None
        cx, cy = self.center
        return cx - self.fx * y / x, cy - self.fy * z / x


@dataclass(frozen=True)
class LidarPattern:
    n_azimuth: int = 360
    elevations: tuple = tuple(np.deg2rad(np.linspace(-15.0, 15.0, 16)))
    max_range: float = 100.0

    def __post_init__(self):
        if self.n_azimuth <= 0 or len(self.elevations) == 0 or self.max_range <= 0:
            raise ValueError("lidar needs beams and a positive range")

    def rays(self) -> np.ndarray:
        az = 2 * np.pi * np.arange(self.n_azimuth) / self.n_azimuth
        el = np.asarray(self.elevations, dtype=float)
        A, E = np.meshgrid(az, el)
        d = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1)
        return d.reshape(-1, 3)


@dataclass(frozen=True)
class SensorSuite:
    camera: CameraIntrinsics = CameraIntrinsics(64, 48, 50.0, 50.0)
    lidar: LidarPattern = LidarPattern()
    gnss_sigma: tuple = (0.0, 0.0, 0.0)
    accel_sigma: float = 0.0
    gyro_sigma: float = 0.0
    rates_hz: dict = field(default_factory=lambda: {
        "pose": 100.0, "gnss": 10.0, "imu": 100.0, "depth": 5.0, "semantic": 5.0, "lidar": 5.0})
    mounts: dict = field(default_factory=lambda: {
        "camera": Pose(), "lidar": Pose([0.0, 0.0, 0.1]), "imu": Pose(), "gnss": Pose()})

    def __post_init__(self):
        for name, r in self.rates_hz.items():
            if not r > 0:
                raise ValueError(f"rate for {name!r} must be positive")


def sensor_rng(seed: int, name: str) -> np.random.Generator:
    """Independent PCG64 stream for one sensor, keyed by session seed and name."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])))


def _world_rays(pose: Pose, dirs):
    d = quat_rotate(pose.rotation, dirs.reshape(-1, 3))
    o = np.broadcast_to(pose.translation, d.shape)
    return o, d


def raycast_depth(bvh: Bvh, pose: Pose, camera: CameraIntrinsics) -> np.ndarray:
    """Range along each pixel ray (m), 0 where nothing is hit."""
    o, d = _world_rays(pose, camera.rays())
    t, tri = bvh.first_hits(o, d)
    depth = np.where(tri >= 0, t, 0.0)
    return depth.reshape(camera.height, camera.width).astype(np.float32)


def raycast_semantic(bvh: Bvh, pose: Pose, camera: CameraIntrinsics) -> np.ndarray:
    """Object id of the first hit per pixel, -1 where nothing is hit."""
    o, d = _world_rays(pose, camera.rays())
    _, tri = bvh.first_hits(o, d)
    ids = np.full(len(tri), -1, dtype=np.int32)
    hit = tri >= 0
    ids[hit] = bvh.mesh.object_ids[tri[hit]]
    return ids.reshape(camera.height, camera.width)


def raycast_lidar(bvh: Bvh, pose: Pose, lidar: LidarPattern) -> np.ndarray:
    """Sensor-frame hit points within range, float32 ``(N, 3)``."""
    dirs = lidar.rays()
    o, d = _world_rays(pose, dirs)
    t, tri = bvh.first_hits(o, d, 0.0, lidar.max_range)
    hit = tri >= 0
    return (dirs[hit] * t[hit, None]).astype(np.float32)


def raycast_sensor(bvh: Bvh, pose: Pose, mode: str, suite: SensorSuite | None = None):
    suite = suite or SensorSuite()
    if mode == "depth":
        return raycast_depth(bvh, pose, suite.camera)
    if mode == "semantic":
        return raycast_semantic(bvh, pose, suite.camera)
    if mode == "lidar":
        return raycast_lidar(bvh, pose, suite.lidar)
    raise ValueError(f"unknown sensor mode {mode!r}")


def sensor_messages(bvh: Bvh, pose: Pose, mode: str, frame_id: str, suite: SensorSuite):
    data = raycast_sensor(bvh, pose, mode, suite)
    if mode == "depth":
        return Image(frame_id, "32FC1", data)
    if mode == "semantic":
        return Image(frame_id, "32SC1", data)
    return PointCloud(frame_id, data)


def sample_gnss(pose: Pose, sigma, rng: np.random.Generator, frame_id: str = "uav/gnss") -> GnssFix:
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (3,))
    noise = rng.normal(0.0, 1.0, 3) * sigma
    return GnssFix(frame_id, pose.translation + noise, sigma.copy())


def sample_imu(pose: Pose, twist: Twist, accel_world, accel_sigma: float, gyro_sigma: float,
               rng: np.random.Generator, frame_id: str = "uav/imu") -> ImuSample:
    """Body-frame specific force ``R^T (a - g)`` and angular rate, plus noise."""
    q_inv = quat_conj(pose.rotation)
    f = quat_rotate(q_inv, np.asarray(accel_world, dtype=float) - _G)
    w = quat_rotate(q_inv, twist.angular)
    noise = rng.normal(0.0, 1.0, 6)
    return ImuSample(frame_id, f + accel_sigma * noise[:3], w + gyro_sigma * noise[3:])


def finite_difference_accel(traj: Trajectory, t: int, dt_ns: int) -> np.ndarray:
    """World acceleration from the velocity change over the previous tick."""
    if t - dt_ns < traj.start:
        return np.zeros(3)
    _, v1 = state_at(traj, t)
    _, v0 = state_at(traj, t - dt_ns)
    return (v1.linear - v0.linear) / (dt_ns / NS_PER_S)


def sample_nav(traj: Trajectory, t: int, dt_ns: int, suite: SensorSuite, rngs: dict,
               frame_prefix: str | None = None) -> tuple[GnssFix, ImuSample]:
    prefix = frame_prefix or traj.frame
    pose, twist = state_at(traj, t)
    fix = sample_gnss(pose, suite.gnss_sigma, rngs["gnss"], f"{prefix}/gnss")
    imu = sample_imu(pose, twist, finite_difference_accel(traj, t, dt_ns),
                     suite.accel_sigma, suite.gyro_sigma, rngs["imu"], f"{prefix}/imu")
    return fix, imu
