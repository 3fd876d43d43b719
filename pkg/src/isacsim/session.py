"""
Session orchestration: one process hosts the clock, frame tree, sensing
front end, ray tracer and link evaluator on a shared bus and records every
topic into one session bag.

All downstream nodes consume only the pose topic, so a session driven from a
trajectory file (online) and one driven from a recorded pose stream (replay)
produce the same channel and sensor streams.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bus import BagReader, Bus, bag_inspect, bag_record
from .config import ConfigError, SessionConfig
from .geometry import Bvh, Pose
from .linksys import cir_to_cfr, dft_codebook, evaluate_link
from .messages import Clock, Odometry, TFMessage, decode
from .raytracer import RayTracer, assemble_cir
from .scene import SceneError, extrude_footprints, load_footprints, simplify_mesh
from .sensing import (
    SensorSuite, Trajectory, load_trajectory, sample_gnss, sample_imu, sensor_messages, sensor_rng, state_at,
)
from .timebase import NS_PER_S, FrameTree, SimClock, StampedTransform

log = logging.getLogger("isacsim.session")

WORLD = "world"
BS, BS_ARRAY, BS_CAMERA = "bs", "bs/array", "bs/camera"
UAV = "uav"

CLOCK_TOPIC = "/clock"
TF_TOPIC = "/tf"
POSE_TOPIC = "/platform/uav/pose"
GNSS_TOPIC = "/gnss"
IMU_TOPIC = "/imu"
SENSOR_TOPICS = {"depth": "/depth", "semantic": "/semantic", "lidar": "/lidar"}
CIR_TOPIC = "/channel/cir"
KPI_TOPIC = "/channel/kpi"
SESSION_BAG = "session.bag"


class SessionError(Exception):
    pass


def build_scene(cfg: SessionConfig):
    """SceneAsset and RtMesh from the configured footprints."""
    try:
        fp = load_footprints(cfg["scene.footprints"])
        asset = extrude_footprints(fp, visual_cell=cfg["scene.visual_cell"])
        return asset, simplify_mesh(asset, cfg.simplify())
    except (OSError, ValueError, KeyError, SceneError) as exc:
        raise SessionError(f"cannot build scene from {cfg['scene.footprints']}: {exc}") from None


class _Schedule:
    """Fires at ``t0 + n / rate`` for n = 0, 1, ..., anchored at the first stamp seen."""

    def __init__(self, rate_hz: float):
        self.period = NS_PER_S / rate_hz
        self.t0 = None
        self.n = 0

    def due(self, t: int) -> bool:
        if self.t0 is None:
            self.t0 = t
        if t < self.t0 + round(self.n * self.period):
            return False
        while t >= self.t0 + round(self.n * self.period):
            self.n += 1
        return True


def pose_stream(traj: Trajectory, tick_ns: int, rate_hz: float):
    """``(stamp, Odometry)`` samples of ``traj`` on the tick grid at ``rate_hz``."""
    sched = _Schedule(rate_hz)
    t = traj.start
    while t <= traj.end:
        if sched.due(t):
            pose, twist = state_at(traj, t)
            yield t, Odometry(WORLD, traj.frame, pose, twist)
        t += tick_ns


def trajectory_bag(traj_path, out_path, tick_ns: int = 10_000_000, rate_hz: float = 100.0) -> Path:
    """Record the pose stream of a trajectory file (with ``/clock``) into a bag."""
    traj = load_trajectory(traj_path, UAV)
    bus = Bus()
    clock = SimClock(lambda t: bus.publish_msg(CLOCK_TOPIC, Clock(t), t))
    bus.clock = clock
    rec = bag_record(bus)
    if traj.start > 0:
        clock.advance_to(traj.start, publish=False)
    clock.start()
    for t, odo in pose_stream(traj, tick_ns, rate_hz):
        if t > clock.now:
            clock.advance_to(t)
        bus.publish_msg(POSE_TOPIC, odo, t)
    return rec.write(out_path)


@dataclass
class SessionResult:
    bag: Path
    counts: dict   # topic -> record count


class Session:
    """All nodes of one session wired to a shared bus."""

    def __init__(self, cfg: SessionConfig, scene=None):
        self.cfg = cfg
        self.asset, self.rtmesh = scene if scene is not None else build_scene(cfg)
        self.suite: SensorSuite = cfg.suite()
        self.clock = SimClock(self._publish_clock)
        self.bus = Bus(self.clock)
        self.recorder = bag_record(self.bus)
        self.tree = FrameTree(WORLD, extrapolation_slack_ns=cfg.tick_ns())
        self.sensing_bvh = Bvh(self.asset.mesh)
        self.tracer = RayTracer(self.rtmesh, cfg.rt())
        self.array = cfg.array()
        self.ofdm = cfg.ofdm()
        self.bler = cfg.bler()
        self.codebook = dft_codebook(self.array)
        seed = cfg["session.seed"]
        self.rngs = {name: sensor_rng(seed, name) for name in ("gnss", "imu")}
        rates = self.suite.rates_hz
        self.sched = {name: _Schedule(rates[name]) for name in ("gnss", "imu", "depth", "semantic", "lidar")}
        self.sched["channel"] = _Schedule(cfg["link.rate_hz"])
        self._poses = self.bus.subscribe(POSE_TOPIC)
        self._prev_twist = None
        self._uav_registered = False

    # -- publishing helpers ------------------------------------------------
    def _publish_clock(self, t: int):
        self.bus.publish_msg(CLOCK_TOPIC, Clock(t), t)

    def _publish_tf(self, tfs, t):
        for tf in tfs:
            self.tree.set_transform(tf)
        self.bus.publish_msg(TF_TOPIC, TFMessage(tuple(tfs)), t)

    def start(self, t0: int):
        if t0 > 0:
            self.clock.advance_to(t0, publish=False)
        self.clock.start()
        self._publish_tf([
            StampedTransform(t0, WORLD, BS, self.cfg.bs_pose(), True),
            StampedTransform(t0, BS, BS_ARRAY, self.cfg.array_mount(), True),
            StampedTransform(t0, BS, BS_CAMERA, Pose(), True),
        ], t0)

    # -- node callbacks ----------------------------------------------------
    def spin(self):
        for env in self._poses.drain():
            self.on_pose(env.stamp, decode(env.schema, env.payload))

    def on_pose(self, t: int, odo: Odometry):
        tfs = [StampedTransform(t, WORLD, UAV, odo.pose)]
        if not self._uav_registered:
            for name, mount in sorted(self.suite.mounts.items()):
                tfs.append(StampedTransform(t, UAV, f"{UAV}/{name}", mount, True))
            self._uav_registered = True
        self._publish_tf(tfs, t)

        prev, self._prev_twist = self._prev_twist, (t, odo.twist)
        if self.sched["gnss"].due(t):
            fix = sample_gnss(odo.pose, self.suite.gnss_sigma, self.rngs["gnss"], f"{UAV}/gnss")
            self.bus.publish_msg(GNSS_TOPIC, fix, t)
        if self.sched["imu"].due(t):
            accel = np.zeros(3)
            if prev is not None and t > prev[0]:
                accel = (odo.twist.linear - prev[1].linear) / ((t - prev[0]) / NS_PER_S)
            imu = sample_imu(odo.pose, odo.twist, accel, self.suite.accel_sigma, self.suite.gyro_sigma,
                             self.rngs["imu"], f"{UAV}/imu")
            self.bus.publish_msg(IMU_TOPIC, imu, t)
        for mode, topic in SENSOR_TOPICS.items():
            if self.sched[mode].due(t):
                frame = f"{UAV}/{'lidar' if mode == 'lidar' else 'camera'}"
                pose = self.tree.lookup(WORLD, frame, t)
                self.bus.publish_msg(topic, sensor_messages(self.sensing_bvh, pose, mode, frame, self.suite), t)
        if self.sched["channel"].due(t):
            self.on_channel(t, odo)

    def on_channel(self, t: int, odo: Odometry):
        tx = self.tree.lookup(WORLD, BS_ARRAY, t)
        paths = self.tracer.trace(tx.translation, odo.pose.translation[None], np.zeros(3), odo.twist.linear)[0]
        cir = assemble_cir(paths, t, BS, UAV, BS_ARRAY)
        self.bus.publish_msg(CIR_TOPIC, cir, t)
        H = cir_to_cfr(paths, self.array, self.ofdm, tx.rotation)
        kpi = evaluate_link(H, self.codebook, self.ofdm, self.cfg["link.tx_power_dbm"], bler=self.bler,
                            stamp=t, tx_id=BS, rx_id=UAV, frame_id=BS_ARRAY)
        self.bus.publish_msg(KPI_TOPIC, kpi, t)

    # -- drivers -----------------------------------------------------------
    def run_online(self, traj: Trajectory):
        tick = self.cfg.tick_ns()
        self.start(traj.start)
        for t, odo in pose_stream(traj, tick, self.suite.rates_hz["pose"]):
            if t > self.clock.now:
                self.clock.advance_to(t)
            self.bus.publish_msg(POSE_TOPIC, odo, t)
            self.spin()

    def run_replay(self, bag_path):
        """Drive the session from the pose records of a bag; stops at the bag end."""
        reader = BagReader(bag_path)
        started = False
        n = 0
        for env in reader:
            if env.topic != POSE_TOPIC:
                continue
            if not started:
                self.start(env.stamp)
                started = True
            if env.stamp > self.clock.now:
                self.clock.advance_to(env.stamp)
            self.bus.republish(env)
            self.spin()
            n += 1
        if not n:
            raise SessionError(f"{bag_path}: no {POSE_TOPIC} records to replay")

    def write(self, path) -> Path:
        return self.recorder.write(path)


def run_session(cfg: SessionConfig, mode: str = "online", bag=None, out=None, scene=None) -> SessionResult:
    """Run one session and write its bag (default ``<output_dir>/session.bag``)."""
    if mode not in ("online", "replay"):
        raise SessionError(f"unknown session mode {mode!r}")
    out = Path(out) if out is not None else Path(cfg["session.output_dir"]) / SESSION_BAG
    sess = Session(cfg, scene)
    if mode == "online":
        if cfg["session.trajectory"] is None:
            raise ConfigError(f"{cfg.source}: online mode needs 'session.trajectory'")
        sess.run_online(load_trajectory(cfg["session.trajectory"], UAV))
    else:
        if bag is None:
            raise SessionError("replay mode needs a trajectory bag")
        if not Path(bag).is_file():
            raise SessionError(f"trajectory bag not found: {bag}")
        sess.run_replay(bag)
    out.parent.mkdir(parents=True, exist_ok=True)
    path = sess.write(out)
    counts = {t: c for t, (_, c) in bag_inspect(path).items()}
    log.info("session bag %s: %s", path, ", ".join(f"{t}={c}" for t, c in counts.items()))
    return SessionResult(path, counts)
