"""
Session configuration: a flat ``section.key = value`` text file.

Blank lines and ``#`` comments are ignored. Lists are comma separated.
Relative paths resolve against the directory of the config file. Units are
given in the key table below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ckm import GridSpec, LinkSetup
from .geometry import Pose, quat_from_rpy
from .linksys import ArrayConfig, BlerCurve, OfdmConfig
from .raytracer import RtConfig
from .scene import SimplifyConfig
from .sensing import CameraIntrinsics, LidarPattern, SensorSuite


class ConfigError(ValueError):
    pass


REQUIRED = object()


@dataclass(frozen=True)
class Key:
    kind: str                 # float | int | str | path | vec3 | floats | camera
    default: object = REQUIRED
    units: str = ""


KEYS = {
    "scene.footprints": Key("path"),
    "scene.visual_cell": Key("float", 0.0, "m"),
    "scene.size_threshold": Key("float", 1.0, "m^2"),
    "scene.ratio": Key("float", 0.1),
    "scene.sharp_angle_deg": Key("float", 40.0, "deg"),

    "session.trajectory": Key("path", None),
    "session.tick_ms": Key("float", 10.0, "ms"),
    "session.seed": Key("int", 0),
    "session.output_dir": Key("str", "isacsim_out"),

    "sensors.rate_pose_hz": Key("float", 100.0, "Hz"),
    "sensors.rate_gnss_hz": Key("float", 10.0, "Hz"),
    "sensors.rate_imu_hz": Key("float", 100.0, "Hz"),
    "sensors.rate_depth_hz": Key("float", 5.0, "Hz"),
    "sensors.rate_semantic_hz": Key("float", 5.0, "Hz"),
    "sensors.rate_lidar_hz": Key("float", 5.0, "Hz"),
    "sensors.gnss_sigma_m": Key("floats", (0.0,), "m"),
    "sensors.accel_sigma": Key("float", 0.0, "m/s^2"),
    "sensors.gyro_sigma": Key("float", 0.0, "rad/s"),
    "sensors.camera": Key("camera", (64, 48, 50.0, 50.0), "px"),
    "sensors.lidar_azimuths": Key("int", 360),
    "sensors.lidar_elevations_deg": Key("floats", tuple(np.linspace(-15.0, 15.0, 16)), "deg"),
    "sensors.lidar_range_m": Key("float", 100.0, "m"),

    "bs.position": Key("vec3", REQUIRED, "m"),
    "bs.rpy_deg": Key("vec3", (0.0, 0.0, 0.0), "deg"),
    "bs.array_rpy_deg": Key("vec3", (0.0, 90.0, 0.0), "deg"),
    "bs.camera": Key("camera", (320, 240, 200.0, 200.0), "px"),

    "array.n_x": Key("int", 8),
    "array.n_y": Key("int", 8),
    "array.spacing": Key("float", 0.5, "wavelengths"),

    "rt.carrier_hz": Key("float", REQUIRED, "Hz"),
    "rt.max_order": Key("int", 2),

    "link.tx_power_dbm": Key("float", 30.0, "dBm"),
    "link.noise_figure_db": Key("float", 7.0, "dB"),
    "link.temperature_k": Key("float", 290.0, "K"),
    "link.rate_hz": Key("float", 10.0, "Hz"),
    "ofdm.n_subcarriers": Key("int", 64),
    "ofdm.spacing_hz": Key("float", 30e3, "Hz"),
    "bler.threshold_db": Key("float", 5.0, "dB"),
    "bler.slope_per_db": Key("float", 1.0, "1/dB"),

    "grid.x0": Key("float", -64.0, "m"),
    "grid.y0": Key("float", -64.0, "m"),
    "grid.n_x": Key("int", 64),
    "grid.n_y": Key("int", 64),
    "grid.cell": Key("float", 2.0, "m"),
    "grid.rx_height": Key("float", 1.5, "m"),
    "ckm.workers": Key("int", 1),

    "beampred.slop_ms": Key("float", 5.0, "ms"),
    "beampred.k": Key("int", 5),
    "beampred.train_fraction": Key("float", 0.8),
    "beampred.seed": Key("int", 0),
}


def _numbers(raw: str) -> list[float]:
    return [float(x) for x in raw.split(",")]


def _convert(kind: str, raw: str, base_dir: Path):
    if kind == "float":
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    if kind == "int":
        return int(raw)
    if kind == "str":
        return raw
    if kind == "path":
        return (base_dir / raw).resolve()
    if kind == "vec3":
        v = _numbers(raw)
        if len(v) != 3:
            raise ValueError("expected 3 comma-separated numbers")
        return tuple(v)
    if kind == "floats":
        return tuple(_numbers(raw))
    if kind == "camera":
        v = _numbers(raw)
        if len(v) != 4 or v[0] != int(v[0]) or v[1] != int(v[1]):
            raise ValueError("expected width, height, fx, fy")
        return (int(v[0]), int(v[1]), v[2], v[3])
    raise AssertionError(kind)


class SessionConfig:
    """Parsed configuration; ``cfg["rt.carrier_hz"]`` gives typed values."""

    def __init__(self, values: dict, source: str = "<string>"):
        self.values = values
        self.source = source

    def __getitem__(self, key: str):
        return self.values[key]

    # builders for the module-level config objects
    def rt(self) -> RtConfig:
        return RtConfig(self["rt.carrier_hz"], self["rt.max_order"], self["link.tx_power_dbm"])

    def array(self) -> ArrayConfig:
        return ArrayConfig(self["array.n_x"], self["array.n_y"], self["array.spacing"], self.array_mount())

    def ofdm(self) -> OfdmConfig:
        return OfdmConfig(self["ofdm.n_subcarriers"], self["ofdm.spacing_hz"],
                          self["link.noise_figure_db"], self["link.temperature_k"])

    def bler(self) -> BlerCurve:
        return BlerCurve(self["bler.threshold_db"], self["bler.slope_per_db"])

    def link_setup(self) -> LinkSetup:
        return LinkSetup(self.rt(), self.array(), self.ofdm(), self.bler())

    def grid(self) -> GridSpec:
        return GridSpec(self["grid.x0"], self["grid.y0"], self["grid.n_x"], self["grid.n_y"],
                        self["grid.cell"], self["grid.rx_height"])

    def simplify(self) -> SimplifyConfig:
        return SimplifyConfig(self["scene.size_threshold"], self["scene.ratio"], self["scene.sharp_angle_deg"])

    def bs_pose(self) -> Pose:
        return Pose(self["bs.position"], quat_from_rpy(*np.deg2rad(self["bs.rpy_deg"])))

    def array_mount(self) -> Pose:
        return Pose([0.0, 0.0, 0.0], quat_from_rpy(*np.deg2rad(self["bs.array_rpy_deg"])))

    def bs_camera(self) -> CameraIntrinsics:
        return CameraIntrinsics(*self["bs.camera"])

    def suite(self) -> SensorSuite:
        sigma = self["sensors.gnss_sigma_m"]
        if len(sigma) not in (1, 3):
            raise ConfigError("sensors.gnss_sigma_m: expected 1 or 3 values")
        rates = {n: self[f"sensors.rate_{n}_hz"] for n in ("pose", "gnss", "imu", "depth", "semantic", "lidar")}
        lidar = LidarPattern(self["sensors.lidar_azimuths"],
                             tuple(np.deg2rad(self["sensors.lidar_elevations_deg"])), self["sensors.lidar_range_m"])
        try:
            return SensorSuite(CameraIntrinsics(*self["sensors.camera"]), lidar,
                               tuple(np.broadcast_to(sigma, 3).tolist()),
                               self["sensors.accel_sigma"], self["sensors.gyro_sigma"], rates)
        except ValueError as exc:
            raise ConfigError(f"sensors: {exc}") from None

    def tick_ns(self) -> int:
        return int(round(self["session.tick_ms"] * 1e6))


def parse_config(text: str, source: str = "<string>", base_dir=None) -> SessionConfig:
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    values: dict = {}
    lines: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in lines:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {lines[key]})")
        if not raw:
            raise ConfigError(f"{source}:{lineno}: empty value for {key!r}")
        try:
            values[key] = _convert(KEYS[key].kind, raw, base)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
        lines[key] = lineno
    missing = [k for k, spec in KEYS.items() if k not in values and spec.default is REQUIRED]
    if missing:
        raise ConfigError(f"{source}: missing required key(s) {', '.join(map(repr, missing))}")
    for key, spec in KEYS.items():
        values.setdefault(key, spec.default)
    for key, spec in KEYS.items():
        if spec.kind == "path" and values[key] is not None and not Path(values[key]).is_file():
            raise ConfigError(f"{source}:{lines[key]}: {key} refers to a missing file: {values[key]}")
    return SessionConfig(values, source)


def load_config(path, seed: int | None = None) -> SessionConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text, str(path), path.parent)
    if seed is not None:
        cfg.values["session.seed"] = int(seed)
    return cfg
