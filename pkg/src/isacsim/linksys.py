"""
OFDM link evaluation: planar-array response, DFT codebook, channel
frequency response from a CIR, per-beam SINR, effective SINR, BLER and rate.

Array frame: elements lie in the xy-plane on a regular grid, boresight is +z.
Element ``n = i_x * N_y + i_y`` sits at ``spacing * (i_x, i_y, 0)`` in
wavelengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .geometry import Pose, quat_conj, quat_rotate
from .messages import Reader, Writer, register

K_B = 1.380649e-23


class LinkError(ValueError):
    pass


@dataclass(frozen=True)
class ArrayConfig:
    n_x: int = 8
    n_y: int = 8
    spacing: float = 0.5         # wavelengths
    mount: Pose = field(default_factory=Pose)

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise LinkError("array needs at least one element per axis")
        if not self.spacing > 0:
            raise LinkError("element spacing must be positive")

    @property
    def size(self) -> int:
        return self.n_x * self.n_y

    def element_indices(self):
        n = np.arange(self.size)
        return n // self.n_y, n % self.n_y


@dataclass(frozen=True)
class OfdmConfig:
    n_subcarriers: int = 64
    spacing_hz: float = 30e3
    noise_figure_db: float = 7.0
    temperature_k: float = 290.0

    def __post_init__(self):
        if self.n_subcarriers < 1:
            raise LinkError("need at least one subcarrier")
        if not self.spacing_hz > 0:
            raise LinkError("subcarrier spacing must be positive")

    @property
    def noise_w(self) -> float:
        """Per-subcarrier noise power ``k_B T df 10^(NF/10)``."""
        return K_B * self.temperature_k * self.spacing_hz * 10 ** (self.noise_figure_db / 10)

    def offsets(self) -> np.ndarray:
        """Baseband-centred subcarrier indices ``k - (N_sc - 1)/2``."""
        return np.arange(self.n_subcarriers) - (self.n_subcarriers - 1) / 2.0


@dataclass(frozen=True)
class BlerCurve:
    threshold_db: float = 5.0
    slope_per_db: float = 1.0

    def __call__(self, sinr_db):
        return expit(-self.slope_per_db * (np.asarray(sinr_db, dtype=float) - self.threshold_db))


def steering_vector(array: ArrayConfig, direction) -> np.ndarray:
    """Unit-norm response for a unit ``direction`` given in the array frame."""
    u = np.asarray(direction, dtype=float)
    ix, iy = array.element_indices()
    phase = 2 * np.pi * array.spacing * (ix * u[0] + iy * u[1])
    return np.exp(1j * phase) / math.sqrt(array.size)


def steering_matrix(array: ArrayConfig, directions) -> np.ndarray:
    """Columns are steering vectors of ``directions`` (shape ``(P, 3)``)."""
    u = np.asarray(directions, dtype=float).reshape(-1, 3)
    ix, iy = array.element_indices()
    phase = 2 * np.pi * array.spacing * (np.outer(ix, u[:, 0]) + np.outer(iy, u[:, 1]))
    return np.exp(1j * phase) / math.sqrt(array.size)


def dft_codebook(array: ArrayConfig) -> np.ndarray:
    """Rows ``w_b`` with ``b = k_x * N_y + k_y``; the matrix is unitary."""
    ix, iy = array.element_indices()
    kx, ky = ix, iy   # beams share the element index layout
    phase = 2 * np.pi * (np.outer(kx, ix) / array.n_x + np.outer(ky, iy) / array.n_y)
    return np.exp(1j * phase) / math.sqrt(array.size)


def to_array_frame(directions, array_rotation) -> np.ndarray:
    """World directions expressed in an array whose world orientation is ``array_rotation``."""
    return quat_rotate(quat_conj(array_rotation), np.asarray(directions, dtype=float))


def cir_to_cfr(paths, array: ArrayConfig, ofdm: OfdmConfig, array_rotation=None) -> np.ndarray:
    """Per-element, per-subcarrier response ``H`` of shape ``(N, N_sc)``.

    ``paths`` is a :class:`~isacsim.raytracer.Cir` or a path sequence whose
    departure directions are in the world frame; ``array_rotation`` is the
    array's world orientation (identity when omitted).
    """
    paths = getattr(paths, "paths", paths)
    H = np.zeros((array.size, ofdm.n_subcarriers), dtype=complex)
    if not len(paths):
        return H
    dep = np.array([p.dir_dep for p in paths])
    if array_rotation is not None:
        dep = to_array_frame(dep, array_rotation)
    a = np.array([p.amplitude for p in paths])
    tau = np.array([p.delay for p in paths])
    V = steering_matrix(array, dep) * math.sqrt(array.size)           # (N, P)
    phase = np.exp(-2j * np.pi * ofdm.spacing_hz * np.outer(tau, ofdm.offsets()))  # (P, K)
    return V @ (a[:, None] * phase)


@register
@dataclass(frozen=True, eq=False)
class LinkKpi:
    SCHEMA = "isacsim/LinkKpi"
    frame_id: str
    stamp: int
    tx_id: str
    rx_id: str
    best_beam: int
    sinr_eff_db: float
    bler: float
    rate: float
    beam_sinr_db: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, LinkKpi):
            return NotImplemented
        return self.encode() == other.encode()

    __hash__ = None

    def encode(self) -> bytes:
        w = Writer()
        w.string(self.frame_id)
        w.u64(self.stamp)
        w.string(self.tx_id)
        w.string(self.rx_id)
        w.u16(self.best_beam)
        w.f64(self.sinr_eff_db)
        w.f64(self.bler)
        w.f64(self.rate)
        w.u32(len(self.beam_sinr_db))
        w.f64s(self.beam_sinr_db)
        return w.bytes()

    @classmethod
    def decode(cls, b: bytes) -> LinkKpi:
        r = Reader(b)
        head = (r.string(), r.u64(), r.string(), r.string(), r.u16(), r.f64(), r.f64(), r.f64())
        beams = r.f64s(r.u32())
        r.done()
        return cls(*head, beams)


def _db(x):
    with np.errstate(divide="ignore"):
        return 10 * np.log10(x)


def dbm_to_w(p_dbm: float) -> float:
    return 10 ** ((p_dbm - 30.0) / 10.0)


def beam_power(H, codebook) -> np.ndarray:
    """``|w_b^H H[:, k]|^2`` for every beam and subcarrier."""
    return np.abs(np.conj(codebook) @ H) ** 2


def evaluate_link(H, codebook, ofdm: OfdmConfig, tx_power_dbm: float, interferers=(),
                  bler: BlerCurve | None = None, stamp: int = 0, tx_id: str = "bs",
                  rx_id: str = "uav", frame_id: str = "bs/array") -> LinkKpi:
    """Evaluate every beam and pick the one with the highest effective SINR.

    ``interferers`` holds ``(H', beam)`` or ``(H', beam, p_dbm)`` tuples; the
    power defaults to ``tx_power_dbm``.
    """
    codebook = np.atleast_2d(codebook)
    if codebook.size == 0:
        raise LinkError("empty codebook")
    H = np.asarray(H, dtype=complex)
    if H.shape != (codebook.shape[1], ofdm.n_subcarriers):
        raise LinkError(f"H has shape {H.shape}, expected {(codebook.shape[1], ofdm.n_subcarriers)}")
    bler = bler or BlerCurve()
    p_sc = dbm_to_w(tx_power_dbm) / ofdm.n_subcarriers
    S = p_sc * beam_power(H, codebook)
    interference = np.zeros(ofdm.n_subcarriers)
    for item in interferers:
        Hi, beam = item[0], int(item[1])
        pi = dbm_to_w(item[2] if len(item) > 2 else tx_power_dbm) / ofdm.n_subcarriers
        interference += pi * np.abs(np.conj(codebook[beam]) @ np.asarray(Hi, dtype=complex)) ** 2
    sinr = S / (ofdm.noise_w + interference)
    se = np.log2(1.0 + sinr).mean(axis=1)
    eff = 2.0 ** se - 1.0
    best = int(np.argmax(eff))
    eff_db = float(_db(eff[best]))
    return LinkKpi(frame_id, int(stamp), tx_id, rx_id, best, eff_db, float(bler(eff_db)),
                   float(se[best]), _db(eff))


def best_beam_gain_db(H, codebook, beam: int, paths) -> float:
    """Array gain of ``beam`` relative to an isotropic element: mean_k |w^H H|^2 / sum |a|^2."""
    paths = getattr(paths, "paths", paths)
    total = sum(abs(p.amplitude) ** 2 for p in paths)
    if total == 0:
        return float("nan")
    g = np.mean(np.abs(np.conj(codebook[beam]) @ H) ** 2)
    return float(_db(g / total))
