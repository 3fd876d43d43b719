import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isacsim.geometry import quat_from_rpy
from isacsim.linksys import (
    K_B, ArrayConfig, BlerCurve, LinkError, LinkKpi, OfdmConfig, best_beam_gain_db, cir_to_cfr,
    dft_codebook, evaluate_link, steering_vector, to_array_frame,
)
from isacsim.messages import decode
from isacsim.raytracer import PropPath

ARR = ArrayConfig(8, 8)


def path(amp, delay, dep=(0, 0, 1.0)):
    dep = np.asarray(dep, float)
    return PropPath(0, np.zeros((2, 3)), (), delay * 3e8, delay, complex(amp), dep, dep)


def loop_beam_gain(array, kx, ky, u):
    """Explicit double sum over elements for one DFT beam."""
    acc = 0j
    for ix in range(array.n_x):
        for iy in range(array.n_y):
            w = np.exp(2j * np.pi * (ix * kx / array.n_x + iy * ky / array.n_y))
            v = np.exp(2j * np.pi * array.spacing * (ix * u[0] + iy * u[1]))
            acc += np.conj(w) * v
    return abs(acc) ** 2 / array.size ** 2


def test_broadside_and_norm():
    v = steering_vector(ARR, [0, 0, 1])
    np.testing.assert_allclose(v, np.full(64, 1 / 8))
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        assert np.linalg.norm(steering_vector(ARR, d)) == pytest.approx(1.0, abs=1e-12)


def test_beam_sweep_matches_loop_oracle():
    W = dft_codebook(ARR)
    rng = np.random.default_rng(1)
    for _ in range(5):
        d = rng.normal(size=3)
        d[2] = abs(d[2])
        d /= np.linalg.norm(d)
        gains = np.abs(np.conj(W) @ steering_vector(ARR, d)) ** 2
        ref = np.array([loop_beam_gain(ARR, b // 8, b % 8, d) for b in range(64)])
        np.testing.assert_allclose(gains, ref, atol=1e-12)
        assert int(np.argmax(gains)) == int(np.argmax(ref))


def test_grid_direction_hits_matching_beam():
    # 0.5 * u_x = 2/8 and 0.5 * u_y = 1/8 place the direction on beam (2, 1)
    ux, uy = 0.5, 0.25
    d = np.array([ux, uy, math.sqrt(1 - ux ** 2 - uy ** 2)])
    gains = np.abs(np.conj(dft_codebook(ARR)) @ steering_vector(ARR, d)) ** 2
    assert int(np.argmax(gains)) == 2 * 8 + 1
    assert gains.max() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2 ** 31))
def test_codebook_parseval(nx, ny, seed):
    arr = ArrayConfig(nx, ny)
    W = dft_codebook(arr)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=arr.size) + 1j * rng.normal(size=arr.size)
    v /= np.linalg.norm(v)
    assert np.sum(np.abs(np.conj(W) @ v) ** 2) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(np.linalg.norm(W, axis=1), 1.0)


def test_cfr_single_path():
    a = 3e-5 * np.exp(0.4j)
    H = cir_to_cfr([path(a, 1e-7)], ArrayConfig(1, 1), OfdmConfig(1, 30e3))
    assert H.shape == (1, 1)
    assert H[0, 0] == pytest.approx(a, abs=1e-18)
    H = cir_to_cfr([path(a, 3.3e-7, (0.3, 0.2, math.sqrt(1 - 0.13)))], ARR, OfdmConfig(64, 30e3))
    np.testing.assert_allclose(np.abs(H), abs(a), rtol=1e-12)
    assert not cir_to_cfr([], ARR, OfdmConfig(4)).any()


def test_cfr_two_path_period():
    ofdm = OfdmConfig(300, 100e3)
    H = cir_to_cfr([path(1e-5, 0.0), path(0.5e-5, 100e-9)], ArrayConfig(1, 1), ofdm)[0]
    p = np.abs(H) ** 2
    np.testing.assert_allclose(p[:200], p[100:300], rtol=1e-9)
    assert p.max() / p.min() > 5


def test_cfr_uses_array_orientation():
    # array pitched 90 degrees: boresight points along world +x
    q = quat_from_rpy(0, math.pi / 2, 0)
    np.testing.assert_allclose(to_array_frame([1.0, 0, 0], q), [0, 0, 1], atol=1e-12)
    H = cir_to_cfr([path(1e-5, 1e-7, (1.0, 0, 0))], ARR, OfdmConfig(4), q)
    kpi = evaluate_link(H, dft_codebook(ARR), OfdmConfig(4), 30.0)
    assert kpi.best_beam == 0


def test_boresight_los_selects_zero_slope_beam():
    ofdm = OfdmConfig(64, 30e3)
    W = dft_codebook(ARR)
    H = cir_to_cfr([path(1e-6, 3e-7)], ARR, ofdm)
    kpis = [evaluate_link(H, W, ofdm, p) for p in np.arange(-30, 31, 5.0)]
    assert {k.best_beam for k in kpis} == {0}
    k = kpis[-1]
    assert k.beam_sinr_db[0] > np.max(np.delete(k.beam_sinr_db, 0))


def test_outage_contract():
    ofdm = OfdmConfig(16)
    kpi = evaluate_link(np.zeros((64, 16)), dft_codebook(ARR), ofdm, 30.0)
    assert kpi.rate == 0.0 and kpi.best_beam == 0
    assert kpi.bler == pytest.approx(1.0, abs=1e-12)
    assert kpi.sinr_eff_db == -np.inf


def test_power_doubling_adds_3db():
    ofdm = OfdmConfig(32)
    W = dft_codebook(ARR)
    H = cir_to_cfr([path(1e-7, 2e-7, (0.1, -0.2, math.sqrt(0.95)))], ARR, ofdm)
    a = evaluate_link(H, W, ofdm, 20.0)
    b = evaluate_link(H, W, ofdm, 20.0 + 10 * math.log10(2))
    assert b.sinr_eff_db - a.sinr_eff_db == pytest.approx(10 * math.log10(2), abs=1e-9)
    assert a.best_beam == b.best_beam


def test_single_element_link_budget():
    ofdm = OfdmConfig(1, 15e3, 5.0)
    a = 2.5e-6
    H = cir_to_cfr([path(a, 1e-7)], ArrayConfig(1, 1), ofdm)
    kpi = evaluate_link(H, dft_codebook(ArrayConfig(1, 1)), ofdm, 23.0)
    n0 = K_B * 290 * 15e3 * 10 ** 0.5
    expect = 10 ** ((23 - 30) / 10) * a ** 2 / n0
    assert 10 ** (kpi.sinr_eff_db / 10) == pytest.approx(expect, rel=1e-9)


def test_interference_lowers_sinr():
    ofdm = OfdmConfig(8)
    W = dft_codebook(ARR)
    H = cir_to_cfr([path(1e-6, 1e-7)], ARR, ofdm)
    Hi = cir_to_cfr([path(3e-7, 2e-7, (0.2, 0.1, math.sqrt(0.95)))], ARR, ofdm)
    clean = evaluate_link(H, W, ofdm, 30.0)
    dirty = evaluate_link(H, W, ofdm, 30.0, interferers=[(Hi, 0)])
    assert dirty.sinr_eff_db < clean.sinr_eff_db
    s = 10 ** ((30 - 30) / 10) / 8 * np.abs(np.conj(W[0]) @ H) ** 2
    i = 10 ** ((30 - 30) / 10) / 8 * np.abs(np.conj(W[0]) @ Hi) ** 2
    ref = 2 ** np.mean(np.log2(1 + s / (ofdm.noise_w + i))) - 1
    assert 10 ** (dirty.beam_sinr_db[0] / 10) == pytest.approx(ref, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-60, 60), st.floats(0.01, 100))
def test_argmax_invariant_under_scaling_flat_channel(seed, p_dbm, h_scale):
    # with one subcarrier the effective SINR is monotone in the beam power
    rng = np.random.default_rng(seed)
    ofdm = OfdmConfig(1)
    arr = ArrayConfig(4, 4)
    W = dft_codebook(arr)
    H = rng.normal(size=(16, 1)) + 1j * rng.normal(size=(16, 1))
    a = evaluate_link(H * 1e-6, W, ofdm, 0.0)
    b = evaluate_link(H * 1e-6 * h_scale, W, ofdm, p_dbm)
    assert a.best_beam == b.best_beam


def test_rate_monotone_in_power():
    rng = np.random.default_rng(9)
    ofdm = OfdmConfig(16)
    H = (rng.normal(size=(64, 16)) + 1j * rng.normal(size=(64, 16))) * 1e-6
    W = dft_codebook(ARR)
    rates = [evaluate_link(H, W, ofdm, p).rate for p in np.linspace(-40, 40, 17)]
    assert all(b >= a for a, b in zip(rates, rates[1:]))


def test_bler_curve():
    c = BlerCurve()
    assert c(5.0) == pytest.approx(0.5)
    assert c(50.0) < 1e-15
    assert c(-np.inf) == 1.0
    assert BlerCurve(0.0, 2.0)(1.0) == pytest.approx(1 / (1 + math.exp(2)))


def test_errors_and_codec():
    with pytest.raises(LinkError):
        evaluate_link(np.zeros((4, 1)), np.zeros((0, 4)), OfdmConfig(1), 0.0)
    with pytest.raises(LinkError):
        ArrayConfig(0, 4)
    ofdm = OfdmConfig(4)
    kpi = evaluate_link(cir_to_cfr([path(1e-6, 1e-7)], ARR, ofdm), dft_codebook(ARR), ofdm, 30.0,
                        stamp=77, rx_id="uav")
    back = decode(LinkKpi.SCHEMA, kpi.encode())
    assert back == kpi and back.stamp == 77 and back.frame_id == "bs/array"


def test_best_beam_gain_boresight():
    ofdm = OfdmConfig(8)
    p = [path(1e-6, 1e-7)]
    H = cir_to_cfr(p, ARR, ofdm)
    assert best_beam_gain_db(H, dft_codebook(ARR), 0, p) == pytest.approx(10 * math.log10(64), abs=1e-9)
