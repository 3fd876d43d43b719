import math

import numpy as np
import pytest

from isacsim.ckm import (
    LAYERS, CkmError, GridSpec, LinkSetup, angular_spread, delay_spread, encode_heatmap,
    evaluate_cell, generate_ckm, load_ckm, lookup, read_ppm, read_raster, reduce_cell, write_outputs,
)
from isacsim.geometry import Pose, TriangleMesh
from isacsim.linksys import OfdmConfig, dft_codebook
from isacsim.raytracer import C0, PropPath, RayTracer, RtConfig
from isacsim.scene import RtMesh

from oracles import circular_spread
from scenes import box, build, ground

F = 3.5e9


def mk_path(amp, delay, az=0.0):
    arr = np.array([math.cos(az), math.sin(az), 0.0])
    return PropPath(0, np.zeros((2, 3)), (), delay * C0, delay, complex(amp), arr, arr)


class _Kpi:
    sinr_eff_db, rate, best_beam = 12.0, 3.5, 7


def test_reduce_single_and_two_path():
    v = reduce_cell([mk_path(1e-4, 1e-7, 0.3)], _Kpi, 30.0, 18.0)
    assert v["rms_delay_spread_s"] == 0.0
    assert v["angular_spread_rad"] == 0.0
    assert v["path_loss_db"] == pytest.approx(80.0)
    assert v["rx_power_dbm"] == pytest.approx(30 - 80 + 18)
    assert v["best_beam"] == 7.0
    v = reduce_cell([mk_path(1e-4, 0.0), mk_path(1e-4, 100e-9)], _Kpi, 30.0, 0.0)
    assert v["rms_delay_spread_s"] == pytest.approx(50e-9, rel=1e-12)
    empty = reduce_cell([], _Kpi, 30.0, 0.0)
    assert all(math.isnan(x) for x in empty.values())


def test_spreads_match_moment_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = rng.uniform(0.01, 1, 5)
        tau = rng.uniform(0, 1e-6, 5)
        az = rng.uniform(-np.pi, np.pi, 5)
        w = p / p.sum()
        direct = math.sqrt(np.sum(w * tau ** 2) - np.sum(w * tau) ** 2)
        assert delay_spread(p, tau) == pytest.approx(direct, abs=1e-12)
        assert angular_spread(p, az) == pytest.approx(circular_spread(p, az), abs=1e-12)


def empty_mesh():
    return RtMesh(TriangleMesh.empty(), ())


def test_single_cell_empty_scene_is_friis():
    grid = GridSpec(40.0, 30.0, 1, 1, 2.0, 1.5)
    ck = generate_ckm(empty_mesh(), Pose([0, 0, 25]), grid, LinkSetup(RtConfig(F, 2), ofdm=OfdmConfig(16)))
    d = math.dist([0, 0, 25], [41, 31, 1.5])
    expect = 20 * math.log10(4 * math.pi * d * F / C0)
    assert ck.layers["path_loss_db"][0, 0] == pytest.approx(expect, abs=0.01)
    assert set(ck.layers) == {n for n, _ in LAYERS}


def test_shadowed_cell_is_nan():
    scene = build([box(10, -20, 12, 20, 40)])
    ck = generate_ckm(scene, Pose([0, 0, 10]), GridSpec(20, -1, 1, 1, 2.0), LinkSetup(RtConfig(F, 0), ofdm=OfdmConfig(4)))
    assert all(math.isnan(a[0, 0]) for a in ck.layers.values())


def test_tx_inside_geometry_rejected():
    scene = build([box(-5, -5, 5, 5, 20)])
    with pytest.raises(CkmError):
        generate_ckm(scene, Pose([0, 0, 5]), GridSpec(20, 0, 2, 2, 1.0), LinkSetup(RtConfig(F, 1)))


def scene_and_setup():
    scene = build([ground(100), box(-20, 5, -5, 20, 15, "a"), box(5, -25, 20, -8, 12, "b")])
    return scene, LinkSetup(RtConfig(F, 2), ofdm=OfdmConfig(16))


def test_determinism_across_workers(tmp_path):
    scene, setup = scene_and_setup()
    grid = GridSpec(-32, -32, 16, 16, 4.0, 1.5)
    a = generate_ckm(scene, Pose([0, 0, 20]), grid, setup, workers=1)
    b = generate_ckm(scene, Pose([0, 0, 20]), grid, setup, workers=3)
    assert a.digest == b.digest
    fa = write_outputs(a, tmp_path / "a")
    fb = write_outputs(b, tmp_path / "b")
    assert [p.name for p in fa] == [p.name for p in fb]
    for p, q in zip(fa, fb):
        assert p.read_bytes() == q.read_bytes()
    assert len([p for p in fa if p.suffix == ".ckm"]) == 7
    assert len([p for p in fa if p.suffix == ".ppm"]) == 7
    # a standalone evaluation of any cell reproduces its stored best beam
    tracer = RayTracer(scene, setup.rt)
    W = dft_codebook(setup.array)
    centers = grid.centers()
    for i, j in [(0, 0), (5, 9), (15, 15), (8, 3)]:
        paths = tracer.trace([0, 0, 20], centers[i, j][None])[0]
        _, vals = evaluate_cell(paths, setup, W, Pose().rotation)
        assert same(a.layers["best_beam"][i, j], vals["best_beam"])


def same(a, b):
    return (math.isnan(a) and math.isnan(b)) or a == b


def test_raster_round_trip_and_lookup(tmp_path):
    scene, setup = scene_and_setup()
    grid = GridSpec(-10, -10, 5, 4, 5.0, 2.0)
    ck = generate_ckm(scene, Pose([0, 0, 20]), grid, setup)
    write_outputs(ck, tmp_path)
    name, g, units, data = read_raster(tmp_path / "path_loss_db.ckm")
    assert (name, g, units) == ("path_loss_db", grid, "dB")
    assert np.array_equal(data, ck.layers["path_loss_db"].astype(np.float32), equal_nan=True)
    header = (tmp_path / "rate_bpshz.ckm").read_bytes().split(b"\n", 1)[0].decode()
    assert header == "CKM1 rate_bpshz 5 4 -10.0 -10.0 5.0 2.0 bit/s/Hz"
    back = load_ckm(tmp_path)
    assert back.digest == ck.digest
    c = grid.centers()[3, 2]
    vals = lookup(ck, c[0], c[1])
    for name, _ in LAYERS:
        assert same(vals[name], ck.layers[name][3, 2])
    # the upper boundary belongs to the last cell
    edge = lookup(ck, 15.0, 10.0)
    for name, _ in LAYERS:
        assert same(edge[name], ck.layers[name][4, 3])
    with pytest.raises(CkmError):
        lookup(ck, 15.01, 0)


def test_heatmap_constant_and_nodata(tmp_path):
    img = encode_heatmap(np.full((6, 4), 3.0))
    (tmp_path / "c.ppm").write_bytes(img)
    px = read_ppm(tmp_path / "c.ppm")
    assert px.shape == (4, 6, 3)
    assert (px == px[0, 0]).all() and px[0, 0].any()
    layer = np.array([[0.0, np.nan], [1.0, 2.0]])
    (tmp_path / "n.ppm").write_bytes(encode_heatmap(layer))
    px = read_ppm(tmp_path / "n.ppm")
    # cell (0, 1) has the largest y so it sits in the top row, first column
    assert (px[0, 0] == 0).all()
    assert not (px[1, 0] == 0).all()
    assert tuple(px[0, 1]) == (250, 235, 35)
