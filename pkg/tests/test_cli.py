import re
import subprocess
import sys

import pytest

from isacsim.cli import main
from isacsim.demo import CITY_FOOTPRINTS, DEMO_CONFIG, DEMO_TRAJECTORY, DEMO_TRAJECTORY_BAG, data_dir

CFG = str(data_dir() / DEMO_CONFIG)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_scene_simplify_reports_counts(capsys):
    code, out, _ = run(capsys, "scene", "simplify", CFG)
    assert code == 0
    before = int(re.search(r"before:\s+(\d+)", out).group(1))
    after = int(re.search(r"after:\s+(\d+)", out).group(1))
    assert before >= 10 * after


def test_scene_simplify_footprints_and_build(capsys, tmp_path):
    code, out, _ = run(capsys, "scene", "simplify", "--footprints", str(data_dir() / CITY_FOOTPRINTS),
                       "--visual-cell", "4", "--ratio", "0.5")
    assert code == 0 and "reduction" in out
    code, out, _ = run(capsys, "scene", "build", CFG, "--out", str(tmp_path))
    assert code == 0
    assert (tmp_path / "scene_asset.simmesh").is_file() and (tmp_path / "rt_mesh.simmesh").is_file()


def test_bag_inspect_lists_session_topics(capsys, online_bag):
    code, out, _ = run(capsys, "bag", "inspect", str(online_bag))
    assert code == 0
    for topic in ("/gnss", "/channel/cir", "/channel/kpi", "/tf", "/clock"):
        assert re.search(rf"^{re.escape(topic)}\s+\d+\s", out, re.M), topic


def test_bag_replay_rerecords_identically(capsys, online_bag, tmp_path):
    code, out, _ = run(capsys, "bag", "replay", str(online_bag), "--out", str(tmp_path / "again.bag"))
    assert code == 0
    assert (tmp_path / "again.bag").read_bytes() == online_bag.read_bytes()


def test_bag_from_trajectory_matches_bundled(capsys, tmp_path):
    out_bag = tmp_path / "traj.bag"
    code, _, _ = run(capsys, "bag", "from-trajectory", str(data_dir() / DEMO_TRAJECTORY), str(out_bag))
    assert code == 0
    assert out_bag.read_bytes() == (data_dir() / DEMO_TRAJECTORY_BAG).read_bytes()


def test_run_replay_and_beampred(capsys, tmp_path):
    bag = tmp_path / "s.bag"
    code, out, _ = run(capsys, "run", CFG, "--mode", "replay", "--bag", str(data_dir() / DEMO_TRAJECTORY_BAG),
                       "--out", str(bag))
    assert code == 0 and bag.is_file() and "/channel/kpi" in out
    code, out, _ = run(capsys, "beampred", "eval", CFG, "--bag", str(bag), "--export", str(tmp_path / "d.txt"))
    assert code == 0 and "top-1" in out
    lines = (tmp_path / "d.txt").read_text().splitlines()
    assert len(lines) == 201 and all(len(l.split()) in (5, 7) for l in lines)


def test_ckm_generate_manifest(capsys, tmp_path):
    code, out, _ = run(capsys, "ckm", "generate", CFG, "--out", str(tmp_path))
    assert code == 0
    assert len(list(tmp_path.glob("*.ckm"))) == 7
    assert len(list(tmp_path.glob("*.ppm"))) == 7
    code, out, _ = run(capsys, "beampred", "eval", CFG, "--ckm", str(tmp_path))
    assert code == 0 and "top-5" in out


@pytest.mark.parametrize("argv", [
    ("bag", "inspect", "/nonexistent.bag"),
    ("run", "/nonexistent.cfg"),
    ("run", CFG, "--mode", "replay"),
    ("beampred", "eval", CFG),
])
def test_errors_exit_nonzero(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code != 0 and err.startswith("isacsim: error:")


def test_missing_carrier_via_cli(capsys, tmp_path):
    text = (data_dir() / DEMO_CONFIG).read_text()
    text = "\n".join(l for l in text.splitlines() if not l.startswith("rt.carrier_hz"))
    cfg = tmp_path / "c.cfg"
    cfg.write_text(text.replace("demo_footprints.json", str(data_dir() / "demo_footprints.json"))
                       .replace("demo_trajectory.txt", str(data_dir() / DEMO_TRAJECTORY)))
    code, _, err = run(capsys, "run", str(cfg))
    assert code == 1 and "rt.carrier_hz" in err


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "isacsim.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "scene" in res.stdout
    res = subprocess.run([sys.executable, "-m", "isacsim.cli"], capture_output=True, text=True)
    assert res.returncode != 0
