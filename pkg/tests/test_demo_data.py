from isacsim.demo import (
    CITY_FOOTPRINTS, DEMO_CONFIG, DEMO_FOOTPRINTS, DEMO_TRAJECTORY, DEMO_TRAJECTORY_BAG, data_dir, write_bundled,
)
from isacsim.scene import extrude_footprints, load_footprints, simplify_mesh


def test_bundled_files_match_generators(tmp_path):
    fresh = write_bundled(tmp_path)
    for f in fresh:
        assert (data_dir() / f.name).read_bytes() == f.read_bytes(), f.name


def test_demo_scene_reduction():
    asset = extrude_footprints(load_footprints(data_dir() / DEMO_FOOTPRINTS), visual_cell=4.0)
    rt = simplify_mesh(asset)
    assert len(asset) >= 10 * len(rt)
    assert len(rt) <= 200
    assert {o.cls for o in rt.objects} == {"ground", "building"}


def test_all_bundled_names_exist():
    for name in (CITY_FOOTPRINTS, DEMO_CONFIG, DEMO_FOOTPRINTS, DEMO_TRAJECTORY, DEMO_TRAJECTORY_BAG):
        assert (data_dir() / name).is_file()
