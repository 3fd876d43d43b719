"""Shared demo-session fixtures; each session is run once per test run."""

import pytest

from isacsim.config import load_config
from isacsim.demo import DEMO_CONFIG, DEMO_TRAJECTORY_BAG, data_dir
from isacsim.session import build_scene, run_session


@pytest.fixture(scope="session")
def demo_cfg():
    return load_config(data_dir() / DEMO_CONFIG)


@pytest.fixture(scope="session")
def demo_scene(demo_cfg):
    return build_scene(demo_cfg)


@pytest.fixture(scope="session")
def online_bag(demo_cfg, demo_scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("online") / "session.bag"
    return run_session(demo_cfg, "online", out=out, scene=demo_scene).bag


@pytest.fixture(scope="session")
def replay_bag(demo_cfg, demo_scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("replay") / "session.bag"
    return run_session(demo_cfg, "replay", bag=data_dir() / DEMO_TRAJECTORY_BAG, out=out, scene=demo_scene).bag


SUITE_START = {}


def pytest_sessionstart(session):
    import time
    SUITE_START["t"] = time.perf_counter()


def pytest_collection_modifyitems(session, config, items):
    # the acceptance file runs last so its suite-duration check sees every other test
    items.sort(key=lambda it: it.path.name == "test_acceptance.py")
