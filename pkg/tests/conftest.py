"""Shared fixtures: the frozen evaluation scenario and small reusable scenes."""

import json
from pathlib import Path

import numpy as np
import pytest

from advsim.config import load_config, parse_config
from advsim.orchestrator import run_session

REPO_ROOT = Path(__file__).resolve().parent.parent
EVAL_CONFIG_PATH = REPO_ROOT / "configs" / "eval_scene.json"
SMOKE_CONFIG_PATH = REPO_ROOT / "configs" / "smoke.json"


@pytest.fixture(scope="session")
def eval_config():
    return load_config(EVAL_CONFIG_PATH)


@pytest.fixture(scope="session")
def eval_result(eval_config):
    """One full run of the evaluation scenario, frames kept in memory."""
    return run_session(eval_config, collect=True)


# one [PASS]/[FAIL] line per acceptance criterion, echoed after the test
# summary so they are visible without -s
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_config(**overrides):
    """A small two-vehicle scenario as a parsed config; overrides merge in."""
    base = {
        "duration_s": 1.0,
        "dt_s": 0.1,
        "seed": 3,
        "vehicles": [
            {"id": "ego", "route": [[0.0, 0.0], [60.0, 0.0]], "speed_mps": 5.0,
             "is_ego": True},
            {"id": "npc", "route": [[12.0, 2.0], [72.0, 2.0]], "speed_mps": 4.0,
             "dims": [4.5, 1.8, 2.2]},
        ],
        "sensor": {
            "channels": 6,
            "points_per_channel": 90,
            "range_m": 35.0,
            "vertical_fov_deg": [-12.0, -2.0],
            "mount_offset": [0.0, 0.0, 1.7],
            "range_noise_sigma_m": 0.01,
        },
        "comm": {"enabled": True, "cam_interval_s": 0.2},
        "detector": {
            "cell_m": 0.5,
            "sigma_m": 0.35,
            "x_range": [0.0, 40.0],
            "y_range": [-20.0, 20.0],
            "weight": 1.0,
            "bias": -6.5,
            "cutoff_sigmas": 4.0,
            "min_z_m": -2.4,
        },
    }
    base.update(overrides)
    return parse_config(json.dumps(base))


@pytest.fixture()
def small_config():
    return make_config()


@pytest.fixture(scope="session")
def small_frame():
    """One mid-run frame of the small scenario (cloud plus ground truth)."""
    result = run_session(make_config(), collect=True)
    return result.records["clean"][5]


def box_cloud(center, dims, step=0.25, jitter=None, rng=None):
    """Grid of points on the faces of an axis-aligned box, for hand scenes."""
    cx, cy, cz = center
    l, w, h = dims
    xs = np.arange(-l / 2, l / 2 + 1e-9, step)
    ys = np.arange(-w / 2, w / 2 + 1e-9, step)
    zs = np.arange(-h / 2, h / 2 + 1e-9, step)
    pts = []
    for z in zs:
        for y in ys:
            pts.append([cx - l / 2, cy + y, cz + z])
        for x in xs:
            pts.append([cx + x, cy - w / 2, cz + z])
    pts = np.asarray(pts, dtype=np.float64)
    if jitter:
        pts = pts + rng.uniform(-jitter, jitter, size=pts.shape)
    return pts
