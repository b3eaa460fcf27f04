"""Scenario JSON parsing, validation errors, and round trips."""

import json

import numpy as np
import pytest

from advsim.config import (
    ConfigError,
    ConfigSyntaxError,
    attack_params_from_dict,
    attack_params_to_dict,
    detector_from_dict,
    detector_to_dict,
    load_config,
    parse_config,
)
from advsim.detector import DetectorModel

from conftest import make_config

MINIMAL = {
    "duration_s": 0.2,
    "dt_s": 0.1,
    "vehicles": [
        {"id": "ego", "route": [[0, 0], [10, 0]], "speed_mps": 1.0, "is_ego": True}
    ],
}


def parse(overrides=None, **top):
    doc = dict(MINIMAL)
    doc.update(overrides or {})
    doc.update(top)
    return parse_config(json.dumps(doc))


def test_minimal_config_defaults():
    cfg = parse()
    assert cfg.ticks == 2
    assert cfg.mode == "traffic_driven"
    assert cfg.execution == "sequential"
    assert cfg.seed == 0
    assert cfg.sensor.channels == 64
    assert cfg.comm.enabled is True
    assert cfg.detector.cell_m == 2.0
    assert cfg.attacks == []
    assert cfg.weather is None


def test_json_syntax_error_carries_position():
    with pytest.raises(ConfigSyntaxError) as err:
        parse_config("{\n  \"duration_s\": ,\n}")
    assert err.value.line == 2
    assert err.value.col > 0


def test_top_level_must_be_object():
    with pytest.raises(ConfigError):
        parse_config("[1, 2]")


@pytest.mark.parametrize(
    "patch, path_fragment",
    [
        ({"duration_s": -1.0}, "duration_s"),
        ({"dt_s": 0.0}, "dt_s"),
        ({"mode": "fastest"}, "mode"),
        ({"execution": "mpi"}, "execution"),
        ({"seed": -1}, "seed"),
        ({"seed": 2**64}, "seed"),
        ({"vehicles": []}, "vehicles"),
        ({"bogus_key": 1}, "bogus_key"),
    ],
)
def test_field_validation_errors(patch, path_fragment):
    with pytest.raises(ConfigError) as err:
        parse(patch)
    assert path_fragment in str(err.value)


def test_duration_must_divide_evenly():
    with pytest.raises(ConfigError) as err:
        parse({"duration_s": 1.0, "dt_s": 0.3})
    assert "duration_s" in str(err.value)


def test_zero_duration_is_allowed():
    assert parse({"duration_s": 0.0}).ticks == 0


def test_cam_interval_must_divide_dt():
    with pytest.raises(ConfigError):
        parse({"comm": {"cam_interval_s": 0.25}})
    # disabling comm lifts the divisibility requirement
    cfg = parse({"comm": {"cam_interval_s": 0.25, "enabled": False}})
    assert cfg.comm.enabled is False


def test_vehicle_route_needs_two_waypoints():
    with pytest.raises(ConfigError) as err:
        parse(
            {
                "vehicles": [
                    {"id": "ego", "route": [[0, 0]], "speed_mps": 1.0, "is_ego": True}
                ]
            }
        )
    assert "route" in str(err.value)


def test_duplicate_vehicle_ids_rejected():
    v = {"id": "a", "route": [[0, 0], [1, 0]], "speed_mps": 1.0}
    with pytest.raises(ConfigError) as err:
        parse({"vehicles": [dict(v, is_ego=True), dict(v)]})
    assert "duplicate" in str(err.value)


def test_exactly_one_ego_required():
    v = {"id": "a", "route": [[0, 0], [1, 0]], "speed_mps": 1.0}
    with pytest.raises(ConfigError):
        parse({"vehicles": [v, dict(v, id="b")]})
    with pytest.raises(ConfigError):
        parse({"vehicles": [dict(v, is_ego=True), dict(v, id="b", is_ego=True)]})


def test_route_parsed_as_float_array():
    cfg = parse()
    route = cfg.vehicles[0].route
    assert isinstance(route, np.ndarray)
    assert route.dtype == np.float64
    assert route.shape == (2, 2)


def test_sensor_validation():
    with pytest.raises(ConfigError):
        parse({"sensor": {"channels": 0}})
    with pytest.raises(ConfigError):
        parse({"sensor": {"vertical_fov_deg": [2.0, -24.9]}})
    with pytest.raises(ConfigError):
        parse({"sensor": {"range_m": -5}})


def test_sensors_list_accepts_exactly_one():
    cfg = parse({"sensors": [{"channels": 8}]})
    assert cfg.sensor.channels == 8
    with pytest.raises(ConfigError):
        parse({"sensors": []})
    with pytest.raises(ConfigError):
        parse({"sensors": [{}, {}]})
    with pytest.raises(ConfigError):
        parse({"sensors": [{}], "sensor": {}})


def test_weather_recorded_but_uninterpreted():
    cfg = parse({"weather": {"rain_mm_h": 12.0}})
    assert cfg.weather == {"rain_mm_h": 12.0}
    assert cfg.to_dict()["weather"] == {"rain_mm_h": 12.0}


def test_sybil_requires_one_attacker():
    with pytest.raises(ConfigError) as err:
        parse({"attacks": [{"type": "sybil", "params": {}}]})
    assert "is_attacker" in str(err.value)


def test_attack_target_ids_must_exist():
    with pytest.raises(ConfigError) as err:
        parse({"attacks": [{"type": "rba", "params": {"targets": ["nobody"]}}]})
    assert "nobody" in str(err.value)


def test_unknown_attack_type():
    with pytest.raises(ConfigError):
        parse({"attacks": [{"type": "jam", "params": {}}]})


def test_unknown_attack_param():
    with pytest.raises(ConfigError) as err:
        attack_params_from_dict("perturb", {"epsilon_m": 0.1, "budget": 2})
    assert "budget" in str(err.value)


def test_attack_params_lambda_alias_round_trip():
    params = attack_params_from_dict("perturb", {"epsilon_m": 0.1, "lambda": 0.5})
    assert params.lam == 0.5
    d = attack_params_to_dict("perturb", params)
    assert d["lambda"] == 0.5
    assert "lam" not in d


def test_detector_round_trip():
    model = DetectorModel(
        cell_m=0.5, sigma_m=0.35, bias=-6.5, min_z_m=-2.4, center_offset_m=1.7
    )
    rebuilt = detector_from_dict(detector_to_dict(model))
    assert rebuilt == model


def test_detector_unknown_key():
    with pytest.raises(ConfigError):
        detector_from_dict({"cells": 4})


def test_detector_invalid_value_reports_path():
    with pytest.raises(ConfigError) as err:
        detector_from_dict({"sigma_m": -1.0})
    assert "detector" in str(err.value)


def test_config_to_dict_round_trips_through_parse():
    cfg = make_config(seed=9, attacks=[{"type": "detach", "params": {"drop_ratio": 0.01}}])
    echo = cfg.to_dict()
    reparsed = parse_config(json.dumps(echo))
    assert reparsed.to_dict() == echo


def test_load_config_reads_files(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(MINIMAL), encoding="utf-8")
    assert load_config(path).ticks == 2
