"""Scenario configuration: JSON schema, validation, defaults.

A scenario is a single JSON object. Validation reports three error shapes:
syntax errors carry the parser position, schema errors carry the offending
field path and reason, and cross-field rules (tick divisibility, unique ids,
attack/vehicle consistency) raise with the paths involved.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .attacks.comm import (
    CommParameterError,
    GpsSpoofParams,
    PaaParams,
    RbaParams,
    SybilParams,
)
from .attacks.perception import (
    AttackParameterError,
    AttachParams,
    DetachParams,
    PerturbParams,
)
from .detector import DetectorModel

_REL_TOL = 1e-9

PERCEPTION_ATTACKS = ("perturb", "detach", "attach")
COMM_ATTACKS = ("rba", "paa", "sybil", "gps_spoof")


class ConfigError(ValueError):
    """Schema or cross-field violation, carrying the field path."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}" if path else reason)
        self.path = path
        self.reason = reason


class ConfigSyntaxError(ConfigError):
    """Malformed JSON, carrying the parser's line and column."""

    def __init__(self, line: int, col: int, reason: str):
        super().__init__("", f"invalid JSON at line {line}, column {col}: {reason}")
        self.line = line
        self.col = col


@dataclass
class VehicleSpec:
    id: str
    route: np.ndarray               # (R, 2) BEV waypoints [m]
    speed_mps: float
    dims: tuple = (4.5, 1.8, 1.6)   # (l, w, h) [m]
    is_ego: bool = False
    is_attacker: bool = False
    loop_route: bool = False


@dataclass
class SensorSpec:
    channels: int = 64
    points_per_channel: int = 1024
    range_m: float = 100.0
    vertical_fov_deg: tuple = (-24.9, 2.0)
    mount_offset: tuple = (0.0, 0.0, 1.73)
    range_noise_sigma_m: float = 0.01
    rotation_hz: float = 10.0


@dataclass
class CommSpec:
    enabled: bool = True
    cam_interval_s: float = 0.1
    reception_radius_m: float = 150.0
    ldm_history: int = 10


@dataclass
class MapSpec:
    name: str = "flat"


@dataclass
class AttackSpec:
    type: str
    params: object


@dataclass
class ScenarioConfig:
    duration_s: float
    dt_s: float
    vehicles: list
    mode: str = "traffic_driven"
    execution: str = "sequential"
    seed: int = 0
    map: MapSpec = field(default_factory=MapSpec)
    sensor: SensorSpec = field(default_factory=SensorSpec)
    comm: CommSpec = field(default_factory=CommSpec)
    detector: DetectorModel = field(default_factory=DetectorModel)
    attacks: list = field(default_factory=list)
    weather: dict | None = None      # accepted and recorded, never interpreted
    paired_export: bool = True

    @property
    def ticks(self) -> int:
        return _integral_ratio(self.duration_s, self.dt_s, "duration_s")

    @property
    def cam_every_ticks(self) -> int:
        return _integral_ratio(self.comm.cam_interval_s, self.dt_s, "comm.cam_interval_s")

    def ego(self) -> VehicleSpec:
        return next(v for v in self.vehicles if v.is_ego)

    def attackers(self) -> list:
        return [v for v in self.vehicles if v.is_attacker]

    def perception_attacks(self) -> list:
        return [a for a in self.attacks if a.type in PERCEPTION_ATTACKS]

    def comm_attacks(self) -> list:
        return [a for a in self.attacks if a.type in COMM_ATTACKS]

    def to_dict(self) -> dict:
        """JSON-ready echo of the configuration (used for dataset metadata)."""
        d = {
            "duration_s": self.duration_s,
            "dt_s": self.dt_s,
            "mode": self.mode,
            "execution": self.execution,
            "seed": self.seed,
            "paired_export": self.paired_export,
            "map": {"name": self.map.name},
            "vehicles": [
                {
                    "id": v.id,
                    "route": [[float(x), float(y)] for x, y in v.route],
                    "speed_mps": v.speed_mps,
                    "dims": list(v.dims),
                    "is_ego": v.is_ego,
                    "is_attacker": v.is_attacker,
                    "loop_route": v.loop_route,
                }
                for v in self.vehicles
            ],
            "sensor": {
                "channels": self.sensor.channels,
                "points_per_channel": self.sensor.points_per_channel,
                "range_m": self.sensor.range_m,
                "vertical_fov_deg": list(self.sensor.vertical_fov_deg),
                "mount_offset": list(self.sensor.mount_offset),
                "range_noise_sigma_m": self.sensor.range_noise_sigma_m,
                "rotation_hz": self.sensor.rotation_hz,
            },
            "comm": {
                "enabled": self.comm.enabled,
                "cam_interval_s": self.comm.cam_interval_s,
                "reception_radius_m": self.comm.reception_radius_m,
                "ldm_history": self.comm.ldm_history,
            },
            "detector": detector_to_dict(self.detector),
            "attacks": [
                {"type": a.type, "params": attack_params_to_dict(a.type, a.params)}
                for a in self.attacks
            ],
        }
        if self.weather is not None:
            d["weather"] = self.weather
        return d


def detector_to_dict(model: DetectorModel) -> dict:
    return {
        "cell_m": model.cell_m,
        "sigma_m": model.sigma_m,
        "x_range": list(model.x_range),
        "y_range": list(model.y_range),
        "weight": model.weight,
        "bias": model.bias,
        "score_threshold": model.score_threshold,
        "box_template": list(model.box_template),
        "nms_iou": model.nms_iou,
        "cutoff_sigmas": model.cutoff_sigmas,
        "min_z_m": model.min_z_m,
        "center_offset_m": model.center_offset_m,
    }


def detector_from_dict(d: dict, path: str = "detector") -> DetectorModel:
    allowed = {
        "cell_m", "sigma_m", "x_range", "y_range", "weight", "bias",
        "score_threshold", "box_template", "nms_iou", "cutoff_sigmas", "min_z_m",
        "center_offset_m",
    }
    _check_keys(d, allowed, path)
    kwargs = dict(d)
    for key in ("x_range", "y_range", "box_template"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        return DetectorModel(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


_ATTACK_CLASSES = {
    "perturb": PerturbParams,
    "detach": DetachParams,
    "attach": AttachParams,
    "rba": RbaParams,
    "paa": PaaParams,
    "sybil": SybilParams,
    "gps_spoof": GpsSpoofParams,
}

# JSON key -> dataclass field where they differ
_ATTACK_KEY_MAP = {"lambda": "lam"}


def attack_params_from_dict(attack_type: str, params: dict, path: str = "attack"):
    cls = _ATTACK_CLASSES.get(attack_type)
    if cls is None:
        raise ConfigError(
            f"{path}.type",
            f"unknown attack type {attack_type!r}; expected one of "
            f"{sorted(_ATTACK_CLASSES)}",
        )
    kwargs = {}
    fields = {f for f in cls.__dataclass_fields__}
    for key, value in params.items():
        name = _ATTACK_KEY_MAP.get(key, key)
        if name not in fields:
            raise ConfigError(f"{path}.params.{key}", "unknown parameter")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (AttackParameterError, CommParameterError, TypeError) as exc:
        raise ConfigError(f"{path}.params", str(exc)) from exc


def attack_params_to_dict(attack_type: str, params) -> dict:
    out = {}
    reverse = {v: k for k, v in _ATTACK_KEY_MAP.items()}
    for name in params.__dataclass_fields__:
        value = getattr(params, name)
        if isinstance(value, tuple):
            value = list(value)
        out[reverse.get(name, name)] = value
    return out


def _integral_ratio(numerator: float, denominator: float, path: str) -> int:
    ratio = numerator / denominator
    n = int(round(ratio))
    if abs(ratio - n) > _REL_TOL * max(1.0, abs(ratio)):
        raise ConfigError(path, f"{numerator} is not an integral multiple of {denominator}")
    return n


def _check_keys(d: dict, allowed: set, path: str):
    for key in d:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")


_REQUIRED = object()


def _get(d: dict, key: str, types, path: str, default=_REQUIRED):
    if key not in d:
        if default is _REQUIRED:
            raise ConfigError(f"{path}.{key}" if path else key, "required field missing")
        return default
    value = d[key]
    if types is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}.{key}" if path else key, "expected a number")
        return float(value)
    if types is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}.{key}" if path else key, "expected an integer")
        return value
    if not isinstance(value, types):
        raise ConfigError(
            f"{path}.{key}" if path else key,
            f"expected {getattr(types, '__name__', types)}",
        )
    return value


def _vec(d: dict, key: str, size: int, path: str, default=_REQUIRED):
    if key not in d and default is not _REQUIRED:
        return tuple(default)
    value = _get(d, key, (list, tuple), path)
    full_path = f"{path}.{key}" if path else key
    if len(value) != size:
        raise ConfigError(full_path, f"expected {size} numbers")
    out = []
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{full_path}[{i}]", "expected a number")
        out.append(float(v))
    return tuple(out)


def _parse_vehicle(d: dict, path: str) -> VehicleSpec:
    _check_keys(
        d,
        {"id", "route", "speed_mps", "dims", "is_ego", "is_attacker", "loop_route"},
        path,
    )
    vid = _get(d, "id", str, path)
    if not vid:
        raise ConfigError(f"{path}.id", "must be a non-empty string")
    route_raw = _get(d, "route", list, path)
    if len(route_raw) < 2:
        raise ConfigError(f"{path}.route", "needs at least two waypoints")
    route = []
    for i, wp in enumerate(route_raw):
        if not isinstance(wp, (list, tuple)) or len(wp) != 2:
            raise ConfigError(f"{path}.route[{i}]", "expected [x, y]")
        route.append([float(wp[0]), float(wp[1])])
    speed = _get(d, "speed_mps", float, path)
    if speed < 0:
        raise ConfigError(f"{path}.speed_mps", "must be >= 0")
    dims = _vec(d, "dims", 3, path, default=(4.5, 1.8, 1.6))
    if any(v <= 0 for v in dims):
        raise ConfigError(f"{path}.dims", "all dims must be positive")
    return VehicleSpec(
        id=vid,
        route=np.asarray(route, dtype=np.float64),
        speed_mps=speed,
        dims=dims,
        is_ego=bool(_get(d, "is_ego", bool, path, default=False)),
        is_attacker=bool(_get(d, "is_attacker", bool, path, default=False)),
        loop_route=bool(_get(d, "loop_route", bool, path, default=False)),
    )


def _parse_sensor(d: dict, path: str) -> SensorSpec:
    _check_keys(
        d,
        {
            "channels", "points_per_channel", "range_m", "vertical_fov_deg",
            "mount_offset", "range_noise_sigma_m", "rotation_hz",
        },
        path,
    )
    spec = SensorSpec(
        channels=_get(d, "channels", int, path, default=64),
        points_per_channel=_get(d, "points_per_channel", int, path, default=1024),
        range_m=_get(d, "range_m", float, path, default=100.0),
        vertical_fov_deg=_vec(d, "vertical_fov_deg", 2, path, default=(-24.9, 2.0)),
        mount_offset=_vec(d, "mount_offset", 3, path, default=(0.0, 0.0, 1.73)),
        range_noise_sigma_m=_get(d, "range_noise_sigma_m", float, path, default=0.01),
        rotation_hz=_get(d, "rotation_hz", float, path, default=10.0),
    )
    if spec.channels < 1:
        raise ConfigError(f"{path}.channels", "must be >= 1")
    if spec.points_per_channel < 1:
        raise ConfigError(f"{path}.points_per_channel", "must be >= 1")
    if spec.range_m <= 0:
        raise ConfigError(f"{path}.range_m", "must be positive")
    if spec.vertical_fov_deg[1] < spec.vertical_fov_deg[0]:
        raise ConfigError(f"{path}.vertical_fov_deg", "max must be >= min")
    if spec.channels > 1 and spec.vertical_fov_deg[1] == spec.vertical_fov_deg[0]:
        raise ConfigError(f"{path}.vertical_fov_deg", "zero span needs channels == 1")
    if spec.range_noise_sigma_m < 0:
        raise ConfigError(f"{path}.range_noise_sigma_m", "must be >= 0")
    if spec.rotation_hz <= 0:
        raise ConfigError(f"{path}.rotation_hz", "must be positive")
    return spec


def _parse_comm(d: dict, path: str) -> CommSpec:
    _check_keys(
        d, {"enabled", "cam_interval_s", "reception_radius_m", "ldm_history"}, path
    )
    spec = CommSpec(
        enabled=bool(_get(d, "enabled", bool, path, default=True)),
        cam_interval_s=_get(d, "cam_interval_s", float, path, default=0.1),
        reception_radius_m=_get(d, "reception_radius_m", float, path, default=150.0),
        ldm_history=_get(d, "ldm_history", int, path, default=10),
    )
    if spec.cam_interval_s <= 0:
        raise ConfigError(f"{path}.cam_interval_s", "must be positive")
    if spec.reception_radius_m <= 0:
        raise ConfigError(f"{path}.reception_radius_m", "must be positive")
    if spec.ldm_history < 1:
        raise ConfigError(f"{path}.ldm_history", "must be >= 1")
    return spec


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario JSON document."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(exc.lineno, exc.colno, exc.msg) from exc
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be a JSON object")
    _check_keys(
        raw,
        {
            "duration_s", "dt_s", "mode", "execution", "seed", "map", "vehicles",
            "sensor", "sensors", "comm", "detector", "attacks", "weather",
            "paired_export",
        },
        "",
    )

    duration = _get(raw, "duration_s", float, "")
    if duration < 0:
        raise ConfigError("duration_s", "must be >= 0")
    dt = _get(raw, "dt_s", float, "")
    if dt <= 0:
        raise ConfigError("dt_s", "must be positive")

    mode = _get(raw, "mode", str, "", default="traffic_driven")
    if mode not in ("traffic_driven", "world_driven"):
        raise ConfigError("mode", f"must be traffic_driven or world_driven, got {mode!r}")
    execution = _get(raw, "execution", str, "", default="sequential")
    if execution not in ("sequential", "threaded"):
        raise ConfigError("execution", "must be sequential or threaded")

    seed = _get(raw, "seed", int, "", default=0)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", "must fit in an unsigned 64-bit integer")

    map_raw = _get(raw, "map", dict, "", default={})
    _check_keys(map_raw, {"name"}, "map")
    map_spec = MapSpec(name=_get(map_raw, "name", str, "map", default="flat"))

    vehicles_raw = _get(raw, "vehicles", list, "")
    if not vehicles_raw:
        raise ConfigError("vehicles", "at least one vehicle required")
    vehicles = []
    for i, v in enumerate(vehicles_raw):
        if not isinstance(v, dict):
            raise ConfigError(f"vehicles[{i}]", "expected an object")
        vehicles.append(_parse_vehicle(v, f"vehicles[{i}]"))

    ids = [v.id for v in vehicles]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ConfigError("vehicles", f"duplicate vehicle ids: {dupes}")
    egos = [v for v in vehicles if v.is_ego]
    if len(egos) != 1:
        raise ConfigError("vehicles", f"exactly one vehicle must set is_ego, found {len(egos)}")

    if "sensor" in raw and "sensors" in raw:
        raise ConfigError("sensors", "give either sensor or sensors, not both")
    if "sensors" in raw:
        sensors_raw = _get(raw, "sensors", list, "")
        if len(sensors_raw) != 1:
            raise ConfigError("sensors", "exactly one lidar sensor is supported")
        sensor = _parse_sensor(sensors_raw[0], "sensors[0]")
    else:
        sensor = _parse_sensor(_get(raw, "sensor", dict, "", default={}), "sensor")

    comm = _parse_comm(_get(raw, "comm", dict, "", default={}), "comm")
    detector = detector_from_dict(_get(raw, "detector", dict, "", default={}))

    attacks_raw = _get(raw, "attacks", list, "", default=[])
    attacks = []
    for i, a in enumerate(attacks_raw):
        path = f"attacks[{i}]"
        if not isinstance(a, dict):
            raise ConfigError(path, "expected an object")
        _check_keys(a, {"type", "params"}, path)
        atype = _get(a, "type", str, path)
        params = attack_params_from_dict(
            atype, _get(a, "params", dict, path, default={}), path
        )
        attacks.append(AttackSpec(atype, params))

    weather = _get(raw, "weather", dict, "", default=None)

    config = ScenarioConfig(
        duration_s=duration,
        dt_s=dt,
        vehicles=vehicles,
        mode=mode,
        execution=execution,
        seed=seed,
        map=map_spec,
        sensor=sensor,
        comm=comm,
        detector=detector,
        attacks=attacks,
        weather=weather,
        paired_export=bool(_get(raw, "paired_export", bool, "", default=True)),
    )

    # cross-field rules
    config.ticks
    if comm.enabled:
        config.cam_every_ticks
    for i, spec in enumerate(config.attacks):
        path = f"attacks[{i}]"
        if spec.type == "sybil" and len(config.attackers()) != 1:
            raise ConfigError(
                path, "sybil needs exactly one vehicle with is_attacker set"
            )
        targets = getattr(spec.params, "targets", ())
        unknown = [t for t in targets if t not in ids]
        if unknown:
            raise ConfigError(f"{path}.params.targets", f"unknown vehicle ids: {unknown}")
    return config


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
