"""CAM emission, V2X message attacks, and the per-vehicle local dynamic map.

CAMs (cooperative awareness messages) carry a station id, a generation time,
and the reported position / speed / heading. Attacks rewrite a CAM batch
before reception:

* random bias (``apply_rba``): per-dimension uniform position bias, drawn
  once per (station, activation) so the bias is constant for the whole run;
  a redraw-per-message mode exists behind a flag.
* position alteration (``apply_paa``): constant offset or fabricated
  coordinates, validated to displace beyond a plausibility radius.
* sybil (``apply_sybil``): ghost stations on a ring around the attacker,
  re-centered every emission.
* GPS spoofing (``apply_gps_spoof``): biases the pose a vehicle reports
  about itself inside a time window; world truth is unaffected.

Reception is a simple disc: a station's CAM reaches every other vehicle
whose true position lies within ``reception_radius_m`` of the reported
position. Each vehicle folds received CAMs into its local dynamic map.
"""

import hashlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

_TIME_TOL = 1e-9


class CommParameterError(ValueError):
    """Raised for degenerate comm attack parameters."""


@dataclass
class CamMessage:
    station_id: str
    generation_time_s: float
    position: np.ndarray          # reported world position (3,) [m]
    speed: float                  # [m/s]
    heading: float                # [rad]

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.generation_time_s = float(self.generation_time_s)
        self.speed = float(self.speed)
        self.heading = float(self.heading)

    def copy(self) -> "CamMessage":
        return CamMessage(
            self.station_id, self.generation_time_s, self.position.copy(),
            self.speed, self.heading,
        )

    def to_dict(self) -> dict:
        return {
            "station_id": self.station_id,
            "generation_time_s": self.generation_time_s,
            "position": [float(v) for v in self.position],
            "speed": self.speed,
            "heading": self.heading,
        }


@dataclass
class RbaParams:
    delta_m: tuple = (1.0, 1.0, 0.0)     # per-dimension bias bound, >= 0
    targets: tuple = ()                  # station ids; empty means every station
    seed: int = 0
    redraw_per_message: bool = False

    def __post_init__(self):
        self.delta_m = tuple(float(v) for v in self.delta_m)
        if len(self.delta_m) != 3 or any(v < 0 for v in self.delta_m):
            raise CommParameterError("delta_m must be three values >= 0")
        self.targets = tuple(self.targets)


@dataclass
class PaaParams:
    offset_m: tuple | None = None        # constant offset mode
    fabricate_at: tuple | None = None    # absolute fabricated position mode
    targets: tuple = ()
    plausibility_radius_m: float = 10.0

    def __post_init__(self):
        if (self.offset_m is None) == (self.fabricate_at is None):
            raise CommParameterError("exactly one of offset_m / fabricate_at required")
        if self.offset_m is not None:
            self.offset_m = tuple(float(v) for v in self.offset_m)
            if len(self.offset_m) != 3:
                raise CommParameterError("offset_m must have three components")
            if float(np.linalg.norm(self.offset_m)) <= self.plausibility_radius_m:
                raise CommParameterError(
                    "offset norm must exceed the plausibility radius "
                    f"({self.plausibility_radius_m} m) to count as an attack"
                )
        if self.fabricate_at is not None:
            self.fabricate_at = tuple(float(v) for v in self.fabricate_at)
            if len(self.fabricate_at) != 3:
                raise CommParameterError("fabricate_at must have three components")
        self.targets = tuple(self.targets)


@dataclass
class SybilParams:
    ghost_count: int = 3
    ring_radius_m: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.ghost_count < 1:
            raise CommParameterError("ghost_count must be >= 1")
        if self.ring_radius_m <= 0:
            raise CommParameterError("ring_radius_m must be positive")


@dataclass
class GpsSpoofParams:
    bias_m: tuple = (0.0, 0.0, 0.0)
    start_s: float = 0.0
    end_s: float = float("inf")

    def __post_init__(self):
        self.bias_m = tuple(float(v) for v in self.bias_m)
        if len(self.bias_m) != 3:
            raise CommParameterError("bias_m must have three components")
        if self.end_s < self.start_s:
            raise CommParameterError("end_s must be >= start_s")


def _station_rng(seed: int, station_id: str, extra: int | None = None):
    """Deterministic per-station stream, independent of batch order."""
    digest = hashlib.sha256(station_id.encode()).digest()
    entropy = [int(seed), int.from_bytes(digest[:8], "little")]
    if extra is not None:
        entropy.append(extra)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _is_emission_time(t: float, interval: float) -> bool:
    ratio = t / interval
    return abs(ratio - round(ratio)) <= _TIME_TOL * max(1.0, abs(ratio))


def emit_cams(states, t: float, comm) -> list[CamMessage]:
    """CAMs for every vehicle at time t, or [] off the emission cadence."""
    if not comm.enabled or not _is_emission_time(t, comm.cam_interval_s):
        return []
    return [
        CamMessage(s.id, t, s.position.copy(), s.speed, s.yaw)
        for s in states
    ]


def apply_rba(cams, params: RbaParams) -> list[CamMessage]:
    """Add a uniform random position bias to targeted stations' CAMs."""
    out = []
    for cam in cams:
        cam = cam.copy()
        if not params.targets or cam.station_id in params.targets:
            if params.redraw_per_message:
                extra = int(round(cam.generation_time_s / _TIME_TOL))
                rng = _station_rng(params.seed, cam.station_id, extra)
            else:
                rng = _station_rng(params.seed, cam.station_id)
            lo = -np.asarray(params.delta_m)
            hi = np.asarray(params.delta_m)
            cam.position = cam.position + rng.uniform(lo, hi)
        out.append(cam)
    return out


def apply_paa(cams, params: PaaParams) -> list[CamMessage]:
    """Shift or fabricate the reported position of targeted stations."""
    out = []
    for cam in cams:
        cam = cam.copy()
        if not params.targets or cam.station_id in params.targets:
            if params.offset_m is not None:
                cam.position = cam.position + np.asarray(params.offset_m)
            else:
                cam.position = np.asarray(params.fabricate_at, dtype=np.float64).copy()
        out.append(cam)
    return out


def ghost_station_id(attacker_id: str, k: int) -> str:
    return f"ghost:{attacker_id}:{k}"


def apply_sybil(cams, params: SybilParams, attacker_state, t: float) -> list[CamMessage]:
    """Append ghost-station CAMs on a ring centered on the attacker.

    Ghosts are evenly spaced; the ring's phase is drawn once per activation
    from the seed, so ghost tracks are stable across the run while the ring
    follows the attacker.
    """
    phase = float(_station_rng(params.seed, attacker_state.id).uniform(0.0, 2.0 * np.pi))
    out = [cam.copy() for cam in cams]
    m = params.ghost_count
    for k in range(m):
        ang = phase + 2.0 * np.pi * k / m
        pos = attacker_state.position + params.ring_radius_m * np.array(
            [np.cos(ang), np.sin(ang), 0.0]
        )
        out.append(
            CamMessage(
                ghost_station_id(attacker_state.id, k),
                t,
                pos,
                attacker_state.speed,
                attacker_state.yaw,
            )
        )
    return out


def apply_gps_spoof(position, yaw: float, params: GpsSpoofParams, t: float):
    """Reported pose of the spoofed vehicle at time t (truth is untouched)."""
    position = np.asarray(position, dtype=np.float64)
    if params.start_s - _TIME_TOL <= t <= params.end_s + _TIME_TOL:
        return position + np.asarray(params.bias_m), yaw
    return position.copy(), yaw


class LocalDynamicMap:
    """Per-vehicle store of the last H CAMs from each heard station."""

    def __init__(self, owner_id: str, history: int = 10):
        if history < 1:
            raise ValueError("history window must be >= 1")
        self.owner_id = owner_id
        self.history = history
        self._entries: dict[str, deque] = {}

    def ingest(self, cams, owner_position, reception_radius_m: float):
        """Fold a received batch in: own messages and out-of-range ones drop."""
        owner_position = np.asarray(owner_position, dtype=np.float64)
        for cam in cams:
            if cam.station_id == self.owner_id:
                continue
            if np.linalg.norm(cam.position - owner_position) > reception_radius_m:
                continue
            q = self._entries.setdefault(cam.station_id, deque(maxlen=self.history))
            q.append(cam.copy())

    def stations(self) -> list[str]:
        return sorted(self._entries)

    def latest(self, station_id: str) -> CamMessage | None:
        q = self._entries.get(station_id)
        if not q:
            return None
        return max(q, key=lambda cam: cam.generation_time_s)

    def snapshot(self) -> dict:
        """JSON-ready view: per station, history oldest-first."""
        return {
            sid: [cam.to_dict() for cam in self._entries[sid]]
            for sid in self.stations()
        }


def update_ldm(ldm: LocalDynamicMap, cams, owner_state, comm) -> LocalDynamicMap:
    """Ingest a CAM batch into a vehicle's map using the comm reception rules."""
    ldm.ingest(cams, owner_state.position, comm.reception_radius_m)
    return ldm
