"""Flat-ground kinematic world: traffic advancement, LiDAR raycasting, ground truth.

Vehicles follow polyline routes at constant speed, yawed along the current
segment; reaching the end of a non-looping route clamps the vehicle there and
zeroes its speed. The simulated LiDAR spins a full revolution per tick:
``channels`` elevation rings spread over the vertical field of view, each with
``points_per_channel`` azimuth samples starting at zero phase. Every ray keeps
the nearest hit against the ground plane z=0 or any non-ego vehicle's oriented
box within range; optional Gaussian range noise moves the sample along the ray.
Returned points are in the sensor frame, ordered channel-major.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import normalize_angle, rot2d
from .scene import BBox3D, VehicleState

_EPS = 1e-12
_MIN_T = 1e-9  # rays must leave the sensor before hitting anything


@dataclass
class LidarScan:
    """Sensor-frame point cloud with the internal ground/object labeling."""

    points: np.ndarray           # (N, 3) [m]
    ground: np.ndarray           # (N,) bool, True for ground-plane hits


class KinematicTraffic:
    """Advances all vehicles of a scenario along their routes."""

    def __init__(self, vehicle_specs):
        self._specs = list(vehicle_specs)
        self._routes = []
        self._cum = []               # cumulative arc length per route vertex
        self._progress = np.zeros(len(self._specs))
        for spec in self._specs:
            route = np.asarray(spec.route, dtype=np.float64)
            seg = np.linalg.norm(np.diff(route, axis=0), axis=1)
            self._routes.append(route)
            self._cum.append(np.concatenate([[0.0], np.cumsum(seg)]))
        self._states = [self._state_at(i) for i in range(len(self._specs))]

    def _state_at(self, i: int) -> VehicleState:
        spec = self._specs[i]
        route = self._routes[i]
        cum = self._cum[i]
        total = cum[-1]
        s = self._progress[i]
        stopped = False
        if total <= 0.0:
            pos_xy = route[0]
            yaw = 0.0
        else:
            if spec.loop_route:
                s = s % total
            elif s >= total:
                s = total
                stopped = True
            k = int(np.searchsorted(cum, s, side="right") - 1)
            k = min(k, len(route) - 2)
            seg_len = cum[k + 1] - cum[k]
            while seg_len <= 0.0 and k < len(route) - 2:
                k += 1
                seg_len = cum[k + 1] - cum[k]
            frac = (s - cum[k]) / seg_len if seg_len > 0.0 else 0.0
            pos_xy = route[k] + frac * (route[k + 1] - route[k])
            d = route[k + 1] - route[k]
            yaw = float(np.arctan2(d[1], d[0])) if seg_len > 0.0 else 0.0
        z = spec.dims[2] / 2.0
        speed = 0.0 if stopped else spec.speed_mps
        return VehicleState(
            spec.id,
            np.array([pos_xy[0], pos_xy[1], z]),
            normalize_angle(yaw),
            speed,
            spec.dims,
        )

    def step(self, dt: float):
        """Advance every vehicle by speed * dt of arc length."""
        for i, spec in enumerate(self._specs):
            state = self._states[i]
            self._progress[i] += state.speed * dt
        self._states = [self._state_at(i) for i in range(len(self._specs))]
        return self.states()

    def states(self) -> list:
        return [s.copy() for s in self._states]

    def overwrite(self, states):
        """Replace current reported states (the follower side of a sync)."""
        by_id = {s.id: s for s in states}
        self._states = [by_id[s.id].copy() for s in self._states]


def step_traffic(traffic: KinematicTraffic, dt: float) -> list:
    """Advance the traffic model one tick and return the new states."""
    return traffic.step(dt)


def sensor_pose(ego: VehicleState, mount_offset) -> np.ndarray:
    """World position of the sensor given the ego pose and mount offset."""
    offset = np.asarray(mount_offset, dtype=np.float64)
    pos = ego.position.copy()
    pos[:2] += rot2d(ego.yaw) @ offset[:2]
    pos[2] += offset[2]
    return pos


def _ray_directions(sensor):
    fov = np.deg2rad(np.asarray(sensor.vertical_fov_deg, dtype=np.float64))
    els = np.linspace(fov[0], fov[1], sensor.channels)
    azs = 2.0 * np.pi * np.arange(sensor.points_per_channel) / sensor.points_per_channel
    ce, se = np.cos(els), np.sin(els)
    ca, sa = np.cos(azs), np.sin(azs)
    dirs = np.empty((sensor.channels, sensor.points_per_channel, 3))
    dirs[:, :, 0] = ce[:, None] * ca[None, :]
    dirs[:, :, 1] = ce[:, None] * sa[None, :]
    dirs[:, :, 2] = se[:, None]
    return dirs.reshape(-1, 3)   # channel-major, azimuth-minor


def _box_hits(origin, dirs, state: VehicleState):
    """Slab test of all rays against one vehicle's oriented box; entry t or inf."""
    l, w, h = state.dims
    half = np.array([l / 2.0, w / 2.0, h / 2.0])
    rel = origin - state.position
    rot = rot2d(-state.yaw)
    o_local = np.empty(3)
    o_local[:2] = rot @ rel[:2]
    o_local[2] = rel[2]
    d_local = np.empty_like(dirs)
    d_local[:, :2] = dirs[:, :2] @ rot.T
    d_local[:, 2] = dirs[:, 2]

    t_lo = np.full(dirs.shape[0], -np.inf)
    t_hi = np.full(dirs.shape[0], np.inf)
    for axis in range(3):
        d = d_local[:, axis]
        o = o_local[axis]
        moving = np.abs(d) > _EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half[axis] - o) / d
            t2 = (half[axis] - o) / d
        lo = np.where(moving, np.minimum(t1, t2), np.where(abs(o) <= half[axis], -np.inf, np.inf))
        hi = np.where(moving, np.maximum(t1, t2), np.where(abs(o) <= half[axis], np.inf, -np.inf))
        t_lo = np.maximum(t_lo, lo)
        t_hi = np.minimum(t_hi, hi)
    t = np.where((t_lo <= t_hi) & (t_lo > _MIN_T), t_lo, np.inf)
    return t


def raycast_lidar(ego: VehicleState, others, sensor, rng) -> LidarScan:
    """Cast one full LiDAR sweep from the ego's sensor.

    ``others`` must not contain the ego. ``rng`` supplies the range noise; it
    is consumed once per emitted point, in ray order, so identical scenes
    produce identical draw sequences.
    """
    dirs_s = _ray_directions(sensor)
    rot = rot2d(ego.yaw)
    dirs_w = dirs_s.copy()
    dirs_w[:, :2] = dirs_s[:, :2] @ rot.T
    origin = sensor_pose(ego, sensor.mount_offset)

    t_best = np.full(dirs_s.shape[0], np.inf)
    is_ground = np.zeros(dirs_s.shape[0], dtype=bool)

    dz = dirs_w[:, 2]
    falling = dz < -_EPS
    with np.errstate(divide="ignore"):
        t_ground = np.where(falling, -origin[2] / dz, np.inf)
    ok = (t_ground > _MIN_T) & (t_ground <= sensor.range_m)
    t_best = np.where(ok, t_ground, t_best)
    is_ground |= ok

    for other in others:
        t = _box_hits(origin, dirs_w, other)
        closer = (t <= sensor.range_m) & (t < t_best)
        t_best = np.where(closer, t, t_best)
        is_ground &= ~closer

    hit = np.isfinite(t_best)
    t_hit = t_best[hit]
    if sensor.range_noise_sigma_m > 0.0:
        t_hit = t_hit + sensor.range_noise_sigma_m * rng.standard_normal(t_hit.shape[0])
    points = dirs_s[hit] * t_hit[:, None]
    return LidarScan(points, is_ground[hit])


def ground_truth_boxes(ego: VehicleState, others, range_m: float, mount_offset=(0.0, 0.0, 0.0)) -> list:
    """Sensor-frame boxes of all non-ego vehicles within range of the sensor."""
    origin = sensor_pose(ego, mount_offset)
    rot = rot2d(-ego.yaw)
    boxes = []
    for other in others:
        rel = other.position - origin
        if np.linalg.norm(rel) > range_m:
            continue
        center = np.empty(3)
        center[:2] = rot @ rel[:2]
        center[2] = rel[2]
        boxes.append(BBox3D(center, other.dims, normalize_angle(other.yaw - ego.yaw)))
    return boxes
