"""Core scene types shared across the simulation, detector, and metrics."""

from dataclasses import dataclass, field

import numpy as np

from .geometry import normalize_angle


@dataclass
class BBox3D:
    """Oriented 3D box: center, (length, width, height), yaw about +z.

    Yaw is stored normalized to (-pi, pi]. ``label`` is the object class;
    only "car" is produced by the built-in world.
    """

    center: np.ndarray          # (3,) [m]
    dims: tuple                 # (l, w, h) [m]
    yaw: float                  # [rad]
    label: str = "car"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        l, w, h = (float(v) for v in self.dims)
        if l <= 0 or w <= 0 or h <= 0:
            raise ValueError(f"box dims must be positive, got {self.dims}")
        self.dims = (l, w, h)
        self.yaw = normalize_angle(float(self.yaw))

    def as_row(self):
        """[x, y, z, l, w, h, yaw] as plain floats."""
        return [float(v) for v in self.center] + list(self.dims) + [self.yaw]


@dataclass
class VehicleState:
    """Pose and motion of one vehicle at a tick."""

    id: str
    position: np.ndarray        # (3,) [m], z at half height
    yaw: float                  # [rad]
    speed: float                # [m/s]
    dims: tuple = (4.5, 1.8, 1.6)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.yaw = float(self.yaw)
        self.speed = float(self.speed)
        self.dims = tuple(float(v) for v in self.dims)

    def copy(self) -> "VehicleState":
        return VehicleState(self.id, self.position.copy(), self.yaw, self.speed, self.dims)

    def bbox(self) -> BBox3D:
        return BBox3D(self.position.copy(), self.dims, self.yaw)

    def velocity(self) -> np.ndarray:
        """World-frame velocity vector implied by speed and heading."""
        return np.array(
            [self.speed * np.cos(self.yaw), self.speed * np.sin(self.yaw), 0.0]
        )
