"""Simulated planar LiDAR mounted on the vehicle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .geometry import Scene, Vec2, cast_rays
from .vehicle import VehicleState


@dataclass(frozen=True)
class LidarConfig:
    """Mount offset in the body frame plus the ray fan.

    ``mount_z`` is carried for completeness; planar intersection ignores it.
    """

    mount_x: float = 0.0
    mount_y: float = 0.0
    mount_z: float = 0.0
    n_rays: int = 170
    fov: float = 2.0 * math.pi / 3.0
    r_max: float = 10.0

    def __post_init__(self):
        if self.n_rays < 2:
            raise ContractError("n_rays must be at least 2")
        if not 0 < self.fov <= 2.0 * math.pi:
            raise ContractError("fov must lie in (0, 2*pi]")
        if not self.r_max > 0:
            raise ContractError("r_max must be positive")

    def relative_angles(self) -> np.ndarray:
        """Ray headings relative to the vehicle yaw, from right edge to left edge."""
        k = np.arange(self.n_rays)
        return -self.fov / 2.0 + self.fov * k / (self.n_rays - 1)


@dataclass(frozen=True)
class LidarScan:
    distances: np.ndarray
    hit_flags: np.ndarray


def ray_origin(state: VehicleState, config: LidarConfig) -> Vec2:
    c, s = math.cos(state.yaw), math.sin(state.yaw)
    return Vec2(
        state.position.x + c * config.mount_x - s * config.mount_y,
        state.position.y + s * config.mount_x + c * config.mount_y,
    )


def ray_directions(yaw: float, config: LidarConfig) -> np.ndarray:
    theta = yaw + config.relative_angles()
    return np.column_stack([np.cos(theta), np.sin(theta)])


def scan(scene: Scene, state: VehicleState, config: LidarConfig, time: float = 0.0) -> LidarScan:
    origin = ray_origin(state, config)
    dist, hits = cast_rays(scene, origin, ray_directions(state.yaw, config), config.r_max, time)
    return LidarScan(dist, hits)
