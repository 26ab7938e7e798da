"""Wall-following PID baseline driven by the same LiDAR scan as the policy.

Rules:

* side distance = minimum range over rays 45-90 degrees off-center on the
  followed side (clipped to the sensor's FoV);
* ``error = target_wall_distance - side_distance``; steering is the PID output
  signed so a positive error steers away from the wall, clamped to [-1, 1];
* throttle is ``cruise_throttle``, scaled down linearly once the frontal
  minimum (rays within ``front_half_angle`` of center) drops below
  ``slowdown_distance``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .lidar import LidarConfig, LidarScan


@dataclass(frozen=True)
class PidParams:
    kp: float = 1.5
    ki: float = 0.0
    kd: float = 0.3
    target_wall_distance: float = 0.8
    cruise_throttle: float = 0.5
    side: str = "left"
    slowdown_distance: float = 2.0
    front_half_angle: float = math.radians(15.0)
    sector_min_angle: float = math.radians(45.0)
    sector_max_angle: float = math.radians(90.0)

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ContractError("PID gains must be nonnegative")
        if not self.target_wall_distance > 0:
            raise ContractError("target_wall_distance must be positive")
        if not 0 <= self.cruise_throttle <= 1:
            raise ContractError("cruise_throttle must lie in [0, 1]")
        if self.side not in ("left", "right"):
            raise ContractError("side must be 'left' or 'right'")


class PidController:
    """Stateful wall follower; call :meth:`reset` at each episode start."""

    def __init__(self, params: PidParams = PidParams(), lidar: LidarConfig = LidarConfig(), dt: float = 0.025):
        self.params = params
        self.dt = dt
        angles = lidar.relative_angles()
        sign = 1.0 if params.side == "left" else -1.0
        side_mask = (sign * angles >= params.sector_min_angle) & (sign * angles <= params.sector_max_angle)
        if not side_mask.any():
            # FoV narrower than the sector: fall back to the outermost ray on that side
            side_mask = np.zeros_like(angles, dtype=bool)
            side_mask[-1 if sign > 0 else 0] = True
        self._side = side_mask
        self._front = np.abs(angles) <= params.front_half_angle
        if not self._front.any():
            self._front[np.argmin(np.abs(angles))] = True
        self._sign = sign
        self.reset()

    def reset(self, seed: int | None = None) -> None:
        self.integral = 0.0
        self.prev_error = None

    def act(self, distances) -> np.ndarray:
        """Raw ``(a_T, a_delta)`` from one scan's distances in meters."""
        p = self.params
        d = np.asarray(distances, dtype=np.float64)
        side = float(d[self._side].min())
        front = float(d[self._front].min())

        error = p.target_wall_distance - side
        self.integral += error * self.dt
        deriv = 0.0 if self.prev_error is None else (error - self.prev_error) / self.dt
        self.prev_error = error
        u = p.kp * error + p.ki * self.integral + p.kd * deriv
        # positive error -> wall too close -> turn away (right for a left wall)
        steering = min(max(-self._sign * u, -1.0), 1.0)

        throttle = p.cruise_throttle * min(front / p.slowdown_distance, 1.0)
        return np.array([throttle, steering])


def pid_act(scan: LidarScan, controller: PidController) -> np.ndarray:
    return controller.act(scan.distances)
