"""Throttle/resistance joint-velocity dynamics with kinematic bicycle steering."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ContractError
from .geometry import Vec2


@dataclass(frozen=True)
class VehicleParams:
    """Actuator constants and platform limits.

    With the defaults, full throttle settles at exactly ``v_max``:
    ``C_T = v (v C_f1 + C_f2)`` gives ``20 = 5 (3 + 1)``.
    """

    C_T: float = 20.0
    C_f1: float = 0.6
    C_f2: float = 1.0
    wheelbase: float = 0.33
    v_max: float = 5.0
    delta_min: float = -0.36
    delta_max: float = 0.36
    t_s: float = 0.025

    def __post_init__(self):
        checks = [
            (self.C_T > 0, "C_T > 0"),
            (self.C_f1 >= 0, "C_f1 >= 0"),
            (self.C_f2 >= 0, "C_f2 >= 0"),
            (self.wheelbase > 0, "wheelbase > 0"),
            (self.v_max > 0, "v_max > 0"),
            (self.delta_min < 0 < self.delta_max, "delta_min < 0 < delta_max"),
            (self.t_s > 0, "t_s > 0"),
        ]
        for ok, rule in checks:
            if not ok:
                raise ContractError(f"invalid VehicleParams: {rule}")


@dataclass(frozen=True)
class VehicleState:
    position: Vec2
    yaw: float
    v_joint: float = 0.0


def wrap_angle(a: float) -> float:
    """Wrap ``a`` into (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    return math.pi if a == -math.pi else a


def resistive_force(v_prev: float, params: VehicleParams) -> float:
    return v_prev * (v_prev * params.C_f1 + params.C_f2)


def step_dynamics(state: VehicleState, throttle: float, steering: float, params: VehicleParams) -> VehicleState:
    """Advance one sampling period.

    The resistance uses the previous step's velocity (explicit Euler), the new
    velocity is clamped to ``[0, v_max]`` and the pose integrates with it.
    """
    if not 0.0 <= throttle <= 1.0:
        raise ContractError(f"throttle must lie in [0, 1], got {throttle}")
    if not params.delta_min <= steering <= params.delta_max:
        raise ContractError(
            f"steering must lie in [{params.delta_min}, {params.delta_max}], got {steering}"
        )
    v_prev = state.v_joint
    accel = params.C_T * throttle - resistive_force(v_prev, params)
    v = min(max(v_prev + params.t_s * accel, 0.0), params.v_max)

    yaw = state.yaw + params.t_s * (v / params.wheelbase) * math.tan(steering)
    x = state.position.x + params.t_s * v * math.cos(yaw)
    y = state.position.y + params.t_s * v * math.sin(yaw)
    return VehicleState(Vec2(x, y), wrap_angle(yaw), v)


def steady_state_speed(throttle: float, params: VehicleParams) -> float:
    """Positive root of ``C_T T = v (v C_f1 + C_f2)``, capped at ``v_max``."""
    rhs = params.C_T * throttle
    if params.C_f1 == 0:
        v = rhs / params.C_f2 if params.C_f2 > 0 else math.inf
    else:
        v = (-params.C_f2 + math.sqrt(params.C_f2**2 + 4 * params.C_f1 * rhs)) / (2 * params.C_f1)
    return min(v, params.v_max)
