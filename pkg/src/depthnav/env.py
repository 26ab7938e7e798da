"""The racing task: observations, action mapping, reward and episode stepping.

The functional core (:func:`reset`, :func:`step`) works on immutable
:class:`EpisodeState` values. :class:`RacingEnv` wraps it with a gym-like
``reset()/step()`` interface for the trainer and evaluator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import ContractError
from .geometry import DEFAULT_FOOTPRINT, Scene, collision_check
from .lidar import LidarConfig, LidarScan, scan
from .vehicle import VehicleParams, VehicleState, step_dynamics

THROTTLE_REWARD = 5.0
FLIP_PENALTY = 2.0
_FLIP_TOL = 1e-6


@dataclass(frozen=True)
class TaskConfig:
    max_episode_steps: int = 10_000
    footprint_radius: float = DEFAULT_FOOTPRINT
    normalize_obs: bool = True
    # compare unclamped network outputs in the flip test instead of clamped ones
    penalty_on_raw: bool = False
    flip_penalty: float = FLIP_PENALTY
    # evaluation-only throttle ceiling applied after the action mapping
    throttle_cap: float = 1.0

    def __post_init__(self):
        if self.max_episode_steps < 1:
            raise ContractError("max_episode_steps must be >= 1")
        if not self.footprint_radius > 0:
            raise ContractError("footprint_radius must be positive")
        if not 0.0 <= self.throttle_cap <= 1.0:
            raise ContractError("throttle_cap must lie in [0, 1]")


class ControlInput(NamedTuple):
    throttle: float
    steering: float


def clamp_action(raw) -> tuple[float, float]:
    a_t = min(max(float(raw[0]), -1.0), 1.0)
    a_d = min(max(float(raw[1]), -1.0), 1.0)
    return a_t, a_d


def map_action(raw, params: VehicleParams) -> ControlInput:
    """Normalized ``(a_T, a_delta)`` to throttle in [0, 1] and steering in radians."""
    a_t, a_d = clamp_action(raw)
    throttle = min(max(a_t, 0.0), 1.0)
    steering = max(min(a_d * params.delta_max, params.delta_max), params.delta_min)
    return ControlInput(throttle, steering)


def is_flip(a_delta_prev: float, a_delta_curr: float) -> bool:
    """Both steering actions saturated at opposite bounds."""
    return a_delta_prev * a_delta_curr <= -1.0 + _FLIP_TOL


def compute_reward(throttle: float, a_delta_prev: float, a_delta_curr: float, penalty: float = FLIP_PENALTY) -> float:
    r = THROTTLE_REWARD * throttle * throttle
    if penalty and is_flip(a_delta_prev, a_delta_curr):
        r -= penalty
    return r


def observe(lidar_scan: LidarScan, config: LidarConfig, task: TaskConfig) -> np.ndarray:
    if task.normalize_obs:
        return lidar_scan.distances / config.r_max
    return lidar_scan.distances.copy()


@dataclass(frozen=True)
class EpisodeState:
    vehicle: VehicleState
    step_count: int = 0
    prev_a_delta: float = 0.0
    sim_time: float = 0.0
    cumulative_reward: float = 0.0
    seed: int = 0
    done: bool = False


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    info: dict = field(default_factory=dict)


def reset(
    scene: Scene,
    seed: int = 0,
    vehicle: VehicleParams | None = None,
    lidar: LidarConfig | None = None,
    task: TaskConfig | None = None,
) -> tuple[np.ndarray, EpisodeState]:
    """Place the vehicle at rest on the scene's start pose."""
    lidar = lidar or LidarConfig()
    task = task or TaskConfig()
    state = VehicleState(scene.start_position, scene.start_yaw, 0.0)
    ep = EpisodeState(vehicle=state, seed=seed)
    return observe(scan(scene, state, lidar, 0.0), lidar, task), ep


def step(
    episode: EpisodeState,
    raw,
    scene: Scene,
    vehicle: VehicleParams | None = None,
    lidar: LidarConfig | None = None,
    task: TaskConfig | None = None,
) -> tuple[StepResult, EpisodeState]:
    if episode.done:
        raise ContractError("episode already finished; call reset()")
    vehicle = vehicle or VehicleParams()
    lidar = lidar or LidarConfig()
    task = task or TaskConfig()

    a_t, a_d = clamp_action(raw)
    control = map_action((a_t, a_d), vehicle)
    throttle = min(control.throttle, task.throttle_cap)
    state = step_dynamics(episode.vehicle, throttle, control.steering, vehicle)
    sim_time = episode.sim_time + vehicle.t_s
    step_count = episode.step_count + 1

    lidar_scan = scan(scene, state, lidar, sim_time)
    obs = observe(lidar_scan, lidar, task)

    curr = float(raw[1]) if task.penalty_on_raw else a_d
    flip = is_flip(episode.prev_a_delta, curr)
    reward = compute_reward(throttle, episode.prev_a_delta, curr, task.flip_penalty)

    terminated = collision_check(scene, state.position, task.footprint_radius, sim_time)
    truncated = step_count >= task.max_episode_steps and not terminated
    info = {
        "speed": state.v_joint,
        "position": state.position,
        "yaw": state.yaw,
        "a_T": a_t,
        "a_delta": a_d,
        "throttle": throttle,
        "steering": control.steering,
        "throttle_reward": THROTTLE_REWARD * throttle * throttle,
        "flip": flip,
        "distances": lidar_scan.distances,
        "flip_penalty": -task.flip_penalty if (flip and task.flip_penalty) else 0.0,
    }
    new_episode = replace(
        episode,
        vehicle=state,
        step_count=step_count,
        prev_a_delta=curr,
        sim_time=sim_time,
        cumulative_reward=episode.cumulative_reward + reward,
        done=terminated or truncated,
    )
    return StepResult(obs, reward, terminated, truncated, info), new_episode


class RacingEnv:
    """Stateful convenience wrapper around :func:`reset` and :func:`step`."""

    def __init__(self, scene: Scene, vehicle=None, lidar=None, task=None):
        self.scene = scene
        self.vehicle = vehicle or VehicleParams()
        self.lidar = lidar or LidarConfig()
        self.task = task or TaskConfig()
        self.episode: EpisodeState | None = None

    @property
    def obs_dim(self) -> int:
        return self.lidar.n_rays

    def reset(self, seed: int = 0) -> np.ndarray:
        obs, self.episode = reset(self.scene, seed, self.vehicle, self.lidar, self.task)
        return obs

    def step(self, raw) -> StepResult:
        if self.episode is None:
            raise ContractError("call reset() before step()")
        result, self.episode = step(self.episode, raw, self.scene, self.vehicle, self.lidar, self.task)
        return result


# ---------------------------------------------------------------------------
# episode traces

TRACE_COLUMNS = ("step", "sim_time", "x", "y", "yaw", "v", "a_T", "a_delta", "T", "delta", "reward", "terminated", "min_range")


def trace_row(episode: EpisodeState, result: StepResult) -> dict:
    info = result.info
    return {
        "step": episode.step_count,
        "sim_time": episode.sim_time,
        "x": info["position"].x,
        "y": info["position"].y,
        "yaw": info["yaw"],
        "v": info["speed"],
        "a_T": info["a_T"],
        "a_delta": info["a_delta"],
        "T": info["throttle"],
        "delta": info["steering"],
        "reward": result.reward,
        "terminated": int(result.terminated),
        "min_range": float(np.min(info["distances"])),
    }


def write_trace(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def read_trace(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {k: float(v) for k, v in row.items()}
        parsed["step"] = int(parsed["step"])
        parsed["terminated"] = bool(int(parsed["terminated"]))
        out.append(parsed)
    return out


def _fmt(v):
    # repr keeps floats exact so traces can be replayed bit-for-bit
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v
