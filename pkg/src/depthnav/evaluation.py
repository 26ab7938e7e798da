"""Evaluation harness: controllers, lap timing, coverage and episode reports."""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .baseline import PidController, PidParams
from .env import RacingEnv, TaskConfig, is_flip, trace_row, write_trace
from .geometry import CircleObstacle, Scene, Vec2, clearance, segments_cross
from .lidar import LidarConfig, scan
from .vehicle import VehicleParams, VehicleState, step_dynamics

LAP_HYSTERESIS = 5.0
COVERAGE_CELL = 0.5


# ---------------------------------------------------------------------------
# controllers share ``reset(seed)`` and ``act(obs, info) -> raw action``


class PolicyController:
    def __init__(self, params: nn.PolicyParams, deterministic: bool = True):
        self.params = params
        self.deterministic = deterministic
        self.rng = np.random.default_rng(0)

    def reset(self, seed: int = 0) -> None:
        self.rng = np.random.default_rng(seed)

    def act(self, obs, info=None):
        action, _, _ = nn.act(self.params, obs, self.rng, deterministic=self.deterministic)
        return action


class PidBaseline:
    def __init__(self, params: PidParams = PidParams(), lidar: LidarConfig = LidarConfig(), dt: float = 0.025):
        self.pid = PidController(params, lidar, dt)

    def reset(self, seed: int = 0) -> None:
        self.pid.reset()

    def act(self, obs, info):
        return self.pid.act(info["distances"])


class ConstantController:
    """Fixed raw action; ``(-1, 0)`` stays put, ``(1, 0)`` drives straight."""

    def __init__(self, a_t: float, a_delta: float = 0.0):
        self.action = np.array([a_t, a_delta], dtype=np.float64)

    def reset(self, seed: int = 0) -> None:
        pass

    def act(self, obs, info=None):
        return self.action


# ---------------------------------------------------------------------------
# metrics


class LapTimer:
    """Counts forward crossings of the finish line, at least ``hysteresis`` s apart."""

    def __init__(self, finish, hysteresis: float = LAP_HYSTERESIS):
        self.finish = finish
        self.hysteresis = hysteresis
        self.last = 0.0
        self.laps: list[float] = []

    def update(self, p0, p1, t1: float) -> bool:
        if self.finish is None:
            return False
        if segments_cross(p0, p1, self.finish) == 1 and t1 - self.last >= self.hysteresis:
            self.laps.append(t1 - self.last)
            self.last = t1
            return True
        return False


class CoverageGrid:
    """Visited fraction of reachable free cells on a square grid.

    Free cells are those whose centers keep ``footprint`` clearance from the
    static scene; only the ones 4-connected to the start cell count.
    """

    def __init__(self, scene: Scene, footprint: float, cell: float = COVERAGE_CELL):
        self.cell = cell
        xmin, ymin, xmax, ymax = scene.bounds
        self.origin = (xmin, ymin)
        nx = max(int(math.ceil((xmax - xmin) / cell)), 1)
        ny = max(int(math.ceil((ymax - ymin) / cell)), 1)
        static = replace(scene, circles=tuple(c for c in scene.circles if not c.moving))
        free = np.zeros((nx, ny), dtype=bool)
        for i in range(nx):
            for j in range(ny):
                c = (xmin + (i + 0.5) * cell, ymin + (j + 0.5) * cell)
                free[i, j] = clearance(static, c) > footprint
        self.free = self._reachable(free, self.index(scene.start_position))
        self.n_free = int(self.free.sum())
        self.visited = np.zeros_like(self.free)
        self.n_visited = 0

    def index(self, p):
        i = int((p[0] - self.origin[0]) // self.cell)
        j = int((p[1] - self.origin[1]) // self.cell)
        return i, j

    @staticmethod
    def _reachable(free, start):
        out = np.zeros_like(free)
        nx, ny = free.shape
        i, j = start
        if not (0 <= i < nx and 0 <= j < ny):
            return out
        free = free.copy()
        free[i, j] = True  # the start cell always counts as reachable
        queue = deque([start])
        out[start] = True
        while queue:
            i, j = queue.popleft()
            for a, b in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                if 0 <= a < nx and 0 <= b < ny and free[a, b] and not out[a, b]:
                    out[a, b] = True
                    queue.append((a, b))
        return out

    def visit(self, p) -> float:
        i, j = self.index(p)
        nx, ny = self.free.shape
        if 0 <= i < nx and 0 <= j < ny and self.free[i, j] and not self.visited[i, j]:
            self.visited[i, j] = True
            self.n_visited += 1
        return self.fraction

    @property
    def fraction(self) -> float:
        return self.n_visited / self.n_free if self.n_free else 0.0


# ---------------------------------------------------------------------------
# episodes and reports


@dataclass
class EpisodeReport:
    seed: int
    steps: int
    collision: bool
    truncated: bool
    lap_times: list[float]
    laps: int
    mean_speed: float
    coverage: float
    flip_rate: float
    episode_return: float
    sim_time: float


@dataclass
class EvalReport:
    controller: str
    scene: str
    deterministic: bool
    episodes: list[EpisodeReport] = field(default_factory=list)

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    @property
    def collisions(self) -> int:
        return sum(e.collision for e in self.episodes)

    @property
    def lap_times(self) -> list[float]:
        return [t for e in self.episodes for t in e.lap_times]

    @property
    def mean_lap_time(self) -> float:
        laps = self.lap_times
        return float(np.mean(laps)) if laps else math.nan

    @property
    def collision_free_laps(self) -> int:
        """Episodes that completed at least one lap without colliding first."""
        return sum(1 for e in self.episodes if e.laps >= 1 and not e.collision)

    def aggregate(self) -> dict:
        eps = self.episodes
        return {
            "episodes": len(eps),
            "collisions": self.collisions,
            "collision_free_laps": self.collision_free_laps,
            "total_laps": sum(e.laps for e in eps),
            "mean_lap_time": self.mean_lap_time,
            "mean_steps": float(np.mean([e.steps for e in eps])) if eps else math.nan,
            "mean_speed": float(np.mean([e.mean_speed for e in eps])) if eps else math.nan,
            "mean_coverage": float(np.mean([e.coverage for e in eps])) if eps else math.nan,
            "mean_flip_rate": float(np.mean([e.flip_rate for e in eps])) if eps else math.nan,
            "mean_return": float(np.mean([e.episode_return for e in eps])) if eps else math.nan,
        }

    def to_dict(self) -> dict:
        return {
            "controller": self.controller,
            "scene": self.scene,
            "deterministic": self.deterministic,
            "aggregate": self.aggregate(),
            "episodes": [asdict(e) for e in self.episodes],
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(_jsonable(self.to_dict()), indent=2) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def run_episode(env: RacingEnv, controller, seed: int = 0, stop_after_laps: int | None = None,
                trace: list | None = None, coverage: CoverageGrid | None = None) -> EpisodeReport:
    scene = env.scene
    obs = env.reset(seed=seed)
    controller.reset(seed)
    timer = LapTimer(scene.finish)
    if coverage is None:
        coverage = CoverageGrid(scene, env.task.footprint_radius)
    coverage.visit(scene.start_position)
    info = {"distances": obs * env.lidar.r_max if env.task.normalize_obs else obs}
    pos = scene.start_position
    speeds = []
    flips = 0
    prev_a_delta = 0.0
    result = None
    while True:
        raw = controller.act(obs, info)
        result = env.step(raw)
        ep = env.episode
        info = result.info
        speeds.append(info["speed"])
        flips += is_flip(prev_a_delta, info["a_delta"])
        prev_a_delta = info["a_delta"]
        new_pos = info["position"]
        timer.update(pos, new_pos, ep.sim_time)
        coverage.visit(new_pos)
        pos = new_pos
        if trace is not None:
            trace.append(trace_row(ep, result))
        obs = result.observation
        if result.terminated or result.truncated:
            break
        if stop_after_laps is not None and len(timer.laps) >= stop_after_laps:
            break
    ep = env.episode
    return EpisodeReport(
        seed=seed,
        steps=ep.step_count,
        collision=bool(result.terminated),
        truncated=bool(result.truncated),
        lap_times=list(timer.laps),
        laps=len(timer.laps),
        mean_speed=float(np.mean(speeds)),
        coverage=coverage.fraction,
        flip_rate=flips / max(ep.step_count, 1),
        episode_return=ep.cumulative_reward,
        sim_time=ep.sim_time,
    )


def evaluate(controller, scene: Scene, episodes: int = 10, deterministic: bool = True, seed: int = 0,
             vehicle: VehicleParams | None = None, lidar: LidarConfig | None = None,
             task: TaskConfig | None = None, out_dir=None, stop_after_laps: int | None = None,
             scenarios=None, name: str | None = None) -> EvalReport:
    """Run ``episodes`` episodes of ``controller`` on ``scene``.

    ``controller`` is a controller object or a :class:`nn.PolicyParams`
    (wrapped in :class:`PolicyController`). ``scenarios`` optionally maps an
    episode seed to a per-episode scene (moving-obstacle variants). With
    ``out_dir`` set, writes ``report.json`` and one trajectory CSV per episode.
    """
    if isinstance(controller, nn.PolicyParams):
        controller = PolicyController(controller, deterministic)
    vehicle = vehicle or VehicleParams()
    lidar = lidar or LidarConfig()
    task = task or TaskConfig()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = EvalReport(name or type(controller).__name__, scene.name, deterministic)
    coverage_cache = None
    for k in range(episodes):
        ep_seed = seed + k
        ep_scene = scenarios(ep_seed) if scenarios is not None else scene
        if scenarios is not None or coverage_cache is None:
            coverage_cache = CoverageGrid(ep_scene, task.footprint_radius)
        coverage = _fresh(coverage_cache)
        env = RacingEnv(ep_scene, vehicle, lidar, task)
        trace = [] if out is not None else None
        rep = run_episode(env, controller, ep_seed, stop_after_laps, trace, coverage)
        report.episodes.append(rep)
        if out is not None:
            write_trace(out / f"episode_{k:03d}.csv", trace)
    if out is not None:
        report.write(out / "report.json")
    return report


def _fresh(grid: CoverageGrid) -> CoverageGrid:
    g = object.__new__(CoverageGrid)
    g.__dict__.update(grid.__dict__)
    g.visited = np.zeros_like(grid.free)
    g.n_visited = 0
    return g


def inference_latency(controller, scene: Scene, lidar: LidarConfig | None = None, repeats: int = 1000) -> float:
    """Median wall-clock seconds per ``act`` call on the start-pose observation.

    Host-dependent, so it is kept out of the (deterministic) episode reports.
    """
    if isinstance(controller, nn.PolicyParams):
        controller = PolicyController(controller)
    lidar = lidar or LidarConfig()
    distances = scan(scene, VehicleState(scene.start_position, scene.start_yaw), lidar).distances
    obs = distances / lidar.r_max
    info = {"distances": distances}
    controller.reset(0)
    times = np.empty(repeats)
    for k in range(repeats):
        t0 = time.perf_counter()
        controller.act(obs, info)
        times[k] = time.perf_counter() - t0
    return float(np.median(times))


# ---------------------------------------------------------------------------
# moving-obstacle scenarios


def crossing_scenarios(scene: Scene, vehicle: VehicleParams, task: TaskConfig,
                       window=(5.0, 9.0), jitter: float = 0.15):
    """Seeded re-timings of the scene's moving circle across the corridor.

    For each seed the circle is placed so that it reaches the start line's
    lateral position at a random time ``t*`` in ``window`` exactly where a
    straight-driving car (same throttle cap) would be at ``t*``, plus a small
    seeded offset along the corridor.
    """
    movers = [c for c in scene.circles if c.moving]
    if len(movers) != 1:
        raise ValueError("crossing scenarios need exactly one moving circle in the template scene")
    template = movers[0]
    static = tuple(c for c in scene.circles if not c.moving)
    vel = np.array(template.velocity, dtype=np.float64)
    speed = float(np.hypot(*vel))
    lane_y = scene.start_position.y

    def straight_position(t):
        state = VehicleState(scene.start_position, scene.start_yaw, 0.0)
        n = int(round(t / vehicle.t_s))
        for _ in range(n):
            state = step_dynamics(state, min(1.0, task.throttle_cap), 0.0, vehicle)
        return state.position

    def make(seed: int) -> Scene:
        rng = np.random.default_rng(seed)
        t_star = float(rng.uniform(*window))
        offset = float(rng.uniform(-jitter, jitter))
        px, _ = straight_position(t_star)
        # circle centre at t_star = (px + offset, lane_y); back out its t=0 position
        cx = px + offset - vel[0] * t_star
        cy = lane_y - vel[1] * t_star
        mover = CircleObstacle(Vec2(cx, cy), template.radius, Vec2(*vel))
        return replace(scene, circles=static + (mover,), name=f"{scene.name}[seed={seed},t*={t_star:.2f}]")

    make.speed = speed
    return make
