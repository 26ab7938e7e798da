"""
Baseline laps and a crossing obstacle
=====================================

The wall-following PID lap of the corridor, then the crossing scenarios
used to probe obstacle avoidance. A car that just drives straight at the
capped throttle gets hit almost every time.
"""

from pathlib import Path

from depthnav.env import TaskConfig
from depthnav.evaluation import ConstantController, PidBaseline, crossing_scenarios, evaluate
from depthnav.geometry import load_scene
from depthnav.vehicle import VehicleParams

TRACKS = Path(__file__).resolve().parents[1] / "tracks"

oval = load_scene(TRACKS / "corridor_oval.scene")
rep = evaluate(PidBaseline(), oval, episodes=1, task=TaskConfig(max_episode_steps=4000))
ep = rep.episodes[0]
print("PID: %d laps, lap times %s, coverage %.2f, collided %s"
      % (ep.laps, ["%.2f" % t for t in ep.lap_times], ep.coverage, ep.collision))

crossing = load_scene(TRACKS / "crossing.scene")
task = TaskConfig(throttle_cap=0.08, max_episode_steps=520)
scenarios = crossing_scenarios(crossing, VehicleParams(), task)
for seed in range(3):
    print(" ", scenarios(seed).name)
rep = evaluate(ConstantController(1.0, 0.0), crossing, episodes=10, task=task, scenarios=scenarios)
print("straight driver: %d/10 collisions, mean time alive %.1f s"
      % (rep.collisions, sum(e.sim_time for e in rep.episodes) / 10))
