"""``depthnav`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, nn
from .config import ConfigError, RunConfig, load_config, write_config
from .env import TaskConfig, read_trace, reset, step
from .errors import CheckpointError, SceneParseError, SceneValidationError
from .evaluation import PidBaseline, crossing_scenarios, evaluate, inference_latency
from .geometry import Vec2, load_scene
from .lidar import scan
from .ppo import Trainer, worker_threads
from .vehicle import VehicleState

log = logging.getLogger("depthnav")


def _setup_logging(verbose: bool = True):
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root = logging.getLogger("depthnav")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)
    root.propagate = False


def _overrides(pairs):
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def provenance(cfg: RunConfig) -> dict:
    return {
        "depthnav": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "seed": cfg.seed,
        "DEPTHNAV_THREADS": os.environ.get("DEPTHNAV_THREADS", ""),
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args.set))
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.ini", cfg)
    (out / "provenance.json").write_text(json.dumps(provenance(cfg), indent=2) + "\n", encoding="utf-8")
    scene = load_scene(cfg.scene, cfg.task.footprint_radius)
    trainer = Trainer(scene, cfg.ppo, cfg.seed, cfg.vehicle, cfg.lidar, cfg.task, out_dir=out)
    if args.resume:
        trainer.load(args.resume)
    log.info("training on %s for %d steps (seed %d, %d worker threads) -> %s",
             scene.name, cfg.ppo.total_steps, cfg.seed, min(worker_threads(), cfg.ppo.n_envs), out)
    trainer.run()
    recs = trainer.records
    last = recs[-1].moving_avg if recs else float("nan")
    print(f"done: {trainer.global_step} steps, {len(recs)} episodes, moving average {last:.1f}")
    print(f"checkpoint: {out / 'checkpoint_final.npz'}")
    print(f"learning curve: {out / 'learning_curve.csv'}")
    return 0


def _controller(cfg: RunConfig, kind: str, checkpoint, deterministic: bool):
    if kind == "pid":
        return PidBaseline(cfg.pid, cfg.lidar, cfg.vehicle.t_s), "pid"
    if checkpoint is None:
        raise ConfigError("policy evaluation needs --checkpoint (or [run] checkpoint)")
    arch = {"obs_dim": cfg.lidar.n_rays, "hidden": [cfg.ppo.hidden, cfg.ppo.hidden], "act_dim": 2,
            "activation": "tanh", "policy": "diagonal_gaussian"}
    ck = nn.load_checkpoint(checkpoint, expect_architecture=arch)
    return ck["params"], "policy"


def cmd_eval(args) -> int:
    overrides = _overrides(args.set)
    if args.episodes is not None:
        overrides["eval.episodes"] = args.episodes
    if args.deterministic is not None:
        overrides["eval.deterministic"] = "true" if args.deterministic else "false"
    cfg = load_config(args.config, overrides)
    checkpoint = Path(args.checkpoint) if args.checkpoint else cfg.checkpoint
    kinds = [args.controller or cfg.controller]
    if args.compare_pid and "pid" not in kinds:
        kinds.append("pid")
    scene = load_scene(cfg.scene, cfg.task.footprint_radius)
    scenarios = None
    if cfg.eval.scenario == "crossing":
        scenarios = crossing_scenarios(scene, cfg.vehicle, cfg.task)
    out_root = Path(args.out) if args.out else cfg.output_dir
    summary = {}
    for kind in kinds:
        controller, name = _controller(cfg, kind, checkpoint, cfg.eval.deterministic)
        report = evaluate(
            controller, scene, cfg.eval.episodes, cfg.eval.deterministic, cfg.seed,
            cfg.vehicle, cfg.lidar, cfg.task, out_dir=out_root / f"eval_{name}",
            stop_after_laps=cfg.eval.stop_after_laps or None, scenarios=scenarios, name=name,
        )
        agg = report.aggregate()
        agg["act_latency_s"] = inference_latency(controller, scene, cfg.lidar)
        summary[name] = agg
        lap = f"{agg['mean_lap_time']:.3f}s" if math.isfinite(agg["mean_lap_time"]) else "n/a"
        print(f"[{name}] episodes={agg['episodes']} collisions={agg['collisions']} laps={agg['total_laps']} "
              f"mean_lap_time={lap} mean_speed={agg['mean_speed']:.3f}m/s "
              f"coverage={agg['mean_coverage']:.3f} flip_rate={agg['mean_flip_rate']:.4f} "
              f"act_latency={1e6 * agg['act_latency_s']:.1f}us")
    if len(summary) > 1:
        (out_root / "comparison.json").write_text(
            json.dumps({k: {kk: (None if isinstance(vv, float) and not math.isfinite(vv) else vv)
                            for kk, vv in v.items()} for k, v in summary.items()}, indent=2) + "\n",
            encoding="utf-8")
    return 0


def cmd_selfcheck(args) -> int:
    from . import selfcheck

    if args.what == "grad":
        res = selfcheck.gradient_check(args.instances, args.seed)
        print(f"gradient check: {len(res.per_instance)} instances x {res.n_params} parameters, "
              f"max relative error {res.max_rel_error:.3e} (tolerance {selfcheck.GRAD_TOL:g}) "
              f"in {res.seconds:.1f}s")
        return 0 if res.passed else 1
    res = selfcheck.raycast_check(args.n, args.seed)
    print(f"ray-cast check: {res.n} random scenes, max |closed-form - marching| {res.max_abs_error:.3e} m "
          f"(tolerance {selfcheck.RAY_TOL:g}), hit-flag agreement {100 * res.flag_agreement:.1f}% "
          f"in {res.seconds:.1f}s")
    for m in res.mismatches[:10]:
        print(f"  mismatch: case {m[0]} closed={m[1]:.6f} marching={m[2]:.6f} hits={m[3]}/{m[4]}")
    return 0 if res.passed else 1


def cmd_scene(args) -> int:
    scene = load_scene(args.path)
    moving = sum(c.moving for c in scene.circles)
    print(f"{args.path}: ok, '{scene.name}', {len(scene.segments)} segments, {len(scene.circles)} circles "
          f"({moving} moving), bounds {scene.bounds}, finish line {'yes' if scene.finish else 'no'}")
    return 0


def _find_config(trace_path: Path):
    for parent in [trace_path.parent, *trace_path.parents]:
        cand = parent / "config.ini"
        if cand.is_file():
            return cand
    return None


def cmd_replay(args) -> int:
    trace_path = Path(args.trajectory)
    rows = read_trace(trace_path)
    cfg_path = Path(args.config) if args.config else _find_config(trace_path)
    if cfg_path is not None:
        cfg = load_config(cfg_path)
        vehicle, lidar, task = cfg.vehicle, cfg.lidar, cfg.task
        scene_path = Path(args.scene) if args.scene else cfg.scene
    else:
        if not args.scene:
            raise ConfigError("replay needs --scene or a config.ini next to the trajectory")
        from .lidar import LidarConfig
        from .vehicle import VehicleParams
        vehicle, lidar, task = VehicleParams(), LidarConfig(), TaskConfig()
        scene_path = Path(args.scene)
    if args.max_steps:
        task = replace(task, max_episode_steps=max(task.max_episode_steps, len(rows)))
    scene = load_scene(scene_path, task.footprint_radius)

    _, ep = reset(scene, 0, vehicle, lidar, task)
    worst = worst_scan = 0.0
    for row in rows:
        result, ep = step(ep, (row["a_T"], row["a_delta"]), scene, vehicle, lidar, task)
        got = (result.info["position"].x, result.info["position"].y, ep.vehicle.yaw, ep.vehicle.v_joint,
               result.reward, ep.sim_time)
        want = (row["x"], row["y"], row["yaw"], row["v"], row["reward"], row["sim_time"])
        worst = max(worst, max(abs(a - b) for a, b in zip(got, want)))
        # re-render the scan from the recorded pose alone
        pose = VehicleState(Vec2(row["x"], row["y"]), row["yaw"], row["v"])
        rendered = float(np.min(scan(scene, pose, lidar, row["sim_time"]).distances))
        worst_scan = max(worst_scan, abs(rendered - row["min_range"]),
                         abs(rendered - float(np.min(result.info["distances"]))))
        if result.terminated != row["terminated"]:
            print(f"step {row['step']}: termination flag differs (trace {row['terminated']}, replay {result.terminated})")
            return 1
        if ep.done:
            break
    ok = worst <= args.tol and worst_scan <= args.tol
    print(f"replayed {len(rows)} steps from {trace_path.name}: max state deviation {worst:.3e}, "
          f"max scan deviation {worst_scan:.3e} ({'consistent' if ok else 'INCONSISTENT'}, tolerance {args.tol:g})")
    return 0 if ok else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="depthnav", description="2D LiDAR racing simulator and PPO trainer")
    p.add_argument("--version", action="version", version=f"depthnav {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only print results")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a policy from a run config")
    t.add_argument("config")
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    t.add_argument("--resume", metavar="CHECKPOINT", help="continue from a training checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint or the PID baseline")
    e.add_argument("config")
    e.add_argument("--checkpoint")
    e.add_argument("--episodes", type=int)
    det = e.add_mutually_exclusive_group()
    det.add_argument("--deterministic", dest="deterministic", action="store_true", default=None,
                     help="act with the policy mean")
    det.add_argument("--stochastic", dest="deterministic", action="store_false", help="sample actions")
    e.add_argument("--controller", choices=("policy", "pid"))
    e.add_argument("--compare-pid", action="store_true", help="also evaluate the PID baseline")
    e.add_argument("--out", help="output directory (default: [run] output_dir)")
    e.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("selfcheck", help="run a numerical oracle")
    ssub = s.add_subparsers(dest="what", required=True)
    g = ssub.add_parser("grad", help="analytic vs finite-difference gradients")
    g.add_argument("--instances", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    r = ssub.add_parser("raycast", help="closed-form vs marching ray casts")
    r.add_argument("--n", type=int, default=1000)
    r.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_selfcheck)

    sc = sub.add_parser("scene", help="scene file tools")
    scsub = sc.add_subparsers(dest="action", required=True)
    v = scsub.add_parser("validate", help="parse and validate a scene file")
    v.add_argument("path")
    sc.set_defaults(func=cmd_scene)

    rp = sub.add_parser("replay", help="re-simulate a trajectory CSV and check consistency")
    rp.add_argument("trajectory")
    rp.add_argument("--scene")
    rp.add_argument("--config")
    rp.add_argument("--tol", type=float, default=1e-9)
    rp.add_argument("--max-steps", action="store_true", help="ignore the configured step cap")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(not args.quiet)
    try:
        return args.func(args)
    except (ConfigError, SceneParseError, SceneValidationError, CheckpointError) as exc:
        print(f"depthnav: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"depthnav: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
