"""Run configuration files (INI-style ``key = value`` sections).

Sections mirror the config dataclasses one-to-one::

    [run]      scene, seed, output_dir, controller, checkpoint
    [ppo]      Hyperparams
    [vehicle]  VehicleParams
    [lidar]    LidarConfig
    [task]     TaskConfig
    [pid]      PidParams
    [eval]     EvalOptions

Relative paths resolve against the config file's directory. Floats are
written with ``repr`` so a resolved config reloads bit-exactly.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .baseline import PidParams
from .env import TaskConfig
from .lidar import LidarConfig
from .ppo import Hyperparams
from .vehicle import VehicleParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalOptions:
    episodes: int = 10
    deterministic: bool = True
    # stop an episode once this many laps are done (0 = run to termination/truncation)
    stop_after_laps: int = 0
    # "none" or "crossing" (re-timed moving circle per episode seed)
    scenario: str = "none"


@dataclass(frozen=True)
class RunConfig:
    scene: Path
    seed: int = 0
    output_dir: Path = Path("runs/default")
    controller: str = "policy"
    checkpoint: Path | None = None
    ppo: Hyperparams = field(default_factory=Hyperparams)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    pid: PidParams = field(default_factory=PidParams)
    eval: EvalOptions = field(default_factory=EvalOptions)

    def __post_init__(self):
        if self.controller not in ("policy", "pid"):
            raise ConfigError(f"controller must be 'policy' or 'pid', got {self.controller!r}")
        if not Path(self.scene).is_file():
            raise ConfigError(f"scene file not found: {self.scene}")
        if self.checkpoint is not None and not Path(self.checkpoint).is_file():
            raise ConfigError(f"checkpoint not found: {self.checkpoint}")
        if self.eval.scenario not in ("none", "crossing"):
            raise ConfigError(f"eval.scenario must be 'none' or 'crossing', got {self.eval.scenario!r}")


_SECTIONS = {
    "ppo": Hyperparams,
    "vehicle": VehicleParams,
    "lidar": LidarConfig,
    "task": TaskConfig,
    "pid": PidParams,
    "eval": EvalOptions,
}
_RUN_KEYS = ("scene", "seed", "output_dir", "controller", "checkpoint")


def _convert(section, key, raw: str, default):
    try:
        if isinstance(default, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except (KeyError, ValueError):
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None


def _build(section: str, cls, values: dict):
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    unknown = set(values) - set(defaults)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    kwargs = {k: _convert(section, k, v, defaults[k]) for k, v in values.items()}
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_config(text: str, base_dir=".", overrides: dict | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = set(cp.sections()) - set(_SECTIONS) - {"run"}
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    sections = {name: dict(cp[name]) if cp.has_section(name) else {} for name in ("run", *_SECTIONS)}
    for dotted, value in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        sections.setdefault(sec, {})[key] = str(value)

    run = sections["run"]
    bad = set(run) - set(_RUN_KEYS)
    if bad:
        raise ConfigError(f"[run] unknown keys: {', '.join(sorted(bad))}")
    if "scene" not in run:
        raise ConfigError("[run] scene is required")
    base = Path(base_dir)

    def path(v):
        p = Path(v.strip())
        return p if p.is_absolute() else (base / p).resolve()

    try:
        seed = int(run.get("seed", "0"))
    except ValueError:
        raise ConfigError(f"[run] seed: cannot parse {run['seed']!r} as int") from None
    checkpoint = run.get("checkpoint", "").strip()
    return RunConfig(
        scene=path(run["scene"]),
        seed=seed,
        output_dir=path(run.get("output_dir", "runs/default")),
        controller=run.get("controller", "policy").strip(),
        checkpoint=path(checkpoint) if checkpoint else None,
        **{name: _build(name, cls, sections[name]) for name, cls in _SECTIONS.items()},
    )


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), path.parent, overrides)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: RunConfig) -> str:
    lines = ["[run]",
             f"scene = {cfg.scene}",
             f"seed = {cfg.seed}",
             f"output_dir = {cfg.output_dir}",
             f"controller = {cfg.controller}",
             f"checkpoint = {cfg.checkpoint or ''}"]
    for name in _SECTIONS:
        lines += ["", f"[{name}]"]
        obj = getattr(cfg, name)
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def write_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8")
