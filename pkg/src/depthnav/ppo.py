"""PPO: rollout buffer, GAE, clipped-surrogate loss, Adam and the training loop."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import nn
from .env import RacingEnv, TaskConfig, observe
from .errors import CheckpointError, ContractError, NonFiniteLossError
from .geometry import Scene, Vec2
from .lidar import LidarConfig, scan
from .vehicle import VehicleParams, VehicleState

log = logging.getLogger("depthnav.ppo")

MOVING_AVERAGE_WINDOW = 1000


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 0.99
    lam: float = 0.95
    lr: float = 3e-4
    rollout_size: int = 2048
    batch_size: int = 64
    n_epochs: int = 10
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    total_steps: int = 300_000
    max_grad_norm: float = 0.5
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    normalize_advantages: bool = True
    hidden: int = 64
    dtype: str = "float32"
    n_envs: int = 1
    checkpoint_interval: int = 0
    log_interval: int = 10_000

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ContractError("gamma must lie in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ContractError("lam must lie in [0, 1]")
        if not self.clip_eps > 0:
            raise ContractError("clip_eps must be positive")
        if self.rollout_size % self.batch_size:
            raise ContractError("rollout_size must be divisible by batch_size")
        if self.n_envs < 1 or self.rollout_size % self.n_envs:
            raise ContractError("rollout_size must be divisible by n_envs")
        if self.optimizer not in ("adam", "sgd"):
            raise ContractError("optimizer must be 'adam' or 'sgd'")

    def loss_spec(self) -> nn.LossSpec:
        return nn.LossSpec(self.clip_eps, self.vf_coef, self.ent_coef)


# ---------------------------------------------------------------------------
# rollout storage and advantages


class RolloutBuffer:
    """Fixed-capacity storage for one rollout.

    Arrays are laid out ``(n_steps, n_envs)`` so each column is one env's
    time-ordered stream. ``next_values[t]`` holds the critic's estimate of the
    true successor state where that differs from ``values[t + 1]``: at
    truncation (time limit) it is the value of the final observation.
    """

    def __init__(self, n_steps: int, n_envs: int, obs_dim: int, act_dim: int = 2, dtype=np.float32):
        self.n_steps = n_steps
        self.n_envs = n_envs
        self.obs = np.zeros((n_steps, n_envs, obs_dim), dtype=dtype)
        self.actions = np.zeros((n_steps, n_envs, act_dim))
        self.log_probs = np.zeros((n_steps, n_envs))
        self.rewards = np.zeros((n_steps, n_envs))
        self.values = np.zeros((n_steps, n_envs))
        self.terminated = np.zeros((n_steps, n_envs), dtype=bool)
        self.truncated = np.zeros((n_steps, n_envs), dtype=bool)
        self.next_values = np.zeros((n_steps, n_envs))
        self.advantages = np.zeros((n_steps, n_envs))
        self.value_targets = np.zeros((n_steps, n_envs))
        self.pos = 0

    @classmethod
    def from_arrays(cls, rewards, values, terminated=None, truncated=None, next_values=None) -> "RolloutBuffer":
        """Build a single-env buffer from 1-D reward/value sequences (tests, tools)."""
        rewards = np.asarray(rewards, dtype=np.float64)
        n = rewards.shape[0]
        buf = cls(n, 1, obs_dim=1)
        buf.rewards[:, 0] = rewards
        buf.values[:, 0] = values
        if terminated is not None:
            buf.terminated[:, 0] = terminated
        if truncated is not None:
            buf.truncated[:, 0] = truncated
        if next_values is not None:
            buf.next_values[:, 0] = next_values
        buf.pos = n
        return buf

    @property
    def full(self) -> bool:
        return self.pos == self.n_steps

    @property
    def size(self) -> int:
        return self.n_steps * self.n_envs

    def add(self, obs, actions, log_probs, rewards, values, terminated, truncated, next_values):
        if self.full:
            raise ContractError("rollout buffer is full")
        t = self.pos
        self.obs[t] = obs
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.rewards[t] = rewards
        self.values[t] = values
        self.terminated[t] = terminated
        self.truncated[t] = truncated
        self.next_values[t] = next_values
        self.pos += 1

    def reset(self):
        self.pos = 0

    def flat(self) -> nn.Minibatch:
        n = self.size
        return nn.Minibatch(
            obs=self.obs.reshape(n, -1),
            actions=self.actions.reshape(n, -1),
            old_log_probs=self.log_probs.reshape(n),
            advantages=self.advantages.reshape(n),
            value_targets=self.value_targets.reshape(n),
        )


def compute_gae(buffer: RolloutBuffer, last_value, hp: Hyperparams, normalize: bool | None = None) -> RolloutBuffer:
    """Generalized advantage estimates and value targets, in place.

    ``delta_t = r_t + gamma * V_next_t * (1 - terminated_t) - V_t`` and
    ``A_t = delta_t + gamma * lam * (1 - end_t) * A_{t+1}`` where ``end_t`` is
    a termination or a truncation. Truncated steps bootstrap from the critic
    (``next_values``); terminated steps do not. Targets are ``A_t + V_t``,
    taken before the optional per-rollout advantage normalization.
    """
    if not buffer.full:
        raise ContractError(f"buffer holds {buffer.pos}/{buffer.n_steps} steps; GAE needs a full rollout")
    normalize = hp.normalize_advantages if normalize is None else normalize
    gamma, lam = hp.gamma, hp.lam
    last_value = np.broadcast_to(np.asarray(last_value, dtype=np.float64), (buffer.n_envs,))

    nonterminal = 1.0 - buffer.terminated
    cont = 1.0 - (buffer.terminated | buffer.truncated)
    next_v = np.empty_like(buffer.values)
    next_v[:-1] = buffer.values[1:]
    next_v[-1] = last_value
    next_v = np.where(buffer.truncated, buffer.next_values, next_v)
    delta = buffer.rewards + gamma * next_v * nonterminal - buffer.values

    adv = np.zeros_like(delta)
    running = np.zeros(buffer.n_envs)
    for t in range(buffer.n_steps - 1, -1, -1):
        running = delta[t] + gamma * lam * cont[t] * running
        adv[t] = running

    buffer.value_targets[:] = adv + buffer.values
    if normalize:
        adv = normalize_advantages(adv)
    buffer.advantages[:] = adv
    return buffer


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    centered = adv - adv.mean()
    std = centered.std()
    return centered / std if std > 0 else centered


# ---------------------------------------------------------------------------
# loss (forward only; gradients live in nn.backward)


def ppo_loss(params: nn.PolicyParams, batch: nn.Minibatch, hp: Hyperparams | nn.LossSpec):
    """Clipped-surrogate PPO loss to minimize, with diagnostics.

    ``loss = -mean(min(r*A, clip(r)*A)) + c1*mean((V - V_target)**2) - c2*entropy``.
    """
    spec = hp.loss_spec() if isinstance(hp, Hyperparams) else hp
    mean, log_std, value = nn.forward(params, batch.obs)
    log_prob = nn.gaussian_log_prob(np.asarray(batch.actions, dtype=mean.dtype), mean, log_std)
    log_ratio = log_prob - batch.old_log_probs
    ratio = np.exp(log_ratio)
    adv = batch.advantages
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - spec.clip_eps, 1.0 + spec.clip_eps) * adv
    policy_loss = -np.mean(np.minimum(unclipped, clipped))
    value_loss = np.mean((value - batch.value_targets) ** 2)
    entropy = nn.gaussian_entropy(log_std)
    loss = spec.scale * (policy_loss + spec.vf_coef * value_loss - spec.ent_coef * entropy)
    diag = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > spec.clip_eps)),
        "approx_kl": float(np.mean((ratio - 1.0) - log_ratio)),
        "ratio": ratio,
    }
    for term in ("policy_loss", "value_loss", "entropy"):
        if not np.isfinite(diag[term]):
            raise NonFiniteLossError(term.replace("_loss", ""))
    if not np.isfinite(loss):
        raise NonFiniteLossError("total")
    return float(loss), diag


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam over :class:`nn.PolicyParams` (``sgd`` mode skips the moments)."""

    def __init__(self, params: nn.PolicyParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, kind="adam"):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.kind = kind
        self.t = 0
        self.m = params.zeros_like()
        self.v = params.zeros_like()

    def step(self, params: nn.PolicyParams, grads: nn.PolicyParams) -> None:
        """Descend ``grads`` in place on ``params``."""
        self.t += 1
        if self.kind == "sgd":
            for name, g in grads.items():
                p = getattr(params, name)
                p -= (self.lr * g).astype(p.dtype)
            return
        b1, b2 = self.beta1, self.beta2
        step_size = self.lr * math.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for name, g in grads.items():
            m = getattr(self.m, name)
            v = getattr(self.v, name)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p = getattr(params, name)
            p -= (step_size * m / (np.sqrt(v) + self.eps)).astype(p.dtype)

    def state(self) -> dict:
        return {"t": self.t, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "kind": self.kind, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = state["m"]
        self.v = state["v"]


def clip_grad_norm(grads: nn.PolicyParams, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for _, g in grads.items()))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for _, g in grads.items():
            g *= g.dtype.type(scale)
    return norm


def update_step(params, opt: Adam, batch: nn.Minibatch, hp: Hyperparams) -> dict:
    bundle = nn.backward(params, batch, hp.loss_spec())
    bundle.terms["grad_norm"] = clip_grad_norm(bundle.grads, hp.max_grad_norm)
    opt.step(params, bundle.grads)
    np.clip(params.log_std, nn.LOG_STD_MIN, nn.LOG_STD_MAX, out=params.log_std)
    return bundle.terms


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    ret: float
    moving_avg: float
    length: int


def worker_threads() -> int:
    """Worker bound from ``DEPTHNAV_THREADS`` (default 1)."""
    raw = os.environ.get("DEPTHNAV_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ContractError(f"DEPTHNAV_THREADS must be an integer, got {raw!r}") from None
    return max(n, 1)


class Trainer:
    """Owns the policy, optimizer, envs and RNG streams for one training run."""

    def __init__(self, scene: Scene, hp: Hyperparams = Hyperparams(), seed: int = 0,
                 vehicle: VehicleParams | None = None, lidar: LidarConfig | None = None,
                 task: TaskConfig | None = None, out_dir=None, callbacks=()):
        self.scene = scene
        self.hp = hp
        self.seed = int(seed)
        self.vehicle = vehicle or VehicleParams()
        self.lidar = lidar or LidarConfig()
        self.task = task or TaskConfig()
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.callbacks = list(callbacks)
        self.dtype = np.dtype(hp.dtype)

        seq = np.random.SeedSequence(self.seed)
        init_seq, shuffle_seq, *env_seqs = seq.spawn(2 + hp.n_envs)
        self.params = nn.init_params(np.random.default_rng(init_seq), self.lidar.n_rays, hp.hidden,
                                     dtype=self.dtype)
        self.opt = Adam(self.params, hp.lr, hp.adam_beta1, hp.adam_beta2, hp.adam_eps, hp.optimizer)
        self.shuffle_rng = np.random.default_rng(shuffle_seq)
        self.env_rngs = [np.random.default_rng(s) for s in env_seqs]
        self.envs = [RacingEnv(scene, self.vehicle, self.lidar, self.task) for _ in range(hp.n_envs)]
        self.obs = [env.reset(seed=self.seed * 1000 + i) for i, env in enumerate(self.envs)]

        n_steps = hp.rollout_size // hp.n_envs
        self.buffer = RolloutBuffer(n_steps, hp.n_envs, self.lidar.n_rays, dtype=self.dtype)
        self.global_step = 0
        self.n_updates = 0
        self.records: list[EpisodeRecord] = []
        self.recent = deque(maxlen=MOVING_AVERAGE_WINDOW)
        self.last_diagnostics: dict = {}
        self._episode_count = 0

    # --- rollout --------------------------------------------------------
    def _step_env(self, i, action):
        env = self.envs[i]
        result = env.step(action)
        episode = env.episode
        next_obs = result.observation
        ended = result.terminated or result.truncated
        info = (episode.cumulative_reward, episode.step_count) if ended else None
        if ended:
            next_obs = env.reset(seed=episode.seed)
        return result, next_obs, ended, info

    def collect_rollout(self, pool: ThreadPoolExecutor | None = None) -> None:
        buf = self.buffer
        buf.reset()
        n_envs = self.hp.n_envs
        for _ in range(buf.n_steps):
            actions = np.zeros((n_envs, 2))
            log_probs = np.zeros(n_envs)
            values = np.zeros(n_envs)
            for i in range(n_envs):
                actions[i], log_probs[i], values[i] = nn.act(self.params, self.obs[i], self.env_rngs[i])
            if pool is not None and n_envs > 1:
                outcomes = list(pool.map(self._step_env, range(n_envs), actions))
            else:
                outcomes = [self._step_env(i, actions[i]) for i in range(n_envs)]

            rewards = np.zeros(n_envs)
            term = np.zeros(n_envs, dtype=bool)
            trunc = np.zeros(n_envs, dtype=bool)
            next_values = np.zeros(n_envs)
            obs_now = np.stack(self.obs)
            for i, (result, next_obs, ended, info) in enumerate(outcomes):
                rewards[i] = result.reward
                term[i] = result.terminated
                trunc[i] = result.truncated
                if result.truncated:
                    next_values[i] = float(nn.forward(self.params, result.observation)[2])
                self.obs[i] = next_obs
                if ended:
                    self._record_episode(*info)
            buf.add(obs_now, actions, log_probs, rewards, values, term, trunc, next_values)
            self.global_step += n_envs

        last_values = np.array([float(nn.forward(self.params, o)[2]) for o in self.obs])
        compute_gae(buf, last_values, self.hp)

    def _record_episode(self, ret, length):
        self._episode_count += 1
        self.recent.append(ret)
        rec = EpisodeRecord(self._episode_count, self.global_step + 1, float(ret),
                            float(np.mean(self.recent)), int(length))
        self.records.append(rec)

    # --- update ---------------------------------------------------------
    def update(self) -> dict:
        data = self.buffer.flat()
        n = self.buffer.size
        bs = self.hp.batch_size
        terms_acc: dict[str, list] = {}
        for _ in range(self.hp.n_epochs):
            perm = self.shuffle_rng.permutation(n)
            for start in range(0, n, bs):
                idx = perm[start : start + bs]
                mb = nn.Minibatch(data.obs[idx], data.actions[idx], data.old_log_probs[idx],
                                  data.advantages[idx], data.value_targets[idx])
                terms = update_step(self.params, self.opt, mb, self.hp)
                for k, v in terms.items():
                    terms_acc.setdefault(k, []).append(v)
        self.n_updates += 1
        diag = {k: float(np.mean(v)) for k, v in terms_acc.items()}
        diag["std"] = [float(s) for s in np.exp(self.params.log_std)]
        self.last_diagnostics = diag
        return diag

    # --- driver ---------------------------------------------------------
    def run(self) -> tuple[nn.PolicyParams, list[EpisodeRecord]]:
        threads = min(worker_threads(), self.hp.n_envs)
        pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
        t0 = time.perf_counter()
        next_log = self.global_step + self.hp.log_interval if self.hp.log_interval else None
        next_ckpt = self.global_step + self.hp.checkpoint_interval if self.hp.checkpoint_interval else None
        try:
            while self.global_step < self.hp.total_steps:
                self.collect_rollout(pool)
                self.update()
                if next_log is not None and self.global_step >= next_log:
                    self._log_progress(t0)
                    next_log += self.hp.log_interval
                if next_ckpt is not None and self.global_step >= next_ckpt and self.out_dir is not None:
                    self.save(self.out_dir / f"checkpoint_{self.global_step}.npz")
                    next_ckpt += self.hp.checkpoint_interval
                if any(cb(self) is False for cb in self.callbacks):
                    break
        finally:
            if pool is not None:
                pool.shutdown()
        if self.out_dir is not None:
            self.save(self.out_dir / "checkpoint_final.npz")
            write_learning_curve(self.out_dir / "learning_curve.csv", self.records)
        return self.params, self.records

    def _log_progress(self, t0):
        elapsed = time.perf_counter() - t0
        avg = self.records[-1].moving_avg if self.records else float("nan")
        d = self.last_diagnostics
        log.info(
            "step %d | episodes %d | moving avg %.1f | value loss %.3f | std %s | %.0f steps/s",
            self.global_step, self._episode_count, avg, d.get("value_loss", float("nan")),
            np.round(d.get("std", []), 3), self.global_step / max(elapsed, 1e-9),
        )

    # --- persistence ----------------------------------------------------
    def state_dict(self) -> dict:
        envs = []
        for env in self.envs:
            ep = env.episode
            envs.append({
                "x": ep.vehicle.position.x, "y": ep.vehicle.position.y, "yaw": ep.vehicle.yaw,
                "v": ep.vehicle.v_joint, "step_count": ep.step_count, "prev_a_delta": ep.prev_a_delta,
                "sim_time": ep.sim_time, "cumulative_reward": ep.cumulative_reward, "seed": ep.seed,
            })
        return {
            "seed": self.seed,
            "hyperparams": asdict(self.hp),
            "n_updates": self.n_updates,
            "episode_count": self._episode_count,
            "recent_returns": list(self.recent),
            "records": [asdict(r) for r in self.records],
            "envs": envs,
            "shuffle_rng": self.shuffle_rng.bit_generator.state,
        }

    def save(self, path) -> None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(path.suffix + ".tmp")
            nn.save_checkpoint(tmp, self.params, optimizer=self.opt.state(),
                               rng_state=[r.bit_generator.state for r in self.env_rngs],
                               global_step=self.global_step, extra=self.state_dict())
            os.replace(tmp, path)
        except OSError as exc:
            raise CheckpointError(f"failed to write checkpoint {path}: {exc}; trainer state kept in memory") from exc

    def load(self, path) -> None:
        """Restore a checkpoint written by :meth:`save` to continue training."""
        ck = nn.load_checkpoint(path, expect_architecture=self.params.architecture())
        self.params = ck["params"]
        self.opt.load_state(ck["optimizer"])
        for rng, state in zip(self.env_rngs, ck["rng_state"]):
            rng.bit_generator.state = state
        extra = ck["extra"]
        self.global_step = ck["global_step"]
        self.n_updates = extra["n_updates"]
        self._episode_count = extra["episode_count"]
        self.recent = deque(extra["recent_returns"], maxlen=MOVING_AVERAGE_WINDOW)
        self.records = [EpisodeRecord(**r) for r in extra["records"]]
        self.shuffle_rng.bit_generator.state = extra["shuffle_rng"]
        for env, st in zip(self.envs, extra["envs"]):
            env.reset(seed=st["seed"])
            vehicle = VehicleState(Vec2(st["x"], st["y"]), st["yaw"], st["v"])
            env.episode = replace(env.episode, vehicle=vehicle, step_count=st["step_count"],
                                   prev_a_delta=st["prev_a_delta"], sim_time=st["sim_time"],
                                   cumulative_reward=st["cumulative_reward"])
        self.obs = [observe(scan(self.scene, env.episode.vehicle, self.lidar, env.episode.sim_time),
                            self.lidar, self.task) for env in self.envs]


def train(scene: Scene, hp: Hyperparams = Hyperparams(), seed: int = 0, callbacks=(), **kwargs):
    """Train a policy on ``scene``; returns ``(params, learning_curve_records)``.

    Extra keyword arguments (``vehicle``, ``lidar``, ``task``, ``out_dir``)
    are forwarded to :class:`Trainer`.
    """
    return Trainer(scene, hp, seed, callbacks=callbacks, **kwargs).run()


LEARNING_CURVE_COLUMNS = ("episode", "steps", "return", "moving_avg_1000")


def write_learning_curve(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LEARNING_CURVE_COLUMNS)
        for r in records:
            w.writerow([r.episode, r.steps, repr(r.ret), repr(r.moving_avg)])


def read_learning_curve(path) -> list[EpisodeRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [EpisodeRecord(int(r["episode"]), int(r["steps"]), float(r["return"]),
                          float(r["moving_avg_1000"]), 0) for r in rows]


def decile_means(returns) -> tuple[float, float]:
    """Mean episodic return of the first and last tenth of episodes."""
    returns = np.asarray(returns, dtype=np.float64)
    k = max(len(returns) // 10, 1)
    return float(returns[:k].mean()), float(returns[-k:].mean())
