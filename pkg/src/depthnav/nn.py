"""Shared-trunk actor-critic MLP with hand-written gradients.

Architecture: ``obs -> tanh(64) -> tanh(64)`` feeding a linear policy-mean
head (2 outputs) and a linear value head (1 output). The Gaussian policy has a
state-independent, learnable ``log_std``.

Everything is plain numpy. :func:`backward` returns exact gradients of the
clipped-surrogate PPO loss; the finite-difference harness in
:mod:`depthnav.selfcheck` verifies them against finite differences of the loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ContractError, NonFiniteLossError

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wp", "bp", "Wv", "bv", "log_std")
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)

CHECKPOINT_FORMAT = "depthnav-checkpoint"
CHECKPOINT_VERSION = 1


class PolicyParams:
    """Named parameter arrays of the actor-critic.

    Weight matrices are stored ``(out, in)``.
    """

    __slots__ = PARAM_NAMES

    def __init__(self, **arrays):
        missing = set(PARAM_NAMES) - set(arrays)
        if missing:
            raise ContractError(f"missing parameter arrays: {sorted(missing)}")
        for name in PARAM_NAMES:
            setattr(self, name, arrays[name])

    # --- shape helpers --------------------------------------------------
    @property
    def obs_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> tuple[int, int]:
        return (self.W1.shape[0], self.W2.shape[0])

    @property
    def act_dim(self) -> int:
        return self.Wp.shape[0]

    @property
    def dtype(self):
        return self.W1.dtype

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def items(self):
        return self.arrays().items()

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{k: v.copy() for k, v in self.items()})

    def astype(self, dtype) -> "PolicyParams":
        return PolicyParams(**{k: v.astype(dtype) for k, v in self.items()})

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams(**{k: np.zeros_like(v) for k, v in self.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays().values()])

    def set_flat(self, vec: np.ndarray) -> "PolicyParams":
        out, i = {}, 0
        for k, v in self.items():
            out[k] = vec[i : i + v.size].reshape(v.shape).astype(v.dtype)
            i += v.size
        return PolicyParams(**out)

    def num_params(self) -> int:
        return sum(v.size for v in self.arrays().values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays().values())

    def equals(self, other: "PolicyParams") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in PARAM_NAMES)

    def architecture(self) -> dict:
        return {
            "obs_dim": int(self.obs_dim),
            "hidden": [int(h) for h in self.hidden],
            "act_dim": int(self.act_dim),
            "activation": "tanh",
            "policy": "diagonal_gaussian",
        }


def orthogonal(shape, gain: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal matrix scaled by ``gain`` (rows or columns orthonormal, whichever is fewer)."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_params(
    rng: np.random.Generator,
    obs_dim: int = 170,
    hidden: int = 64,
    act_dim: int = 2,
    dtype=np.float32,
) -> PolicyParams:
    """Orthogonal init: gain sqrt(2) for the trunk, 0.01 policy head, 1.0 value head."""
    s2 = math.sqrt(2.0)
    p = PolicyParams(
        W1=orthogonal((hidden, obs_dim), s2, rng),
        b1=np.zeros(hidden),
        W2=orthogonal((hidden, hidden), s2, rng),
        b2=np.zeros(hidden),
        Wp=orthogonal((act_dim, hidden), 0.01, rng),
        bp=np.zeros(act_dim),
        Wv=orthogonal((1, hidden), 1.0, rng),
        bv=np.zeros(1),
        log_std=np.zeros(act_dim),
    )
    return p.astype(dtype)


# ---------------------------------------------------------------------------
# forward pass


def _trunk(params: PolicyParams, obs: np.ndarray):
    h1 = np.tanh(obs @ params.W1.T + params.b1)
    h2 = np.tanh(h1 @ params.W2.T + params.b2)
    return h1, h2


def forward(params: PolicyParams, obs: np.ndarray):
    """Return ``(mean, log_std, value)``.

    ``obs`` may be a single observation ``(obs_dim,)`` or a batch
    ``(B, obs_dim)``; outputs follow the same leading shape.
    """
    obs = np.asarray(obs, dtype=params.dtype)
    if obs.shape[-1] != params.obs_dim or obs.ndim not in (1, 2):
        raise ContractError(f"observation shape {obs.shape} does not match obs_dim={params.obs_dim}")
    _, h2 = _trunk(params, obs)
    mean = h2 @ params.Wp.T + params.bp
    value = (h2 @ params.Wv.T + params.bv)[..., 0]
    return mean, params.log_std, value


def gaussian_log_prob(action, mean, log_std) -> np.ndarray:
    z = (action - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * _LOG_2PI


def gaussian_entropy(log_std) -> float:
    return float(np.sum(log_std + 0.5 * (_LOG_2PI + 1.0)))


def act(params: PolicyParams, obs, rng: np.random.Generator | None = None, deterministic: bool = False):
    """Action, its log-probability and the critic's value for one observation.

    The action is the unclamped Gaussian sample; clamping is the task's job.
    """
    mean, log_std, value = forward(params, obs)
    mean = mean.astype(np.float64)
    log_std = log_std.astype(np.float64)
    if deterministic:
        action = mean.copy()
    else:
        action = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return action, float(gaussian_log_prob(action, mean, log_std)), float(value)


def sample_action(params: PolicyParams, obs, rng: np.random.Generator):
    action, log_prob, _ = act(params, obs, rng)
    return action, log_prob


def log_prob_and_entropy(params: PolicyParams, obs, action):
    mean, log_std, _ = forward(params, obs)
    return gaussian_log_prob(np.asarray(action, dtype=mean.dtype), mean, log_std), gaussian_entropy(log_std)


# ---------------------------------------------------------------------------
# loss gradients


@dataclass
class Minibatch:
    obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    value_targets: np.ndarray

    def __len__(self):
        return self.obs.shape[0]

    def astype(self, dtype) -> "Minibatch":
        return Minibatch(*(np.asarray(getattr(self, f), dtype=dtype) for f in
                           ("obs", "actions", "old_log_probs", "advantages", "value_targets")))


@dataclass(frozen=True)
class LossSpec:
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    scale: float = 1.0


@dataclass
class GradientBundle:
    grads: PolicyParams
    loss: float
    terms: dict

    def global_norm(self) -> float:
        return float(math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for _, g in self.grads.items())))


def backward(params: PolicyParams, batch: Minibatch, spec: LossSpec = LossSpec()) -> GradientBundle:
    """Exact gradients of ``scale * (policy_loss + vf_coef*value_loss - ent_coef*entropy)``.

    ``policy_loss = -mean(min(r*A, clip(r, 1-eps, 1+eps)*A))`` with
    ``r = exp(log_prob - old_log_prob)``; ``value_loss = mean((V - V_target)**2)``.
    Both heads backpropagate into the shared trunk.
    """
    dt = params.dtype
    x = np.asarray(batch.obs, dtype=dt)
    act_ = np.asarray(batch.actions, dtype=dt)
    adv = np.asarray(batch.advantages, dtype=dt)
    vt = np.asarray(batch.value_targets, dtype=dt)
    old_lp = np.asarray(batch.old_log_probs, dtype=dt)
    n = x.shape[0]

    h1, h2 = _trunk(params, x)
    mean = h2 @ params.Wp.T + params.bp
    value = (h2 @ params.Wv.T + params.bv)[:, 0]
    inv_std = np.exp(-params.log_std)
    z = (act_ - mean) * inv_std
    log_prob = -0.5 * np.sum(z * z, axis=1) - np.sum(params.log_std) - 0.5 * params.act_dim * _LOG_2PI

    ratio = np.exp(log_prob - old_lp)
    eps = spec.clip_eps
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    unclipped = surr1 <= surr2
    policy_loss = -np.mean(np.where(unclipped, surr1, surr2))
    value_loss = np.mean((value - vt) ** 2)
    entropy = gaussian_entropy(params.log_std)
    loss = spec.scale * (policy_loss + spec.vf_coef * value_loss - spec.ent_coef * entropy)
    for term, v in (("policy", policy_loss), ("value", value_loss), ("entropy", entropy), ("total", loss)):
        if not np.isfinite(v):
            raise NonFiniteLossError(term)

    s = spec.scale
    # d loss / d log_prob, zero where the clipped branch is selected
    g_lp = np.where(unclipped, -adv * ratio, 0.0) * (s / n)
    d_mean = g_lp[:, None] * z * inv_std
    d_log_std = np.sum(g_lp[:, None] * (z * z - 1.0), axis=0) - s * spec.ent_coef
    d_value = (2.0 * s * spec.vf_coef / n) * (value - vt)

    d_h2 = d_mean @ params.Wp + d_value[:, None] * params.Wv
    d_z2 = d_h2 * (1.0 - h2 * h2)
    d_h1 = d_z2 @ params.W2
    d_z1 = d_h1 * (1.0 - h1 * h1)

    grads = PolicyParams(
        W1=d_z1.T @ x,
        b1=d_z1.sum(axis=0),
        W2=d_z2.T @ h1,
        b2=d_z2.sum(axis=0),
        Wp=d_mean.T @ h2,
        bp=d_mean.sum(axis=0),
        Wv=d_value[None, :] @ h2,
        bv=np.array([d_value.sum()], dtype=dt),
        log_std=d_log_std.astype(dt),
    )
    clipped = np.abs(ratio - 1.0) > eps
    terms = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "clip_fraction": float(np.mean(clipped)),
        "approx_kl": float(np.mean((ratio - 1.0) - (log_prob - old_lp))),
    }
    return GradientBundle(grads, float(loss), terms)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: PolicyParams, *, optimizer: dict | None = None, rng_state=None,
                    global_step: int = 0, extra: dict | None = None) -> None:
    """Write parameters (as float64) plus training state to an ``.npz`` container."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": params.architecture(),
        "param_dtype": np.dtype(params.dtype).name,
        "global_step": int(global_step),
        "rng_state": rng_state,
        "optimizer": None,
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v.astype(np.float64) for k, v in params.items()}
    if optimizer is not None:
        meta["optimizer"] = {k: v for k, v in optimizer.items() if not isinstance(v, PolicyParams)}
        for key, val in optimizer.items():
            if isinstance(val, PolicyParams):
                for k, v in val.items():
                    arrays[f"opt/{key}/{k}"] = v.astype(np.float64)
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, expect_architecture: dict | None = None) -> dict:
    """Inverse of :func:`save_checkpoint`.

    Returns a dict with ``params``, ``optimizer``, ``rng_state``,
    ``global_step`` and ``extra``.
    """
    try:
        with np.load(path, allow_pickle=False) as data:
            files = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "meta" not in files:
        raise CheckpointError(f"{path} is not a depthnav checkpoint (no metadata)")
    meta = json.loads(files["meta"].tobytes().decode("utf-8"))
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown checkpoint format {meta.get('format')!r}")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {meta.get('version')} unsupported (expected {CHECKPOINT_VERSION})"
        )
    if expect_architecture is not None and meta["architecture"] != expect_architecture:
        raise CheckpointError(
            f"{path}: architecture {meta['architecture']} does not match expected {expect_architecture}"
        )
    dtype = np.dtype(meta["param_dtype"])
    params = PolicyParams(**{k: files[f"param/{k}"].astype(dtype) for k in PARAM_NAMES})
    optimizer = None
    if meta["optimizer"] is not None:
        optimizer = dict(meta["optimizer"])
        slots = {key.split("/")[1] for key in files if key.startswith("opt/")}
        for slot in slots:
            optimizer[slot] = PolicyParams(**{k: files[f"opt/{slot}/{k}"].astype(dtype) for k in PARAM_NAMES})
    return {
        "params": params,
        "optimizer": optimizer,
        "rng_state": meta["rng_state"],
        "global_step": meta["global_step"],
        "extra": meta["extra"],
        "architecture": meta["architecture"],
    }
