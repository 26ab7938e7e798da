"""Independent numerical oracles for the two hand-derived kernels.

* :func:`gradient_check` compares :func:`nn.backward` against central finite
  differences of the PPO loss in float64.
* :func:`raycast_check` compares closed-form :func:`geometry.ray_cast` against
  a marching oracle that samples each primitive's implicit function along the
  ray (fixed step) and refines the first sign change by bisection.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .geometry import CircleObstacle, Scene, Segment, Vec2, ray_cast
from .ppo import ppo_loss

GRAD_TOL = 1e-4
GRAD_FLOOR = 1e-7
RAY_TOL = 1e-3


# ---------------------------------------------------------------------------
# gradients


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_instance: list[float]
    n_params: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < GRAD_TOL


def random_instance(rng: np.random.Generator, obs_dim=170, hidden=64, batch=8, clip_eps=0.2):
    """Random float64 parameters and a minibatch with ratios kept off the clip kinks."""
    def w(out, inp):
        return rng.normal(0.0, 1.0 / math.sqrt(inp), (out, inp))

    params = nn.PolicyParams(
        W1=w(hidden, obs_dim), b1=rng.normal(0, 0.1, hidden),
        W2=w(hidden, hidden), b2=rng.normal(0, 0.1, hidden),
        Wp=w(2, hidden), bp=rng.normal(0, 0.1, 2),
        Wv=w(1, hidden), bv=rng.normal(0, 0.1, 1),
        log_std=rng.uniform(-1.0, 0.5, 2),
    )
    obs = rng.uniform(0.05, 1.0, (batch, obs_dim))
    mean, log_std, value = nn.forward(params, obs)
    actions = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    log_prob = nn.gaussian_log_prob(actions, mean, log_std)
    # ratios spread over clipped and unclipped regions, at least 0.02 from 1 +- eps
    ratio = rng.choice([rng.uniform(0.5, 1 - clip_eps - 0.02), rng.uniform(1 - clip_eps + 0.02, 1 + clip_eps - 0.02),
                        rng.uniform(1 + clip_eps + 0.02, 1.6)], size=batch)
    adv = rng.choice([-1.0, 1.0], batch) * rng.uniform(0.2, 2.0, batch)
    batch_ = nn.Minibatch(obs, actions, log_prob - np.log(ratio), adv, value + rng.normal(0, 1.0, batch))
    return params, batch_


def _unflatten(theta: np.ndarray, like: nn.PolicyParams) -> dict:
    """Split a ``(K, P)`` stack of flat vectors into per-name ``(K, *shape)`` arrays."""
    out, i = {}, 0
    for name in nn.PARAM_NAMES:
        shape = getattr(like, name).shape
        size = int(np.prod(shape))
        out[name] = theta[:, i:i + size].reshape((theta.shape[0], *shape))
        i += size
    return out


def stacked_loss(theta: np.ndarray, like: nn.PolicyParams, batch: nn.Minibatch, spec: nn.LossSpec) -> np.ndarray:
    """The PPO loss for each row of ``theta`` (forward only, vectorized over rows)."""
    p = _unflatten(theta, like)
    dt = theta.dtype
    obs = np.asarray(batch.obs, dtype=dt)
    h1 = np.tanh(np.matmul(obs, p["W1"].transpose(0, 2, 1)) + p["b1"][:, None, :])
    h2 = np.tanh(np.matmul(h1, p["W2"].transpose(0, 2, 1)) + p["b2"][:, None, :])
    mean = np.matmul(h2, p["Wp"].transpose(0, 2, 1)) + p["bp"][:, None, :]
    value = np.matmul(h2, p["Wv"].transpose(0, 2, 1))[..., 0] + p["bv"][:, :1]
    log_std = p["log_std"][:, None, :]
    z = (np.asarray(batch.actions, dtype=dt)[None] - mean) * np.exp(-log_std)
    log_prob = np.sum(-0.5 * z * z - log_std - 0.5 * math.log(2 * math.pi), axis=-1)
    ratio = np.exp(log_prob - np.asarray(batch.old_log_probs, dtype=dt)[None])
    adv = np.asarray(batch.advantages, dtype=dt)[None]
    surr = np.minimum(ratio * adv, np.clip(ratio, 1 - spec.clip_eps, 1 + spec.clip_eps) * adv)
    value_loss = np.mean((value - np.asarray(batch.value_targets, dtype=dt)[None]) ** 2, axis=1)
    entropy = np.sum(p["log_std"] + 0.5 * (1 + math.log(2 * math.pi)), axis=-1)
    return spec.scale * (-surr.mean(axis=1) + spec.vf_coef * value_loss - spec.ent_coef * entropy)


def finite_difference(params: nn.PolicyParams, batch: nn.Minibatch, spec: nn.LossSpec, h: float = 1e-5,
                      chunk: int = 64, refine_below: float = 1e-5) -> np.ndarray:
    """Central differences of the PPO loss, in :meth:`PolicyParams.flat` order.

    Perturbed losses are evaluated ``chunk`` parameters at a time with
    :func:`stacked_loss`, which is first checked against :func:`ppo_loss`.
    """
    theta = params.astype(np.float64).flat()
    base, _ = ppo_loss(params, batch, spec)
    mine = float(stacked_loss(theta[None], params, batch, spec)[0])
    if abs(mine - base) > 1e-12 * max(1.0, abs(base)):
        raise AssertionError(f"stacked loss {mine!r} disagrees with ppo_loss {base!r}")
    grad = np.empty_like(theta)
    buf = np.empty((2 * chunk, theta.size))
    for start in range(0, theta.size, chunk):
        idx = np.arange(start, min(start + chunk, theta.size))
        stack = buf[:2 * idx.size]
        stack[:] = theta
        rows = np.arange(idx.size)
        stack[rows, idx] += h
        stack[idx.size + rows, idx] -= h
        loss = stacked_loss(stack, params, batch, spec)
        grad[idx] = (loss[:idx.size] - loss[idx.size:]) / (2 * h)
    # Near the 1e-7 floor the float64 difference is dominated by rounding of
    # the O(1) loss (eps * |loss| / h ~ 1e-11), so redo those few entries with
    # the same h in extended precision.
    small = np.nonzero(np.abs(grad) < refine_below)[0]
    if small.size:
        wide = theta.astype(np.longdouble)
        for start in range(0, small.size, chunk):
            idx = small[start:start + chunk]
            stack = np.repeat(wide[None], 2 * idx.size, axis=0)
            rows = np.arange(idx.size)
            stack[rows, idx] += h
            stack[idx.size + rows, idx] -= h
            loss = stacked_loss(stack, params, batch, spec)
            grad[idx] = ((loss[:idx.size] - loss[idx.size:]) / (2 * h)).astype(np.float64)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_FLOOR) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradient_check(n_instances: int = 20, seed: int = 0, obs_dim: int = 170, hidden: int = 64,
                   batch: int = 8, spec: nn.LossSpec = nn.LossSpec(0.2, 0.5, 0.01)) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    errs = []
    n_params = 0
    for _ in range(n_instances):
        params, mb = random_instance(rng, obs_dim, hidden, batch, spec.clip_eps)
        analytic = nn.backward(params, mb, spec).grads.flat()
        numeric = finite_difference(params, mb, spec)
        errs.append(float(relative_error(analytic, numeric).max()))
        n_params = analytic.size
    return GradCheckResult(max(errs), errs, n_params, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# ray casting


def march_ray(scene: Scene, origin, direction, r_max: float, time_: float = 0.0, step: float = 1e-4):
    """Marching + bisection distance to the first primitive along a ray."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    n = int(math.ceil(r_max / step))
    ts = np.minimum(np.arange(n + 1) * step, r_max)
    px = o[0] + ts * d[0]
    py = o[1] + ts * d[1]

    best = math.inf
    for ax, ay, bx, by in scene.wall_array:
        ex, ey = bx - ax, by - ay

        def side(t, ax=ax, ay=ay, ex=ex, ey=ey):
            return ex * (o[1] + t * d[1] - ay) - ey * (o[0] + t * d[0] - ax)

        def on_segment(t, ax=ax, ay=ay, ex=ex, ey=ey):
            u = ((o[0] + t * d[0] - ax) * ex + (o[1] + t * d[1] - ay) * ey) / (ex * ex + ey * ey)
            return 0.0 <= u <= 1.0

        f = ex * (py - ay) - ey * (px - ax)
        for k in _sign_changes(f):
            t = _bisect(side, ts[k], ts[k + 1])
            if on_segment(t):
                best = min(best, t)
                break

    for cx, cy, r in scene.circle_array(time_):
        def g(t, cx=cx, cy=cy, r=r):
            return math.hypot(o[0] + t * d[0] - cx, o[1] + t * d[1] - cy) - r

        f = np.hypot(px - cx, py - cy) - r
        ks = _sign_changes(f)
        if len(ks):
            best = min(best, _bisect(g, ts[ks[0]], ts[ks[0] + 1]))

    if best <= r_max:
        return best, True
    return r_max, False


def _sign_changes(f: np.ndarray) -> np.ndarray:
    s = np.sign(f)
    return np.nonzero(s[:-1] * s[1:] <= 0)[0]


def _bisect(fn, lo: float, hi: float, iters: int = 60) -> float:
    flo = fn(lo)
    if flo == 0.0:
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if (fm > 0) == (flo > 0) and fm != 0.0:
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class RaycastCheckResult:
    n: int
    max_abs_error: float
    flag_agreement: float
    mismatches: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.max_abs_error <= RAY_TOL and self.flag_agreement == 1.0


def random_scene(rng: np.random.Generator, size: float = 10.0, max_segments: int = 10, max_circles: int = 5) -> Scene:
    segs = []
    for _ in range(rng.integers(0, max_segments + 1)):
        a = rng.uniform(-size, size, 2)
        b = a + rng.uniform(-4, 4, 2)
        segs.append(Segment(Vec2(*a), Vec2(*b)))
    circles = []
    for _ in range(rng.integers(0, max_circles + 1)):
        vel = rng.uniform(-1, 1, 2) if rng.random() < 0.3 else np.zeros(2)
        circles.append(CircleObstacle(Vec2(*rng.uniform(-size, size, 2)), float(rng.uniform(0.1, 2.0)), Vec2(*vel)))
    # open bounds with a start pose far away; the ray origin is drawn separately
    return Scene(tuple(segs), tuple(circles), Vec2(3 * size, 3 * size), 0.0,
                 (-4 * size, -4 * size, 4 * size, 4 * size), name="random", open_bounds=True)


def raycast_check(n: int = 1000, seed: int = 0, step: float = 1e-4) -> RaycastCheckResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    max_err = 0.0
    agree = 0
    mismatches = []
    for i in range(n):
        scene = random_scene(rng)
        t = float(rng.uniform(0, 3)) if scene.has_moving else 0.0
        circles = scene.circle_array(t)
        while True:
            origin = rng.uniform(-10, 10, 2)
            if not np.any(np.hypot(*(circles[:, :2] - origin).T) <= circles[:, 2] + 1e-3):
                break
        ang = rng.uniform(-math.pi, math.pi)
        direction = (math.cos(ang), math.sin(ang))
        r_max = float(rng.uniform(1.0, 12.0))
        d_closed, hit_closed = ray_cast(scene, origin, direction, r_max, t)
        d_march, hit_march = march_ray(scene, origin, direction, r_max, t, step)
        err = abs(d_closed - d_march)
        max_err = max(max_err, err)
        if hit_closed == hit_march:
            agree += 1
        if hit_closed != hit_march or err > RAY_TOL:
            mismatches.append((i, d_closed, d_march, hit_closed, hit_march))
    return RaycastCheckResult(n, max_err, agree / n, mismatches, time.perf_counter() - t0)
