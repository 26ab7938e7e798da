import math

import numpy as np
import pytest

from conftest import TRACKS, square_room
from depthnav import nn
from depthnav.env import TaskConfig
from depthnav.errors import CheckpointError, ContractError
from depthnav.geometry import load_scene
from depthnav.ppo import (
    Adam,
    Hyperparams,
    RolloutBuffer,
    Trainer,
    clip_grad_norm,
    compute_gae,
    decile_means,
    normalize_advantages,
    ppo_loss,
    read_learning_curve,
    train,
    update_step,
    write_learning_curve,
)


def gae_direct(rewards, values, dones, last_value, gamma, lam):
    """Nested-sum definition: A_t = sum_l (gamma lam)^l delta_{t+l}, cut at episode ends."""
    n = len(rewards)
    next_v = np.append(values[1:], last_value)
    delta = [rewards[t] + gamma * next_v[t] * (1 - dones[t]) - values[t] for t in range(n)]
    adv = np.zeros(n)
    for t in range(n):
        total, weight = 0.0, 1.0
        for k in range(t, n):
            total += weight * delta[k]
            if dones[k]:
                break
            weight *= gamma * lam
        adv[t] = total
    return adv


def hp(**kw):
    kw.setdefault("normalize_advantages", False)
    return Hyperparams(**kw)


# --- GAE -------------------------------------------------------------------------


def test_single_terminal_step():
    buf = compute_gae(RolloutBuffer.from_arrays([1.0], [0.0], terminated=[True]), 0.0, hp())
    assert buf.advantages[0, 0] == 1.0 and buf.value_targets[0, 0] == 1.0


def test_gae_matches_direct_sum():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 65))
        r = rng.normal(size=n)
        v = rng.normal(size=n)
        d = rng.random(n) < 0.1
        last = float(rng.normal())
        gamma, lam = float(rng.uniform(0.8, 1.0)), float(rng.uniform(0, 1))
        buf = compute_gae(RolloutBuffer.from_arrays(r, v, terminated=d), last, hp(gamma=gamma, lam=lam))
        np.testing.assert_allclose(buf.advantages[:, 0], gae_direct(r, v, d, last, gamma, lam), atol=1e-10, rtol=0)
        np.testing.assert_allclose(buf.value_targets[:, 0], buf.advantages[:, 0] + v, atol=0, rtol=0)


def test_lambda_zero_is_td_error():
    rng = np.random.default_rng(1)
    r, v = rng.normal(size=30), rng.normal(size=30)
    d = rng.random(30) < 0.2
    buf = compute_gae(RolloutBuffer.from_arrays(r, v, terminated=d), 0.7, hp(lam=0.0))
    next_v = np.append(v[1:], 0.7)
    assert np.array_equal(buf.advantages[:, 0], r + 0.99 * next_v * (1 - d) - v)


def test_lambda_one_is_return_minus_baseline():
    rng = np.random.default_rng(2)
    n = 40
    r, v = rng.normal(size=n), rng.normal(size=n)
    last = 1.3
    buf = compute_gae(RolloutBuffer.from_arrays(r, v), last, hp(lam=1.0))
    g = 0.99
    returns = np.array([sum(g ** (k - t) * r[k] for k in range(t, n)) + g ** (n - t) * last for t in range(n)])
    np.testing.assert_allclose(buf.advantages[:, 0], returns - v, atol=1e-10, rtol=0)


def test_truncation_bootstraps_and_cuts_recursion():
    # step 1 hits the time limit: its successor is the final obs (value 4.0), not values[2]
    r = [1.0, 1.0, 1.0]
    v = [0.5, 0.5, 2.0]
    buf = compute_gae(RolloutBuffer.from_arrays(r, v, truncated=[False, True, False], next_values=[0, 4.0, 0]),
                      0.0, hp(gamma=0.5, lam=1.0))
    a = buf.advantages[:, 0]
    assert a[2] == 1.0 - 2.0
    assert a[1] == 1.0 + 0.5 * 4.0 - 0.5
    assert a[0] == (1.0 + 0.5 * 0.5 - 0.5) + 0.5 * a[1]


def test_termination_does_not_bootstrap():
    buf = compute_gae(RolloutBuffer.from_arrays([1.0, 1.0], [3.0, 3.0], terminated=[True, False]), 9.0,
                      hp(gamma=1.0, lam=1.0))
    assert buf.advantages[0, 0] == 1.0 - 3.0


def test_gae_requires_full_buffer():
    buf = RolloutBuffer(4, 1, 3)
    buf.add(np.zeros((1, 3)), np.zeros((1, 2)), 0, 0, 0, False, False, 0)
    with pytest.raises(ContractError):
        compute_gae(buf, 0.0, hp())


def test_multi_env_columns_independent():
    rng = np.random.default_rng(3)
    r, v = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    buf = RolloutBuffer(20, 3, 1)
    buf.rewards[:], buf.values[:] = r, v
    buf.pos = 20
    compute_gae(buf, np.array([0.1, 0.2, 0.3]), hp())
    for j in range(3):
        single = compute_gae(RolloutBuffer.from_arrays(r[:, j], v[:, j]), [0.1, 0.2, 0.3][j], hp())
        np.testing.assert_allclose(buf.advantages[:, j], single.advantages[:, 0], atol=1e-12)


def test_advantage_normalization():
    rng = np.random.default_rng(4)
    for scale in (1e-3, 1.0, 1e4):
        a = normalize_advantages(rng.normal(5.0, scale, 2048))
        assert abs(a.mean()) < 1e-10
        assert abs(a.std() - 1.0) < 1e-8


def test_constant_advantages_normalize_to_zero():
    assert not normalize_advantages(np.full(10, 3.0)).any()


# --- loss ----------------------------------------------------------------------------


def _params(seed=0):
    rng = np.random.default_rng(seed)
    p = nn.init_params(rng, dtype=np.float64)
    for _, v in p.items():
        v += rng.normal(0, 0.1, v.shape)
    return p


def _batch(p, n=32, seed=0):
    rng = np.random.default_rng(seed)
    obs = rng.uniform(0, 1, (n, 170))
    mean, log_std, value = nn.forward(p, obs)
    actions = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return nn.Minibatch(obs, actions, nn.gaussian_log_prob(actions, mean, log_std), rng.standard_normal(n),
                        value + rng.normal(0, 0.5, n))


def test_ratio_identity_after_sync():
    p = _params()
    b = _batch(p)
    loss, diag = ppo_loss(p, b, hp(ent_coef=0.0, vf_coef=0.0))
    assert np.max(np.abs(diag["ratio"] - 1.0)) <= 1e-6
    assert diag["clip_fraction"] == 0.0
    assert loss == pytest.approx(-b.advantages.mean(), abs=1e-12)


def test_clipped_branch_hand_example():
    p = _params()
    b = _batch(p, n=1)
    b.advantages[:] = 2.0
    b.old_log_probs[:] -= math.log(1.5)  # r = 1.5
    _, diag = ppo_loss(p, b, hp(vf_coef=0.0, ent_coef=0.0))
    assert diag["ratio"][0] == pytest.approx(1.5)
    assert diag["policy_loss"] == pytest.approx(-2.4)
    assert diag["clip_fraction"] == 1.0


def test_zero_value_residual():
    p = _params()
    b = _batch(p)
    b.value_targets[:] = nn.forward(p, b.obs)[2]
    _, diag = ppo_loss(p, b, hp())
    assert diag["value_loss"] == 0.0


def test_clip_inactive_region_is_bitwise_unclipped():
    p = _params()
    b = _batch(p)
    rng = np.random.default_rng(5)
    b.old_log_probs[:] -= np.log(rng.uniform(0.85, 1.15, len(b)))
    _, diag = ppo_loss(p, b, hp(vf_coef=0.0, ent_coef=0.0))
    r = diag["ratio"]
    assert np.all(np.abs(r - 1) <= 0.2)
    unclipped = r * b.advantages
    clipped = np.clip(r, 0.8, 1.2) * b.advantages
    assert np.array_equal(np.minimum(unclipped, clipped), unclipped)
    assert diag["policy_loss"] == -np.mean(unclipped)


def test_entropy_term_sign():
    p = _params()
    b = _batch(p)
    l0, d = ppo_loss(p, b, hp(ent_coef=0.0))
    l1, _ = ppo_loss(p, b, hp(ent_coef=0.1))
    assert l1 == pytest.approx(l0 - 0.1 * d["entropy"])


def test_tiny_step_does_not_increase_loss():
    p = _params(1)
    b = _batch(p, seed=1)
    b.old_log_probs[:] += np.random.default_rng(2).normal(0, 0.1, len(b))
    h = hp(lr=1e-6, optimizer="sgd", max_grad_norm=0.0)
    before, _ = ppo_loss(p, b, h)
    update_step(p, Adam(p, 1e-6, kind="sgd"), b, h)
    after, _ = ppo_loss(p, b, h)
    assert after <= before


def test_adam_first_step_moves_by_lr():
    p = _params(2)
    g = p.zeros_like()
    g.W1[:] = np.random.default_rng(0).choice([-1.0, 1.0], g.W1.shape) * 2.0  # well above eps
    before = p.W1.copy()
    Adam(p, 1e-3).step(p, g)
    np.testing.assert_allclose(before - p.W1, 1e-3 * np.sign(g.W1), rtol=1e-4)
    assert np.array_equal(p.W2, _params(2).W2)


def test_grad_norm_clip():
    g = _params(3).zeros_like()
    g.b1[:] = 1.0
    norm = clip_grad_norm(g, 0.5)
    assert norm == pytest.approx(8.0)
    assert np.linalg.norm(g.b1) == pytest.approx(0.5, rel=1e-5)


def test_log_std_clamped_after_update():
    p = _params(4)
    p.log_std[:] = 1.999
    b = _batch(p, seed=4)
    b.advantages[:] = 5.0
    b.actions[:] = nn.forward(p, b.obs)[0] + 100.0  # pushes std upward
    b.old_log_probs[:] = nn.gaussian_log_prob(b.actions, nn.forward(p, b.obs)[0], p.log_std)
    update_step(p, Adam(p, 0.1), b, hp(max_grad_norm=0.0))
    assert np.all(p.log_std <= 2.0)


def test_hyperparam_contracts():
    with pytest.raises(ContractError):
        Hyperparams(rollout_size=100, batch_size=64)
    with pytest.raises(ContractError):
        Hyperparams(gamma=0.0)
    with pytest.raises(ContractError):
        Hyperparams(lam=1.5)
    with pytest.raises(ContractError):
        Hyperparams(optimizer="rmsprop")


def test_defaults():
    h = Hyperparams()
    assert (h.gamma, h.lr, h.rollout_size, h.batch_size, h.n_epochs) == (0.99, 3e-4, 2048, 64, 10)
    assert (h.clip_eps, h.vf_coef, h.ent_coef, h.lam, h.max_grad_norm) == (0.2, 0.5, 0.0, 0.95, 0.5)


# --- training loop -----------------------------------------------------------------------


SMALL = dict(rollout_size=256, batch_size=64, n_epochs=2, log_interval=0)


@pytest.fixture(scope="module")
def oval():
    return load_scene(TRACKS / "corridor_oval.scene")


def test_one_rollout_one_update(oval):
    calls = []
    trainer = Trainer(oval, Hyperparams(total_steps=256, **SMALL), seed=0,
                      callbacks=[lambda t: calls.append(t.n_updates)])
    trainer.run()
    assert trainer.n_updates == 1 and calls == [1]
    assert trainer.global_step == 256


def test_ratio_is_one_right_after_collection(oval):
    trainer = Trainer(oval, Hyperparams(total_steps=256, **SMALL), seed=1)
    trainer.collect_rollout()
    data = trainer.buffer.flat()
    lp, _ = nn.log_prob_and_entropy(trainer.params, data.obs, data.actions)
    assert np.max(np.abs(np.exp(lp - data.old_log_probs) - 1.0)) <= 1e-6


def test_rollout_advantages_normalized(oval):
    trainer = Trainer(oval, Hyperparams(total_steps=256, **SMALL), seed=2)
    trainer.collect_rollout()
    a = trainer.buffer.advantages
    assert abs(a.mean()) < 1e-10 and abs(a.std() - 1) < 1e-8


def test_training_is_deterministic(oval):
    h = Hyperparams(total_steps=768, **SMALL)
    p1, r1 = train(oval, h, seed=3)
    p2, r2 = train(oval, h, seed=3)
    assert p1.equals(p2) and r1 == r2
    p3, _ = train(oval, h, seed=4)
    assert not p1.equals(p3)


def test_episode_reset_and_records():
    room = square_room()
    h = Hyperparams(total_steps=512, **SMALL)
    trainer = Trainer(room, h, seed=0, task=TaskConfig(max_episode_steps=50))
    trainer.run()
    recs = trainer.records
    assert len(recs) >= 512 // 50
    assert all(r.length <= 50 for r in recs)
    assert [r.episode for r in recs] == list(range(1, len(recs) + 1))
    assert recs[2].moving_avg == pytest.approx(np.mean([r.ret for r in recs[:3]]))


def test_parallel_envs_independent_of_threads(oval, monkeypatch):
    h = Hyperparams(total_steps=512, n_envs=4, **SMALL)
    monkeypatch.setenv("DEPTHNAV_THREADS", "1")
    p1, r1 = train(oval, h, seed=5)
    monkeypatch.setenv("DEPTHNAV_THREADS", "4")
    p2, r2 = train(oval, h, seed=5)
    assert p1.equals(p2) and r1 == r2


def test_resume_matches_uninterrupted_run(oval, tmp_path):
    h = Hyperparams(total_steps=768, **SMALL)
    full = Trainer(oval, h, seed=6)
    full.run()

    first = Trainer(oval, Hyperparams(total_steps=512, **SMALL), seed=6)
    first.run()
    first.save(tmp_path / "mid.npz")
    resumed = Trainer(oval, h, seed=6)
    resumed.load(tmp_path / "mid.npz")
    resumed.run()
    assert resumed.params.equals(full.params)
    assert resumed.records == full.records


def test_outputs_written(oval, tmp_path):
    trainer = Trainer(oval, Hyperparams(total_steps=512, checkpoint_interval=256, **SMALL), seed=0, out_dir=tmp_path)
    trainer.run()
    assert (tmp_path / "checkpoint_256.npz").is_file()
    assert (tmp_path / "checkpoint_final.npz").is_file()
    back = read_learning_curve(tmp_path / "learning_curve.csv")
    assert [(r.episode, r.steps, r.ret, r.moving_avg) for r in back] == \
        [(r.episode, r.steps, r.ret, r.moving_avg) for r in trainer.records]


def test_checkpoint_failure_keeps_state(oval, tmp_path):
    trainer = Trainer(oval, Hyperparams(total_steps=256, **SMALL), seed=0)
    trainer.run()
    blocker = tmp_path / "file"
    blocker.write_text("x")
    before = trainer.params.copy()
    with pytest.raises(CheckpointError, match="kept in memory"):
        trainer.save(blocker / "sub" / "ck.npz")
    assert trainer.params.equals(before)


def test_learning_curve_columns(tmp_path):
    path = tmp_path / "lc.csv"
    write_learning_curve(path, [])
    assert path.read_text().strip() == "episode,steps,return,moving_avg_1000"


def test_decile_means():
    assert decile_means(np.arange(100.0)) == (4.5, 94.5)
