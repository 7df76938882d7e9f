from dataclasses import replace

import numpy as np
import pytest

from d3rq import netcore
from d3rq.agent import (Agent, Networks, NoiseSchedule, actor_loss_and_grads, clip_noise,
                        critic_loss_and_grads, sigma_at)
from d3rq.config import Config
from d3rq.netcore import ParamSet
from d3rq.replay import ReplayBuffer, Transition
from d3rq.training import metrics_csv, train
from d3rq.valuedist import expectation, make_support, project, softmax
from d3rq.verify import chain_target_gap, grad_check_actor, grad_check_critic


def small_agent(mode="categorical", obs_dim=3, support=None, seed=0, **kw):
    support = support or (make_support(0.0, 2.0, 3) if mode == "categorical" else None)
    n_atoms = support.n_atoms if support else 51
    nets = Networks.build((obs_dim,), 1, mode, hidden_dim=8, n_atoms=n_atoms)
    return Agent(nets, support, NoiseSchedule(), seed=seed, dtype=np.float64, **kw)


def constant_critic(nets, logits):
    """Critic whose output ignores its input and equals ``logits``."""
    p = nets.critic.init(0, np.float64)
    return ParamSet({k: (np.zeros_like(v) if k == "l2.w" else
                         np.asarray(logits, dtype=np.float64) if k == "l2.b" else v)
                     for k, v in p.items()})


# -- noise schedule -------------------------------------------------------------

def test_sigma_schedule_examples():
    s = NoiseSchedule(1.0, 0.05, 0, 50_000)
    assert sigma_at(s, 0) == 1.0
    assert sigma_at(s, 50_000) == 0.05 and sigma_at(s, 10**7) == 0.05
    assert sigma_at(s, 25_000) == pytest.approx(0.525)


def test_sigma_before_start_is_initial():
    assert sigma_at(NoiseSchedule(1.0, 0.1, 100, 200), 50) == 1.0


@pytest.mark.parametrize("kw", [dict(sigma_init=0.1, sigma_final=0.2), dict(start_step=5, end_step=5),
                                dict(clip=0.0)])
def test_schedule_validation(kw):
    with pytest.raises(ValueError):
        NoiseSchedule(**kw)


def test_noise_is_clipped():
    assert clip_noise(0.7, 0.2) == 0.2
    assert clip_noise(-0.7, 0.2) == -0.2


# -- acting ---------------------------------------------------------------------

def test_deterministic_action_repeats():
    agent = small_agent(warmup_steps=0)
    obs = np.array([0.1, -0.4, 0.9])
    a = agent.act(obs, 10, explore=False)
    np.testing.assert_array_equal(a, agent.act(obs, 10, explore=False))
    assert np.all(np.abs(a) <= 1)


def test_zero_sigma_explores_deterministically():
    agent = small_agent(warmup_steps=0)
    agent.schedule = NoiseSchedule(0.0, 0.0, 0, 1)
    obs = np.array([0.1, -0.4, 0.9])
    np.testing.assert_array_equal(agent.act(obs, 5, True, np.random.default_rng(0)),
                                  agent.act(obs, 5, False))


def test_exploration_noise_bounded_by_clip():
    agent = small_agent(warmup_steps=0)
    obs = np.zeros(3)
    base = agent.act(obs, 0, False)
    rng = np.random.default_rng(0)
    diffs = np.array([agent.act(obs, 0, True, rng) - base for _ in range(200)])
    assert np.max(np.abs(diffs)) <= 0.2 + 1e-12
    assert np.max(np.abs(diffs)) > 0.19


def test_warmup_actions_are_uniform_on_the_box():
    agent = small_agent(warmup_steps=100)
    rng = np.random.default_rng(0)
    acts = np.array([agent.act(np.zeros(3), t, True, rng) for t in range(100)])
    assert acts.min() < -0.9 and acts.max() > 0.9


# -- targets ------------------------------------------------------------------

def test_no_bootstrap_target_is_point_mass():
    agent = small_agent(support=make_support(0.0, 2.0, 5))
    target = agent.critic_targets(np.zeros((1, 3)), np.array([0.5]), np.array([0.99]),
                                  np.array([0.0]), np.random.default_rng(0), sigma=0.5)
    np.testing.assert_allclose(target[0], [0, 1, 0, 0, 0], atol=1e-15)


def _two_target_agent(support):
    agent = small_agent(support=support)
    p1 = np.array([0.25, 0.5, 0.25])
    p2 = np.array([0.35, 0.5, 0.15])
    agent.state = replace(agent.state, target1=constant_critic(agent.nets, np.log(p1)),
                          target2=constant_critic(agent.nets, np.log(p2)))
    return agent, p1, p2


def test_min_rule_selects_smaller_expectation():
    support = make_support(0.0, 2.0, 3)
    agent, p1, p2 = _two_target_agent(support)
    assert expectation(support, p1) == pytest.approx(1.0)
    assert expectation(support, p2) == pytest.approx(0.8)
    target = agent.critic_targets(np.zeros((2, 3)), np.zeros(2), np.ones(2), np.ones(2),
                                  np.random.default_rng(0), sigma=0.0)
    np.testing.assert_allclose(target, [p2, p2], atol=1e-12)


def test_min_rule_invariant_to_support_scaling():
    for top in (2.0, 7.0, 30.0):
        agent, _, p2 = _two_target_agent(make_support(0.0, top, 3))
        target = agent.critic_targets(np.zeros((1, 3)), np.zeros(1), np.ones(1), np.ones(1),
                                      np.random.default_rng(0), sigma=0.0)
        np.testing.assert_allclose(target[0], p2, atol=1e-12)


def test_scalar_targets_use_smaller_critic():
    agent = small_agent("scalar")
    agent.state = replace(agent.state, target1=constant_critic(agent.nets, [2.0]),
                          target2=constant_critic(agent.nets, [1.5]))
    target = agent.critic_targets(np.zeros((2, 3)), np.array([1.0, 1.0]), np.array([0.5, 0.5]),
                                  np.array([1.0, 0.0]), np.random.default_rng(0), sigma=0.0)
    np.testing.assert_allclose(target, [1.75, 1.0])


@pytest.mark.parametrize("n", [1, 2, 3])
def test_targets_match_tabular_operator(n):
    assert chain_target_gap(n=n) < 1e-6


# -- critic update -----------------------------------------------------------

def test_cross_entropy_minimum_has_zero_logit_gradient():
    agent = small_agent()
    nets = agent.nets
    c = agent.state.critic1
    obs = np.random.default_rng(0).normal(size=(4, 3))
    act = np.zeros((4, 1))
    logits, _ = netcore.forward(nets.critic, c, np.concatenate([obs, act], 1))
    _, _, g1, _, _ = critic_loss_and_grads(nets, c, c, netcore.ParamSet(), obs, act, softmax(logits))
    assert max(np.abs(g).max() for g in g1.values()) < 1e-12


@pytest.mark.parametrize("mode", ["categorical", "scalar"])
@pytest.mark.parametrize("seed", range(5))
def test_critic_gradients_match_finite_differences(mode, seed):
    assert grad_check_critic(np.random.default_rng(seed), mode) < 1e-4


def _chain_batch(agent, rng, size=64):
    from d3rq.envsim import chain6
    from d3rq.oracle import TabularPolicy, exact_q
    mdp = chain6()
    Q = exact_q(mdp, TabularPolicy.uniform(6, 2))
    s = rng.integers(0, 6, size)
    a = rng.integers(0, 2, size)
    return np.eye(6)[s], np.where(a == 1, 0.5, -0.5)[:, None], Q[s, a]


def test_scalar_loss_decreases_on_exact_targets():
    agent = small_agent("scalar", obs_dim=6, lr=1e-3)
    obs, act, target = _chain_batch(agent, np.random.default_rng(0))
    losses = [agent.update_critic(obs, act, target)[0] for _ in range(100)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_targets_change_only_by_soft_update():
    agent = small_agent("scalar", obs_dim=6, tau=0.01)
    obs, act, target = _chain_batch(agent, np.random.default_rng(0))
    for _ in range(20):
        before = agent.state.target1
        agent.update_critic(obs, act, target)
        assert agent.state.target1.equal(netcore.soft_update(before, agent.state.critic1, 0.01))


def test_target_parameters_do_not_enter_online_gradients():
    agent = small_agent()
    s = agent.state
    obs = np.random.default_rng(0).normal(size=(4, 3))
    act = np.zeros((4, 1))
    target = np.full((4, 3), 1 / 3)
    ref = critic_loss_and_grads(agent.nets, s.critic1, s.critic2, s.encoder, obs, act, target)
    agent.state = replace(s, target1=s.target1.map(lambda v: v + 1.0))
    again = critic_loss_and_grads(agent.nets, s.critic1, s.critic2, s.encoder, obs, act, target)
    for g, h in zip(ref[2:4], again[2:4]):
        assert all(np.array_equal(g[k], h[k]) for k in g)


# -- actor update -------------------------------------------------------------

def test_actor_gradient_zero_when_critic_ignores_action():
    agent = small_agent()
    c = agent.state.critic1
    w = c["l0.w"].copy()
    w[-1] = 0.0  # the action input is the last row
    blind = ParamSet({**c, "l0.w": w})
    h = np.random.default_rng(0).normal(size=(5, 3))
    _, grads = actor_loss_and_grads(agent.nets, agent.support, agent.state.actor, blind, blind, h,
                                    np.zeros((5, 1)))
    assert all(not np.any(g) for g in grads.values())


def peaked_critic(nets, peak):
    """Scalar critic equal to -|a - peak|, built from two hinge units."""
    feat, hidden = nets.feature_dim, nets.critic.layers[0][3]
    w0 = np.zeros((feat + 1, hidden))
    b0 = np.zeros(hidden)
    w0[feat, 0], b0[0] = 1.0, -peak
    w0[feat, 1], b0[1] = -1.0, peak
    w2 = np.zeros((hidden, 1))
    w2[0, 0] = w2[1, 0] = -1.0
    return ParamSet({"l0.w": w0, "l0.b": b0, "l1.w": np.eye(hidden), "l1.b": np.zeros(hidden),
                     "l2.w": w2, "l2.b": np.zeros(1)})


def test_actor_climbs_to_critic_peak():
    agent = small_agent("scalar", lr=1e-2)
    critic = peaked_critic(agent.nets, 0.3)
    agent.state = replace(agent.state, critic1=critic, critic2=critic)
    h = np.random.default_rng(0).normal(size=(8, 3))
    for _ in range(300):
        agent.update_actor(h, np.zeros((8, 1)))
    a = agent.policy().mean_actions(h)
    np.testing.assert_allclose(a, 0.3, atol=0.05)


@pytest.mark.parametrize("mode", ["categorical", "scalar"])
@pytest.mark.parametrize("seed", range(5))
def test_actor_gradients_match_finite_differences(mode, seed):
    assert grad_check_actor(np.random.default_rng(seed), mode) < 1e-4


def _filled_replay(obs_dim=3, steps=300):
    buf = ReplayBuffer(1000)
    rng = np.random.default_rng(0)
    for t in range(steps):
        buf.push(Transition(rng.normal(size=obs_dim), rng.uniform(-1, 1, 1), float(rng.random()),
                            rng.normal(size=obs_dim), truncated=(t % 50 == 49), episode=t // 50,
                            step=t % 50))
    return buf


def test_actor_update_leaves_critics_and_encoder_untouched():
    agent = small_agent()
    before = agent.state
    agent.update_actor(np.random.default_rng(0).normal(size=(4, 3)), np.zeros((4, 1)))
    after = agent.state
    assert after.critic1 is before.critic1 and after.critic2 is before.critic2
    assert after.encoder is before.encoder and after.target1 is before.target1
    assert not after.actor.equal(before.actor)


def test_critic_outputs_stay_normalized_through_updates():
    support = make_support(0.0, 10.0, 11)
    agent = small_agent(support=support, batch_size=16, n_step=3)
    buf = _filled_replay()
    rng = np.random.default_rng(0)
    for t in range(20):
        assert agent.update(buf, t, rng) is not None
        logits, _ = netcore.forward(agent.nets.critic, agent.state.critic1,
                                    np.random.default_rng(t).normal(size=(4, 4)))
        p = softmax(logits)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)


def test_non_finite_loss_is_skipped_and_counted():
    agent = small_agent(batch_size=8)
    buf = ReplayBuffer(100)
    for t in range(20):
        buf.push(Transition(np.full(3, np.nan), np.zeros(1), 0.0, np.full(3, np.nan),
                            truncated=(t == 19), step=t))
    before = agent.state
    assert agent.update(buf, 0, np.random.default_rng(0)) is None
    assert agent.skipped_updates == 1
    assert agent.state is before


def test_pixel_agent_updates():
    nets = Networks.build((9, 20, 20), 1, "categorical", hidden_dim=8, features_dim=5, n_atoms=5)
    agent = Agent(nets, make_support(0, 1, 5), NoiseSchedule(), batch_size=4, dtype=np.float64)
    buf = ReplayBuffer(100)
    rng = np.random.default_rng(0)
    for t in range(10):
        buf.push(Transition(rng.random((9, 20, 20)), rng.uniform(-1, 1, 1), 0.5,
                            rng.random((9, 20, 20)), truncated=(t == 9), step=t))
    enc = agent.state.encoder
    assert agent.update(buf, 0, rng) is not None
    assert not agent.state.encoder.equal(enc)


def test_tensor_round_trip():
    a = small_agent(seed=1)
    b = small_agent(seed=2)
    b.load_tensors(a.to_tensors())
    assert b.state.actor.equal(a.state.actor) and b.state.target2.equal(a.state.target2)
    with pytest.raises(ValueError):
        small_agent(obs_dim=4).load_tensors(a.to_tensors())


# -- training loop -------------------------------------------------------------

def tiny_config(**kw):
    base = dict(total_frames=400, hidden_dim=16, batch_size=16, warmup_steps=50, eval_every=50,
                eval_episodes=2, episode_len=40, capacity=1000)
    base.update(kw)
    return Config(**base)


def test_zero_frames_trains_nothing():
    assert train(tiny_config(total_frames=0)) == []


@pytest.mark.parametrize("mode", ["categorical", "scalar"])
def test_training_is_reproducible(mode):
    a = metrics_csv(train(tiny_config(mode=mode)))
    b = metrics_csv(train(tiny_config(mode=mode)))
    assert a == b
    assert a.count("\n") == 1 + 4


def test_different_seeds_differ():
    assert metrics_csv(train(tiny_config(seed=1))) != metrics_csv(train(tiny_config(seed=2)))
