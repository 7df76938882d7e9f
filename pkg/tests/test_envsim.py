import numpy as np
import pytest

from d3rq.envsim import (ActionRepeat, Env, EnvStep, FrameStack, Pendulum, PointMass, TabularEnv,
                         TabularMDP, chain6, make_env, normalize_rows, random_mdp)


class Scripted(Env):
    """Replays a fixed list of (reward, terminal) outcomes."""

    obs_shape = (1,)
    action_dim = 1

    def __init__(self, outcomes, frames=None):
        super().__init__()
        self.outcomes = list(outcomes)
        self.frames = frames
        self.i = 0

    def reset(self, seed=None):
        self.i = 0
        return self._frame()

    def _frame(self):
        if self.frames is None:
            return np.array([float(self.i)])
        return np.full((1, 2, 2), float(self.i))

    def step(self, action):
        reward, terminal = self.outcomes[self.i]
        self.i += 1
        return EnvStep(self._frame(), reward, terminal, False)


@pytest.mark.parametrize("task", ["pendulum", "pointmass", "chain6"])
def test_reset_is_seeded(task):
    a = make_env(task, seed=3).reset()
    b = make_env(task, seed=3).reset()
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("task", ["pendulum", "pointmass", "chain6"])
def test_trajectories_are_bitwise_deterministic(task):
    def run():
        env = make_env(task, action_repeat=2, seed=11)
        obs = [env.reset()]
        actions = np.random.default_rng(0).uniform(-1, 1, size=(50, env.action_dim))
        for a in actions:
            step = env.step(a)
            obs.append(np.append(step.obs, [step.reward, step.terminal, step.truncated]))
            if step.done:
                obs.append(env.reset())
        return np.concatenate(obs)

    assert run().tobytes() == run().tobytes()


def test_pendulum_reset_hangs_down_at_rest():
    env = Pendulum(seed=0)
    obs = env.reset()
    assert abs(abs(env.theta) - np.pi) <= 0.1
    assert env.theta_dot == 0.0
    assert obs[0] < -0.99 and obs[2] == 0.0


def test_pendulum_upright_at_rest_earns_full_reward():
    env = Pendulum()
    env.set_state(0.0, 0.0)
    step = env.step([0.0])
    assert step.reward == 1.0
    np.testing.assert_allclose(step.obs, [1.0, 0.0, 0.0])


def test_pendulum_upright_is_unstable():
    env = Pendulum()
    env.set_state(0.01, 0.0)
    for _ in range(50):
        env.step([0.0])
    assert abs(env.theta) > 0.1


def test_pendulum_truncates_without_terminal():
    env = make_env("pendulum", action_repeat=2, episode_len=5, seed=0)
    env.reset()
    steps = [env.step([0.0]) for _ in range(5)]
    assert [s.truncated for s in steps] == [False] * 4 + [True]
    assert not any(s.terminal for s in steps)
    with pytest.raises(RuntimeError):
        env.step([0.0])


def test_pendulum_rewards_in_unit_interval():
    env = Pendulum(seed=0)
    env.reset()
    rng = np.random.default_rng(0)
    rewards = [env.step(rng.uniform(-1, 1, 1)).reward for _ in range(300)]
    assert 0.0 <= min(rewards) and max(rewards) <= 1.0


def test_pointmass_zero_action_only_damps():
    env = PointMass()
    env.set_state([0.5, -0.3], [0.2, 0.1])
    env.step([0.0, 0.0])
    vel = np.array([0.2, 0.1]) * (1 - env.dt * env.damping)
    np.testing.assert_allclose(env.vel, vel)
    np.testing.assert_allclose(env.pos, np.array([0.5, -0.3]) + env.dt * vel)


def test_pointmass_at_rest_stays_put():
    env = PointMass()
    env.set_state([0.5, -0.3], [0.0, 0.0])
    step = env.step([0.0, 0.0])
    np.testing.assert_array_equal(env.pos, [0.5, -0.3])
    assert step.reward == pytest.approx(np.exp(-4 * 0.34))


def test_pointmass_leaving_arena_is_terminal():
    env = PointMass()
    env.set_state([1.99, 0.0], [5.0, 0.0])
    step = env.step([1.0, 0.0])
    assert step.terminal and not step.truncated


def test_action_clamped_to_box():
    a = Pendulum()
    b = Pendulum()
    a.set_state(1.0, 0.0)
    b.set_state(1.0, 0.0)
    np.testing.assert_array_equal(a.step([5.0]).obs, b.step([1.0]).obs)


def test_chain_forward_from_start_is_certain():
    mdp = chain6()
    assert mdp.P[0, 0, 1] == 1.0
    env = TabularEnv(mdp, seed=0)
    env.reset()
    np.testing.assert_array_equal(env.step([-1.0]).obs, np.eye(6)[1])


def test_tabular_reset_starts_at_zero():
    env = make_env("chain6", seed=5)
    np.testing.assert_array_equal(env.reset(), np.eye(6)[0])


def test_tabular_rows_stochastic():
    mdp = random_mdp(7, 3, 0.9, np.random.default_rng(0), sparsity=0.5)
    np.testing.assert_allclose(mdp.P.sum(axis=2), 1.0, atol=1e-12)
    np.testing.assert_allclose(normalize_rows(np.ones((2, 2, 4))).sum(-1), 1.0, atol=1e-12)


def test_tabular_mdp_validates():
    with pytest.raises(ValueError):
        TabularMDP(np.full((2, 1, 2), 0.6), np.zeros((2, 1)), 0.9)
    with pytest.raises(ValueError):
        TabularMDP(np.full((2, 1, 2), 0.5), np.zeros((2, 1)), 1.0)


def test_action_repeat_one_is_identity():
    a = ActionRepeat(Scripted([(0.3, False), (0.4, False)]), 1)
    a.reset()
    assert a.step([0]).reward == 0.3


def test_action_repeat_sums_rewards():
    env = ActionRepeat(Scripted([(0.3, False), (0.4, False)]), 2)
    env.reset()
    assert env.step([0]).reward == pytest.approx(0.7)


def test_action_repeat_stops_at_terminal():
    env = ActionRepeat(Scripted([(0.3, True), (0.4, False)]), 2)
    env.reset()
    step = env.step([0])
    assert step.reward == 0.3 and step.terminal


def test_frame_stack_one_is_identity():
    env = FrameStack(Scripted([(0, False)] * 3, frames=True), 1)
    assert env.reset().shape == (1, 2, 2)


def test_frame_stack_slots():
    env = FrameStack(Scripted([(0, False)] * 3, frames=True), 3)
    obs = env.reset()
    assert obs.shape == (3, 2, 2) and np.all(obs == 0)
    env.step([0])
    obs = env.step([0]).obs
    np.testing.assert_array_equal(obs[:, 0, 0], [0.0, 1.0, 2.0])


def test_pixel_pendulum_shapes():
    env = make_env("pendulum", pixels=True, frame_stack=3, seed=0)
    obs = env.reset()
    assert obs.shape == env.obs_shape == (9, 84, 84)
    assert 0.0 <= obs.min() and obs.max() <= 1.0


def test_unknown_task_rejected():
    with pytest.raises(ValueError):
        make_env("cartpole")
