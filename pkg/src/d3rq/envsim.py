"""Desk-scale environments and wrappers.

``pendulum`` and ``pointmass`` are continuous control tasks with per-step
rewards in [0, 1]; ``chain6`` is a tabular MDP used as an exact oracle target.
Time limits set ``truncated``; only absorbing failures set ``terminal``.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

TASKS = ("pendulum", "pointmass", "chain6")


@dataclass(frozen=True)
class EnvStep:
    obs: np.ndarray
    reward: float
    terminal: bool = False
    truncated: bool = False

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated


class Env:
    """Minimal environment protocol shared by tasks and wrappers."""

    obs_shape: tuple
    action_dim: int
    reward_max: float = 1.0

    def __init__(self):
        self._needs_reset = True

    def reset(self, seed=None):
        raise NotImplementedError

    def step(self, action) -> EnvStep:
        raise NotImplementedError

    def _check_action(self, action):
        a = np.asarray(action, dtype=np.float64).reshape(self.action_dim)
        clipped = np.clip(a, -1.0, 1.0)
        if np.any(clipped != a):
            log.debug("action %s clamped to the [-1, 1] box", a)
        return clipped

    def _check_running(self):
        if self._needs_reset:
            raise RuntimeError("step() called on a finished episode; call reset() first")


class Pendulum(Env):
    """Torque-limited swing-up; angle 0 is upright.

    Semi-implicit Euler on theta'' = (g/l) sin(theta) - damping * theta' + u * max_torque.
    """

    obs_shape = (3,)
    action_dim = 1

    def __init__(self, max_steps=1000, g_over_l=10.0, max_torque=2.0, damping=0.05, dt=0.02,
                 seed=None):
        super().__init__()
        self.max_steps = max_steps
        self.g_over_l = g_over_l
        self.max_torque = max_torque
        self.damping = damping
        self.dt = dt
        self.rng = np.random.default_rng(seed)
        self.theta = np.pi
        self.theta_dot = 0.0
        self.t = 0

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.theta = np.pi + self.rng.uniform(-0.1, 0.1)
        self.theta_dot = 0.0
        self.t = 0
        self._needs_reset = False
        return self.observe()

    def set_state(self, theta, theta_dot):
        self.theta, self.theta_dot = float(theta), float(theta_dot)
        self._needs_reset = False

    def observe(self):
        return np.array([np.cos(self.theta), np.sin(self.theta), self.theta_dot / 8.0])

    def step(self, action) -> EnvStep:
        self._check_running()
        u = self._check_action(action)[0]
        acc = self.g_over_l * np.sin(self.theta) - self.damping * self.theta_dot + u * self.max_torque
        self.theta_dot = self.theta_dot + self.dt * acc
        theta = self.theta + self.dt * self.theta_dot
        self.theta = float(np.arctan2(np.sin(theta), np.cos(theta)))
        self.t += 1
        reward = 0.5 * (1.0 + np.cos(self.theta))
        truncated = self.t >= self.max_steps
        self._needs_reset = truncated
        return EnvStep(self.observe(), float(reward), False, truncated)

    def render(self, size=84):
        tip = (np.sin(self.theta), np.cos(self.theta))
        return _render_segment(size, (0.0, 0.0), tip, color=(1.0, 0.6, 0.2))


class PointMass(Env):
    """Force-driven 2-D point that should sit on the origin.

    Leaving the arena (|x| or |y| > 2) is an absorbing failure.
    """

    obs_shape = (4,)
    action_dim = 2

    def __init__(self, max_steps=300, dt=0.05, force=2.0, damping=1.0, arena=2.0, seed=None):
        super().__init__()
        self.max_steps = max_steps
        self.dt = dt
        self.force = force
        self.damping = damping
        self.arena = arena
        self.rng = np.random.default_rng(seed)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.t = 0

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.pos = self.rng.uniform(-1.0, 1.0, size=2)
        self.vel = np.zeros(2)
        self.t = 0
        self._needs_reset = False
        return self.observe()

    def set_state(self, pos, vel):
        self.pos = np.array(pos, dtype=np.float64)
        self.vel = np.array(vel, dtype=np.float64)
        self._needs_reset = False

    def observe(self):
        return np.concatenate([self.pos, self.vel])

    def step(self, action) -> EnvStep:
        self._check_running()
        a = self._check_action(action)
        self.vel = self.vel + self.dt * (self.force * a - self.damping * self.vel)
        self.pos = self.pos + self.dt * self.vel
        self.t += 1
        reward = float(np.exp(-4.0 * np.dot(self.pos, self.pos)))
        terminal = bool(np.any(np.abs(self.pos) > self.arena))
        truncated = (not terminal) and self.t >= self.max_steps
        self._needs_reset = terminal or truncated
        return EnvStep(self.observe(), reward, terminal, truncated)

    def render(self, size=84):
        img = np.full((3, size, size), 0.1, dtype=np.float32)
        yy, xx = np.mgrid[0:size, 0:size]
        scale = (size - 1) / (2 * self.arena)

        def disc(center, radius, color):
            cx = (center[0] + self.arena) * scale
            cy = (self.arena - center[1]) * scale
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2
            for c in range(3):
                img[c][mask] = color[c]

        disc((0.0, 0.0), 3, (0.2, 0.8, 0.2))
        disc(self.pos, 4, (0.9, 0.2, 0.2))
        return img


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP: P[s, a, s'] transition probabilities, R[s, a] rewards."""

    P: np.ndarray
    R: np.ndarray
    gamma: float

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        R = np.asarray(self.R, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape[:2]:
            raise ValueError("P must be (S, A, S) and R must be (S, A)")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("transition rows must be stochastic")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]


def normalize_rows(P):
    """Rescale a nonnegative (S, A, S) tensor so every row sums to one."""
    P = np.asarray(P, dtype=np.float64)
    return P / P.sum(axis=-1, keepdims=True)


def chain6(gamma: float = 0.9) -> TabularMDP:
    """Six-state chain. Action 0 pushes forward, action 1 falls back.

    Forward: 0 -> 1 surely; 1..4 advance w.p. 0.8 else stay; 5 stays w.p. 0.8
    else restarts at 0. Back: to state 0 w.p. 0.9, else one step forward.
    Reward 1 for any action in state 5, 0.2 for falling back from state 0.
    """
    S, A = 6, 2
    P = np.zeros((S, A, S))
    P[0, 0, 1] = 1.0
    for s in range(1, 5):
        P[s, 0, s + 1] = 0.8
        P[s, 0, s] = 0.2
    P[5, 0, 5] = 0.8
    P[5, 0, 0] = 0.2
    for s in range(S):
        P[s, 1, 0] += 0.9
        P[s, 1, min(s + 1, S - 1)] += 0.1
    R = np.zeros((S, A))
    R[5, :] = 1.0
    R[0, 1] = 0.2
    return TabularMDP(P, R, gamma)


def random_mdp(n_states, n_actions, gamma, rng, sparsity=0.0) -> TabularMDP:
    P = rng.random((n_states, n_actions, n_states))
    if sparsity:
        P = P * (rng.random(P.shape) >= sparsity)
        P[..., 0] += 1e-3
    return TabularMDP(normalize_rows(P), rng.random((n_states, n_actions)), gamma)


class TabularEnv(Env):
    """Samples a :class:`TabularMDP`; observations are one-hot states.

    The 1-D continuous action selects action 0 when negative, else 1.
    """

    action_dim = 1

    def __init__(self, mdp: TabularMDP, max_steps=100, seed=None):
        super().__init__()
        self.mdp = mdp
        self.max_steps = max_steps
        self.obs_shape = (mdp.n_states,)
        self.reward_max = float(mdp.R.max())
        self.rng = np.random.default_rng(seed)
        self.state = 0
        self.t = 0

    @staticmethod
    def action_index(action) -> int:
        return 0 if float(np.asarray(action).reshape(-1)[0]) < 0 else 1

    def observe(self):
        obs = np.zeros(self.mdp.n_states)
        obs[self.state] = 1.0
        return obs

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = 0
        self.t = 0
        self._needs_reset = False
        return self.observe()

    def step(self, action) -> EnvStep:
        self._check_running()
        a = self.action_index(self._check_action(action))
        reward = float(self.mdp.R[self.state, a])
        self.state = int(self.rng.choice(self.mdp.n_states, p=self.mdp.P[self.state, a]))
        self.t += 1
        truncated = self.t >= self.max_steps
        self._needs_reset = truncated
        return EnvStep(self.observe(), reward, False, truncated)


# -- wrappers -----------------------------------------------------------------

class Wrapper(Env):
    def __init__(self, env: Env):
        self.env = env

    @property
    def obs_shape(self):
        return self.env.obs_shape

    @property
    def action_dim(self):
        return self.env.action_dim

    @property
    def reward_max(self):
        return self.env.reward_max

    @property
    def unwrapped(self):
        env = self.env
        while isinstance(env, Wrapper):
            env = env.env
        return env

    def reset(self, seed=None):
        return self.env.reset(seed)

    def step(self, action):
        return self.env.step(action)


class ActionRepeat(Wrapper):
    """Apply each action ``k`` times and sum the rewards; stop early when done."""

    def __init__(self, env: Env, k: int):
        if k < 1:
            raise ValueError("action repeat must be >= 1")
        super().__init__(env)
        self.k = k

    @property
    def reward_max(self):
        return self.env.reward_max * self.k

    def step(self, action):
        total = 0.0
        for _ in range(self.k):
            step = self.env.step(action)
            total += step.reward
            if step.done:
                break
        return EnvStep(step.obs, total, step.terminal, step.truncated)


class PixelObservation(Wrapper):
    """Replace observations with a rendered (3, size, size) image."""

    def __init__(self, env: Env, size=84):
        if not hasattr(env.unwrapped if isinstance(env, Wrapper) else env, "render"):
            raise ValueError("environment cannot render pixels")
        super().__init__(env)
        self.size = size

    @property
    def obs_shape(self):
        return (3, self.size, self.size)

    def _frame(self):
        return self.unwrapped.render(self.size)

    def reset(self, seed=None):
        self.env.reset(seed)
        return self._frame()

    def step(self, action):
        step = self.env.step(action)
        return EnvStep(self._frame(), step.reward, step.terminal, step.truncated)


class FrameStack(Wrapper):
    """Concatenate the ``k`` most recent frames along the channel axis."""

    def __init__(self, env: Env, k: int):
        if k < 1:
            raise ValueError("frame stack must be >= 1")
        super().__init__(env)
        self.k = k
        self.frames = deque(maxlen=k)

    @property
    def obs_shape(self):
        c, h, w = self.env.obs_shape
        return (c * self.k, h, w)

    def _obs(self):
        return np.concatenate(list(self.frames), axis=0)

    def reset(self, seed=None):
        frame = self.env.reset(seed)
        for _ in range(self.k):
            self.frames.append(frame)
        return self._obs()

    def step(self, action):
        step = self.env.step(action)
        self.frames.append(step.obs)
        return EnvStep(self._obs(), step.reward, step.terminal, step.truncated)


def _render_segment(size, start, end, color, thickness=0.08):
    img = np.full((3, size, size), 0.1, dtype=np.float32)
    yy, xx = np.mgrid[0:size, 0:size]
    # map [-1.2, 1.2]^2 world coordinates to pixels, y up
    px = (xx / (size - 1)) * 2.4 - 1.2
    py = 1.2 - (yy / (size - 1)) * 2.4
    sx, sy = start
    ex, ey = end
    dx, dy = ex - sx, ey - sy
    t = np.clip(((px - sx) * dx + (py - sy) * dy) / (dx * dx + dy * dy + 1e-12), 0.0, 1.0)
    dist2 = (px - sx - t * dx) ** 2 + (py - sy - t * dy) ** 2
    mask = dist2 <= thickness ** 2
    for c in range(3):
        img[c][mask] = color[c]
    return img


def make_env(task: str, action_repeat: int = 1, pixels: bool = False, frame_stack: int = 3,
             episode_len: int | None = None, seed=None) -> Env:
    """Build a task by name; ``episode_len`` counts wrapped (repeated) steps."""
    if task == "pendulum":
        episode_len = 500 if episode_len is None else episode_len
        env = Pendulum(max_steps=episode_len * action_repeat, seed=seed)
    elif task == "pointmass":
        episode_len = 300 if episode_len is None else episode_len
        env = PointMass(max_steps=episode_len * action_repeat, seed=seed)
    elif task == "chain6":
        if pixels:
            raise ValueError("chain6 has no pixel rendering")
        episode_len = 100 if episode_len is None else episode_len
        env = TabularEnv(chain6(), max_steps=episode_len * action_repeat, seed=seed)
    else:
        raise ValueError(f"unknown task {task!r}; choose from {', '.join(TASKS)}")
    if action_repeat != 1:
        env = ActionRepeat(env, action_repeat)
    if pixels:
        env = FrameStack(PixelObservation(env), frame_stack)
    return env
