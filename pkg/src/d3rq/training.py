"""Single-process training loop and the pieces the actor-learner runtime reuses.

Random streams are derived from the config seed by name so that an actor
worker and the single-process loop draw identical numbers:

* ``init``     network initialisation
* ``env``      environment resets (per worker)
* ``explore``  warmup and exploration noise (per worker)
* ``learner``  replay sampling, augmentation, target and actor noise
* ``eval``     evaluation environment
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import netcore
from .agent import Agent, Networks, NoiseSchedule, Policy, sigma_at
from .config import Config
from .envsim import make_env
from .replay import ReplayBuffer, ReplayStarved, Transition
from .valuedist import make_support

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "eval_return", "critic_loss_1", "critic_loss_2", "actor_loss", "sigma", "fps")
STREAMS = {"init": 0, "env": 1, "explore": 2, "learner": 3, "eval": 4}


def stream_seed(seed: int, name: str, worker: int = 0) -> int:
    ss = np.random.SeedSequence([seed, STREAMS[name], worker])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def stream_rng(seed: int, name: str, worker: int = 0):
    return np.random.default_rng(np.random.SeedSequence([seed, STREAMS[name], worker]))


def build_env(config: Config, seed=None):
    return make_env(config.task, config.action_repeat, pixels=config.pixels,
                    frame_stack=config.frame_stack, episode_len=config.episode_len or None, seed=seed)


def support_for(config: Config, env):
    if config.mode != "categorical":
        return None
    if config.v_min is not None:
        return make_support(config.v_min, config.v_max, config.n_atoms)
    return make_support(0.0, env.reward_max / (1.0 - config.gamma), config.n_atoms)


def schedule_for(config: Config) -> NoiseSchedule:
    return NoiseSchedule(config.sigma_init, config.sigma_final, config.sigma_start,
                         config.sigma_end, config.noise_clip)


def networks_for(config: Config, env) -> Networks:
    return Networks.build(env.obs_shape, env.action_dim, config.mode, config.hidden_dim,
                          config.features_dim, config.n_atoms)


def build_agent(config: Config, env) -> Agent:
    return Agent(
        networks_for(config, env), support_for(config, env), schedule_for(config),
        gamma=config.gamma, n_step=config.n_step, batch_size=config.batch_size, lr=config.lr,
        tau=config.tau, warmup_steps=config.warmup_steps, seed=stream_seed(config.seed, "init"),
        dtype=np.dtype(config.dtype),
    )


def eval_envs(config: Config, episodes: int | None = None):
    """One independently seeded environment per evaluation episode."""
    count = config.eval_episodes if episodes is None else episodes
    return [build_env(config, seed=stream_seed(config.seed, "eval", i)) for i in range(count)]


def evaluate(policy: Policy, envs):
    """Return of one deterministic episode in each of ``envs``.

    Episodes run side by side so the actor sees one batch per step.
    """
    obs = [env.reset() for env in envs]
    totals = [0.0] * len(envs)
    live = list(range(len(envs)))
    while live:
        actions = policy.mean_actions(np.stack([obs[i] for i in live]))
        still = []
        for i, a in zip(live, actions):
            step = envs[i].step(a)
            totals[i] += step.reward
            obs[i] = step.obs
            if not step.done:
                still.append(i)
        live = still
    return totals


class Collector:
    """Steps one environment with a policy and emits transitions."""

    def __init__(self, config: Config, worker: int = 0):
        self.config = config
        self.worker = worker
        self.env = build_env(config, seed=stream_seed(config.seed, "env", worker))
        self.rng = stream_rng(config.seed, "explore", worker)
        self.obs = None
        self.episode = -1
        self.ep_step = 0

    def step(self, policy: Policy, t: int) -> Transition:
        if self.obs is None:
            self.obs = self.env.reset()
            self.episode += 1
            self.ep_step = 0
        action = policy.act(self.obs, t, explore=True, rng=self.rng)
        es = self.env.step(action)
        tr = Transition(
            obs=self.obs, action=np.asarray(action, dtype=np.float32), reward=es.reward,
            next_obs=es.obs, terminal=es.terminal, truncated=es.truncated,
            episode=self.episode, step=self.ep_step, writer=self.worker,
        )
        self.ep_step += 1
        self.obs = None if es.done else es.obs
        return tr


@dataclass
class LearnerCore:
    """Everything the learner does once transition ``t`` has been stored."""

    config: Config
    agent: Agent
    replay: ReplayBuffer
    eval_envs: list
    rng: np.random.Generator
    last_losses: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    timer: float = field(default_factory=time.perf_counter)
    frames_at_timer: int = 0

    @classmethod
    def create(cls, config: Config):
        env = build_env(config)
        agent = build_agent(config, env)
        replay = ReplayBuffer(config.capacity)
        return cls(config, agent, replay, eval_envs(config), stream_rng(config.seed, "learner"))

    def should_update(self, t: int) -> bool:
        c = self.config
        return t >= c.warmup_steps and t >= c.n_step - 1 and t % c.update_every == 0

    def on_transition(self, t: int):
        """Run the updates and evaluation scheduled for step ``t``.

        Returns the number of updates performed and the metric row, if any.
        """
        updates = 0
        if self.should_update(t):
            try:
                result = self.agent.update(self.replay, t, self.rng)
            except ReplayStarved as exc:
                log.debug("update at step %d deferred: %s", t, exc)
                result = None
            if result is not None:
                self.last_losses = result
                updates = 1
        row = None
        if (t + 1) % self.config.eval_every == 0:
            row = self.metric_row(t + 1)
        return updates, row

    def metric_row(self, steps: int) -> dict:
        c = self.config
        returns = evaluate(self.agent.policy(), self.eval_envs)
        fps = math.nan
        if c.timing:
            now = time.perf_counter()
            frames = steps * c.action_repeat
            fps = (frames - self.frames_at_timer) / max(now - self.timer, 1e-9)
            self.timer, self.frames_at_timer = now, frames
        row = {
            "step": steps,
            "eval_return": float(np.mean(returns)),
            "critic_loss_1": self.last_losses.get("critic_loss_1", math.nan),
            "critic_loss_2": self.last_losses.get("critic_loss_2", math.nan),
            "actor_loss": self.last_losses.get("actor_loss", math.nan),
            "sigma": sigma_at(self.agent.schedule, steps - 1),
            "fps": fps,
        }
        self.rows.append(row)
        log.info("step %d eval_return %.2f", steps, row["eval_return"])
        return row


def format_value(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    return "" if math.isnan(value) else repr(value)


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in rows:
        writer.writerow([format_value(row[col]) for col in METRIC_COLUMNS])
    return buf.getvalue()


class RunWriter:
    """Streams metric rows and checkpoints into an output directory."""

    def __init__(self, out_dir, config: Config):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.effective").write_text(config.dumps())
        self.csv_path = self.out / "metrics.csv"
        self.csv_path.write_text(",".join(METRIC_COLUMNS) + "\n")

    def row(self, row: dict):
        with open(self.csv_path, "a") as fh:
            fh.write(metrics_csv([row]).split("\n", 1)[1])

    def checkpoint(self, agent: Agent, config: Config, name="checkpoint.d3rq"):
        save_agent(self.out / name, agent, config)


def save_agent(path, agent: Agent, config: Config):
    tensors = dict(agent.to_tensors())
    tensors["meta/config"] = np.frombuffer(config.dumps().encode("utf-8"), dtype=np.uint8)
    netcore.save_checkpoint(path, tensors)


def train(config: Config, out_dir=None):
    """Interleave collection and updates; returns the list of metric rows."""
    core = LearnerCore.create(config)
    collector = Collector(config, worker=0)
    writer = RunWriter(out_dir, config) if out_dir is not None else None
    for t in range(config.agent_steps):
        tr = collector.step(core.agent.policy(), t)
        core.replay.push(tr)
        _, row = core.on_transition(t)
        if writer is not None:
            if row is not None:
                writer.row(row)
            if config.checkpoint_every and (t + 1) % config.checkpoint_every == 0:
                writer.checkpoint(core.agent, config, f"checkpoint_{t + 1}.d3rq")
    if writer is not None:
        writer.checkpoint(core.agent, config)
    return core.rows
