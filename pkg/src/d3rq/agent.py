"""Twin-critic distributional actor-critic with random-shift augmentation.

Two critic modes share the same machinery:

* ``categorical``: each critic outputs logits over a fixed atom grid; targets
  are n-step shifted and projected distributions, the loss is cross-entropy.
* ``scalar``: each critic outputs one value; targets are n-step returns and
  the loss is the squared Bellman residual.

Targets take the whole distribution (or value) of whichever target critic has
the smaller expectation at the bootstrap state. The actor maximises the
smaller of the two online critic expectations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import augment, netcore
from .netcore import ParamSet
from .valuedist import Support, bellman_project, cross_entropy_loss, softmax

log = logging.getLogger(__name__)

EMPTY = ParamSet()


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_init: float = 1.0
    sigma_final: float = 0.05
    start_step: int = 0
    end_step: int = 50_000
    clip: float = 0.2

    def __post_init__(self):
        if self.sigma_final > self.sigma_init:
            raise ValueError("sigma_final must not exceed sigma_init")
        if self.end_step <= self.start_step:
            raise ValueError("end_step must exceed start_step")
        if self.clip <= 0:
            raise ValueError("clip must be positive")


def sigma_at(schedule: NoiseSchedule, t) -> float:
    """Linear ramp from sigma_init to sigma_final between start and end steps."""
    frac = (t - schedule.start_step) / (schedule.end_step - schedule.start_step)
    frac = min(max(frac, 0.0), 1.0)
    return (1.0 - frac) * schedule.sigma_init + frac * schedule.sigma_final


def clip_noise(raw, clip):
    return np.clip(raw, -clip, clip)


def sample_noise(rng, sigma, clip, shape):
    return clip_noise(sigma * rng.standard_normal(shape), clip)


@dataclass(frozen=True)
class Networks:
    """Architecture shared by learner and actors."""

    obs_shape: tuple
    action_dim: int
    actor: netcore.Network
    critic: netcore.Network
    encoder: netcore.Network | None
    feature_dim: int
    mode: str

    @classmethod
    def build(cls, obs_shape, action_dim, mode="categorical", hidden_dim=1024,
              features_dim=50, n_atoms=51):
        obs_shape = tuple(obs_shape)
        if len(obs_shape) == 3:
            encoder = netcore.conv_encoder(obs_shape, features_dim)
            feat = features_dim
        elif len(obs_shape) == 1:
            encoder, feat = None, obs_shape[0]
        else:
            raise ValueError(f"unsupported observation shape {obs_shape}")
        out = n_atoms if mode == "categorical" else 1
        actor = netcore.mlp([feat, hidden_dim, hidden_dim, action_dim], "tanh")
        critic = netcore.mlp([feat + action_dim, hidden_dim, hidden_dim, out])
        return cls(obs_shape, action_dim, actor, critic, encoder, feat, mode)

    @property
    def pixels(self) -> bool:
        return self.encoder is not None


def encode(nets: Networks, encoder: ParamSet, obs, dtype):
    """Features for a batch; returns (h, tape), tape is None for state inputs."""
    if nets.encoder is None:
        return np.asarray(obs, dtype=dtype), None
    return netcore.forward(nets.encoder, encoder, obs)


def critic_forward(nets: Networks, critic: ParamSet, h, action):
    x = np.concatenate([h, np.asarray(action, dtype=h.dtype)], axis=1)
    return netcore.forward(nets.critic, critic, x)


def critic_value(nets: Networks, support: Support | None, out):
    """Expected value per row from critic outputs, plus the probabilities.

    Scalar critics return ``(values, None)``.
    """
    if nets.mode == "categorical":
        probs = softmax(out)
        return probs @ support.atoms, probs
    return np.asarray(out[:, 0], dtype=np.float64), None


class Policy:
    """Deterministic actor plus the exploration rules used when collecting."""

    def __init__(self, nets: Networks, actor: ParamSet, encoder: ParamSet,
                 schedule: NoiseSchedule, warmup_steps: int = 0):
        self.nets = nets
        self.actor = actor
        self.encoder = encoder
        self.schedule = schedule
        self.warmup_steps = warmup_steps

    def mean_action(self, obs):
        return self.mean_actions(np.asarray(obs)[None])[0]

    def mean_actions(self, obs_batch):
        h, _ = encode(self.nets, self.encoder, obs_batch, self.actor.dtype)
        a, _ = netcore.forward(self.nets.actor, self.actor, h)
        return a.astype(np.float64)

    def act(self, obs, t: int, explore: bool, rng=None):
        """Action in [-1, 1]^d; uniform during warmup when exploring."""
        if explore and t < self.warmup_steps:
            return rng.uniform(-1.0, 1.0, size=self.nets.action_dim)
        a = self.mean_action(obs)
        if explore:
            noise = sample_noise(rng, sigma_at(self.schedule, t), self.schedule.clip, a.shape)
            a = np.clip(a + noise, -1.0, 1.0)
        return a


# -- losses as pure functions (used by the agent and the gradient checks) -----

def critic_loss_and_grads(nets: Networks, critic1, critic2, encoder, obs, action, target):
    """Mean loss of each critic and gradients for both critics and the encoder.

    ``target`` is (B, n_atoms) probabilities in categorical mode and (B,)
    values in scalar mode. The encoder gradient is the sum over both critics.
    Returns ``(loss1, loss2, grads1, grads2, grads_encoder)``.
    """
    h, enc_tape = encode(nets, encoder, obs, critic1.dtype)
    batch = h.shape[0]
    feat = nets.feature_dim
    losses, grads, dh = [], [], np.zeros_like(h)
    for params in (critic1, critic2):
        out, tape = critic_forward(nets, params, h, action)
        if nets.mode == "categorical":
            per_sample, dlogits = cross_entropy_loss(target, out)
            loss = float(per_sample.mean())
            dout = dlogits / batch
        else:
            resid = out[:, 0].astype(np.float64) - target
            loss = float(np.mean(resid ** 2))
            dout = (2.0 * resid / batch)[:, None]
        g, dx = netcore.backward(tape, params, dout)
        losses.append(loss)
        grads.append(g)
        dh += dx[:, :feat]
    if enc_tape is not None:
        genc, _ = netcore.backward(enc_tape, encoder, dh)
    else:
        genc = {}
    return losses[0], losses[1], grads[0], grads[1], genc


def actor_loss_and_grads(nets: Networks, support, actor, critic1, critic2, h, noise):
    """Loss -mean(min_k E[Z_k(h, pi(h) + noise)]) and its actor gradient.

    Critic and encoder parameters are read only; gradients reach the actor
    through the action input of the selected critic.
    """
    batch = h.shape[0]
    feat = nets.feature_dim
    a, actor_tape = netcore.forward(nets.actor, actor, h)
    a = a + np.asarray(noise, dtype=a.dtype)
    probs, tapes, values = [], [], []
    for params in (critic1, critic2):
        out, tape = critic_forward(nets, params, h, a)
        value, p = critic_value(nets, support, out)
        probs.append(p)
        tapes.append(tape)
        values.append(value)
    pick1 = values[0] <= values[1]
    loss = -float(np.mean(np.where(pick1, values[0], values[1])))
    da = np.zeros_like(a)
    for k, (params, p, tape) in enumerate(zip((critic1, critic2), probs, tapes)):
        mask = pick1 if k == 0 else ~pick1
        if nets.mode == "categorical":
            dvalue = p * (support.atoms - values[k][:, None])
        else:
            dvalue = np.ones((batch, 1))
        dout = -(mask[:, None] * dvalue) / batch
        _, dx = netcore.backward(tape, params, dout, param_grads=False)
        da += dx[:, feat:]
    grads, _ = netcore.backward(actor_tape, actor, da)
    return loss, grads


# -- agent --------------------------------------------------------------------

@dataclass(frozen=True)
class AgentState:
    actor: ParamSet
    critic1: ParamSet
    critic2: ParamSet
    target1: ParamSet
    target2: ParamSet
    encoder: ParamSet
    actor_opt: netcore.AdamState
    critic1_opt: netcore.AdamState
    critic2_opt: netcore.AdamState
    encoder_opt: netcore.AdamState | None
    step: int = 0
    updates: int = 0


class NonFiniteLoss(FloatingPointError):
    pass


class Agent:
    def __init__(self, nets: Networks, support: Support | None, schedule: NoiseSchedule,
                 *, gamma=0.99, n_step=3, batch_size=256, lr=1e-4, tau=0.01,
                 warmup_steps=2000, seed=0, dtype=np.float32, pad=augment.DEFAULT_PAD):
        if nets.mode == "categorical" and support is None:
            raise ValueError("categorical mode needs a support")
        self.nets = nets
        self.support = support
        self.schedule = schedule
        self.gamma = gamma
        self.n_step = n_step
        self.batch_size = batch_size
        self.tau = tau
        self.warmup_steps = warmup_steps
        self.pad = pad
        self.dtype = np.dtype(dtype)
        self.skipped_updates = 0
        seeds = np.random.SeedSequence(seed).generate_state(4)
        actor = nets.actor.init(int(seeds[0]), dtype, final="uniform")
        critic1 = nets.critic.init(int(seeds[1]), dtype)
        critic2 = nets.critic.init(int(seeds[2]), dtype)
        encoder = nets.encoder.init(int(seeds[3]), dtype) if nets.encoder else EMPTY
        self.state = AgentState(
            actor=actor, critic1=critic1, critic2=critic2, target1=critic1, target2=critic2,
            encoder=encoder,
            actor_opt=netcore.adam_init(actor, lr),
            critic1_opt=netcore.adam_init(critic1, lr),
            critic2_opt=netcore.adam_init(critic2, lr),
            encoder_opt=netcore.adam_init(encoder, lr) if nets.encoder else None,
        )

    @property
    def mode(self) -> str:
        return self.nets.mode

    def policy(self) -> Policy:
        return Policy(self.nets, self.state.actor, self.state.encoder, self.schedule,
                      self.warmup_steps)

    def act(self, obs, t, explore, rng=None):
        return self.policy().act(obs, t, explore, rng)

    def _augment(self, obs, rng):
        if self.nets.pixels:
            return augment.augment_batch(obs, rng, self.pad)
        return obs

    def critic_targets(self, next_obs, g, discount, bootstrap, rng, sigma):
        """Per-sample targets from the pessimistic target critic.

        ``next_obs`` is already augmented. Returns (B, n_atoms) probabilities
        in categorical mode, (B,) values in scalar mode. No gradients.
        """
        s = self.state
        h, _ = encode(self.nets, s.encoder, next_obs, self.dtype)
        a, _ = netcore.forward(self.nets.actor, s.actor, h)
        a = a.astype(np.float64)
        if sigma > 0:
            a = a + sample_noise(rng, sigma, self.schedule.clip, a.shape)
        a = np.clip(a, -1.0, 1.0)
        out1, _ = critic_forward(self.nets, s.target1, h, a)
        out2, _ = critic_forward(self.nets, s.target2, h, a)
        v1, p1 = critic_value(self.nets, self.support, out1)
        v2, p2 = critic_value(self.nets, self.support, out2)
        pick1 = v1 <= v2
        if self.mode == "categorical":
            probs = np.where(pick1[:, None], p1, p2)
            return bellman_project(self.support, probs, g, discount, bootstrap)
        return g + discount * bootstrap * np.minimum(v1, v2)

    def update_critic(self, obs, action, target):
        """One Adam step on both critics and the encoder, then Polyak targets."""
        s = self.state
        l1, l2, g1, g2, genc = critic_loss_and_grads(
            self.nets, s.critic1, s.critic2, s.encoder, obs, action, target)
        if not (np.isfinite(l1) and np.isfinite(l2)):
            raise NonFiniteLoss(f"critic loss is not finite ({l1}, {l2})")
        c1, o1 = netcore.adam_step(s.critic1, g1, s.critic1_opt)
        c2, o2 = netcore.adam_step(s.critic2, g2, s.critic2_opt)
        enc, oenc = s.encoder, s.encoder_opt
        if self.nets.encoder is not None:
            enc, oenc = netcore.adam_step(s.encoder, genc, s.encoder_opt)
        self.state = replace(
            s, critic1=c1, critic2=c2, encoder=enc, critic1_opt=o1, critic2_opt=o2, encoder_opt=oenc,
            target1=netcore.soft_update(s.target1, c1, self.tau),
            target2=netcore.soft_update(s.target2, c2, self.tau),
        )
        return l1, l2

    def update_actor(self, h, noise):
        """One Adam step on the actor only; ``h`` are detached features."""
        s = self.state
        loss, grads = actor_loss_and_grads(self.nets, self.support, s.actor, s.critic1, s.critic2,
                                           h, noise)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"actor loss is not finite ({loss})")
        actor, opt = netcore.adam_step(s.actor, grads, s.actor_opt)
        self.state = replace(s, actor=actor, actor_opt=opt)
        return loss

    def update(self, replay, t: int, rng):
        """Sample a batch and run one critic then one actor update.

        Random draws happen in a fixed order: batch indices, augmentation of
        obs then next_obs, target-action noise, actor-action noise.
        Returns a dict of losses, or None when the step was skipped.
        """
        batch = replay.sample_nstep(self.batch_size, self.n_step, self.gamma, rng)
        sigma = sigma_at(self.schedule, t)
        obs = self._augment(batch.obs, rng)
        next_obs = self._augment(batch.next_obs, rng)
        target = self.critic_targets(next_obs, batch.g, batch.discount,
                                     batch.bootstrap.astype(np.float64), rng, sigma)
        h, _ = encode(self.nets, self.state.encoder, obs, self.dtype)
        noise = sample_noise(rng, sigma, self.schedule.clip, (len(batch), self.nets.action_dim))
        try:
            l1, l2 = self.update_critic(obs, batch.action, target)
            actor_loss = self.update_actor(h, noise)
        except NonFiniteLoss as exc:
            self.skipped_updates += 1
            log.warning("update at step %d skipped: %s", t, exc)
            return None
        self.state = replace(self.state, step=t, updates=self.state.updates + 1)
        return {"critic_loss_1": l1, "critic_loss_2": l2, "actor_loss": actor_loss}

    # -- persistence ----------------------------------------------------------

    def to_tensors(self) -> dict:
        s = self.state
        out = {}
        for group in ("actor", "critic1", "critic2", "target1", "target2", "encoder"):
            for name, arr in getattr(s, group).items():
                out[f"{group}/{name}"] = arr
        return out

    def load_tensors(self, tensors: dict):
        groups = {}
        for key, arr in tensors.items():
            group, _, name = key.partition("/")
            groups.setdefault(group, {})[name] = arr
        s = self.state
        changes = {}
        for group in ("actor", "critic1", "critic2", "target1", "target2", "encoder"):
            current = getattr(s, group)
            loaded = ParamSet(groups.get(group, {}))
            if loaded.shapes() != current.shapes():
                raise ValueError(f"checkpoint {group} shapes {loaded.shapes()} do not match "
                                 f"network {current.shapes()}")
            changes[group] = loaded.astype(self.dtype)
        self.state = replace(s, **changes)

    def policy_tensors(self) -> dict:
        """What an acting worker needs: actor and encoder weights."""
        out = {f"actor/{k}": v for k, v in self.state.actor.items()}
        out.update({f"encoder/{k}": v for k, v in self.state.encoder.items()})
        return out


def policy_from_tensors(nets: Networks, tensors: dict, schedule, warmup_steps=0) -> Policy:
    actor = ParamSet({k.split("/", 1)[1]: v for k, v in tensors.items() if k.startswith("actor/")})
    encoder = ParamSet({k.split("/", 1)[1]: v for k, v in tensors.items() if k.startswith("encoder/")})
    return Policy(nets, actor, encoder, schedule, warmup_steps)
