"""Single-step experience storage with n-step composition at sample time.

Transitions from several writers may interleave in the ring, so each slot
links to the next slot of the same episode. A window starting at slot ``i``
follows those links for up to ``n`` steps, stopping early at a terminal
(no bootstrap) or a time-limit truncation (bootstrap from that slot). Windows
whose later transitions have not arrived yet are never sampled.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import kernels


class ReplayStarved(LookupError):
    """No complete n-step window is available yet."""


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    terminal: bool = False
    truncated: bool = False
    episode: int = 0
    step: int = 0
    writer: int = 0


@dataclass(frozen=True)
class NStepBatch:
    obs: np.ndarray
    action: np.ndarray
    g: np.ndarray  # sum_{i<m} gamma^i r_{t+i}
    m: np.ndarray  # effective horizon, 1..n
    discount: np.ndarray  # gamma^m
    next_obs: np.ndarray  # x_{t+m}
    bootstrap: np.ndarray  # False iff a true terminal ended the window
    index: np.ndarray
    episode: np.ndarray
    step: np.ndarray
    writer: np.ndarray

    def __len__(self):
        return len(self.g)


class ReplayBuffer:
    """FIFO ring of transitions, safe for concurrent writers and one sampler."""

    def __init__(self, capacity: int, obs_dtype=np.float32):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dtype = np.dtype(obs_dtype)
        self._lock = threading.Lock()
        self._allocated = False
        self.clear()

    def _allocate(self, t: Transition):
        cap = self.capacity
        obs_shape = np.shape(t.obs)
        act_dim = np.size(t.action)
        self._obs = np.zeros((cap,) + obs_shape, dtype=self.obs_dtype)
        self._next_obs = np.zeros((cap,) + obs_shape, dtype=self.obs_dtype)
        self._action = np.zeros((cap, act_dim), dtype=np.float32)
        self._reward = np.zeros(cap)
        self._terminal = np.zeros(cap, dtype=np.uint8)
        self._truncated = np.zeros(cap, dtype=np.uint8)
        self._episode = np.zeros(cap, dtype=np.int64)
        self._step = np.zeros(cap, dtype=np.int64)
        self._writer = np.zeros(cap, dtype=np.int64)
        self._uid = np.full(cap, -1, dtype=np.int64)
        self._next = np.full(cap, -1, dtype=np.int64)
        self._allocated = True

    def clear(self):
        with self._lock:
            self._size = 0
            self._cursor = 0
            self._pushes = 0
            self._tails = {}
            if self._allocated:
                self._uid.fill(-1)
                self._next.fill(-1)

    def __len__(self):
        return self._size

    @property
    def total_pushed(self) -> int:
        return self._pushes

    def push(self, t: Transition):
        with self._lock:
            if not self._allocated:
                self._allocate(t)
            slot = self._cursor
            self._obs[slot] = t.obs
            self._next_obs[slot] = t.next_obs
            self._action[slot] = np.ravel(t.action)
            self._reward[slot] = t.reward
            self._terminal[slot] = t.terminal
            self._truncated[slot] = t.truncated
            self._episode[slot] = t.episode
            self._step[slot] = t.step
            self._writer[slot] = t.writer
            self._uid[slot] = self._pushes
            self._next[slot] = -1

            key = (t.writer, t.episode)
            prev = self._tails.get(key)
            # the predecessor may already have been evicted on very long episodes
            if prev is not None and self._uid[prev[0]] == prev[1]:
                self._next[prev[0]] = slot
            if t.terminal or t.truncated:
                self._tails.pop(key, None)
            else:
                self._tails[key] = (slot, self._pushes)

            self._pushes += 1
            self._cursor = (slot + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def sample_nstep(self, batch: int, n: int, gamma: float, rng, max_rounds: int = 1000) -> NStepBatch:
        """Uniformly sample ``batch`` complete windows of horizon ``n``."""
        if n < 1:
            raise ValueError("n must be >= 1")
        with self._lock:
            if self._size == 0:
                raise ReplayStarved("cannot sample from an empty replay buffer")
            starts, g, m, last, boot = [], [], [], [], []
            need = batch
            for _ in range(max_rounds):
                cand = rng.integers(0, self._size, size=need)
                cg, cm, clast, cboot = kernels.nstep_walk(
                    self._next, self._reward, self._terminal, self._truncated, cand, n, gamma)
                ok = (cm == n) | (self._terminal[clast] == 1) | (self._truncated[clast] == 1)
                starts.append(cand[ok])
                g.append(cg[ok])
                m.append(cm[ok])
                last.append(clast[ok])
                boot.append(cboot[ok])
                need -= int(ok.sum())
                if need == 0:
                    break
            else:
                raise ReplayStarved("replay holds no complete n-step window")
            idx = np.concatenate(starts)
            last = np.concatenate(last)
            m = np.concatenate(m)
            return NStepBatch(
                obs=self._obs[idx],
                action=self._action[idx],
                g=np.concatenate(g),
                m=m,
                discount=gamma ** m.astype(np.float64),
                next_obs=self._next_obs[last],
                bootstrap=np.concatenate(boot),
                index=idx,
                episode=self._episode[idx],
                step=self._step[idx],
                writer=self._writer[idx],
            )

    def snapshot_records(self):
        """Resident transitions in push order as (writer, episode, step, reward) tuples."""
        with self._lock:
            order = np.argsort(self._uid[:self._size], kind="stable") if self._size else []
            return [(int(self._writer[i]), int(self._episode[i]), int(self._step[i]),
                     float(self._reward[i])) for i in order]
