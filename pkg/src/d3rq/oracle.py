"""Exact references on finite MDPs.

Everything here is plain enumeration or linear algebra over a
:class:`~d3rq.envsim.TabularMDP`, written independently of the learning code
so it can be used to check it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .envsim import TabularMDP
from .valuedist import Support, project, shift_scale_targets

log = logging.getLogger(__name__)

DEFAULT_CAP = 5_000_000


class EnumerationTooLarge(RuntimeError):
    """Trajectory enumeration would exceed the configured size cap."""


@dataclass(frozen=True)
class TabularPolicy:
    """Action distribution per state, shape (S, A)."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ValueError("policy table must be (S, A)")
        if np.any(probs < 0) or np.max(np.abs(probs.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("policy rows must be probability distributions")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=np.int64)
        probs = np.zeros((len(actions), n_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    def actions(self) -> np.ndarray:
        """Chosen action per state; only defined for deterministic policies."""
        if not np.all(self.probs.max(axis=1) == 1.0):
            raise ValueError("policy is stochastic")
        return self.probs.argmax(axis=1)


def _as_policy(policy, mdp: TabularMDP) -> TabularPolicy:
    if isinstance(policy, TabularPolicy):
        pol = policy
    else:
        arr = np.asarray(policy)
        if arr.ndim == 1:
            pol = TabularPolicy.deterministic(arr, mdp.n_actions)
        else:
            pol = TabularPolicy(arr)
    if pol.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape does not match the MDP")
    return pol


def _sa_transition(mdp: TabularMDP, pol: TabularPolicy) -> np.ndarray:
    """M[(s, a), (s', a')] = P(s' | s, a) * pi(a' | s')."""
    S, A = mdp.n_states, mdp.n_actions
    return (mdp.P[:, :, :, None] * pol.probs[None, None]).reshape(S * A, S * A)


def bellman_q(mdp: TabularMDP, policy, Q, gamma=None) -> np.ndarray:
    """One application of the policy-evaluation operator to a Q table."""
    gamma = mdp.gamma if gamma is None else gamma
    pol = _as_policy(policy, mdp)
    v_next = (pol.probs * Q).sum(axis=1)
    return mdp.R + gamma * mdp.P @ v_next


def exact_q(mdp: TabularMDP, policy, gamma=None) -> np.ndarray:
    """Q of ``policy`` from a direct linear solve, shape (S, A)."""
    gamma = mdp.gamma if gamma is None else gamma
    assert 0.0 <= gamma < 1.0, "policy evaluation needs gamma < 1"
    pol = _as_policy(policy, mdp)
    M = _sa_transition(mdp, pol)
    q = np.linalg.solve(np.eye(M.shape[0]) - gamma * M, mdp.R.ravel())
    return q.reshape(mdp.R.shape)


def bellman_residual(mdp: TabularMDP, policy, Q, gamma=None) -> float:
    return float(np.max(np.abs(bellman_q(mdp, policy, Q, gamma) - Q)))


def greedy_policy(Q) -> TabularPolicy:
    Q = np.asarray(Q)
    return TabularPolicy.deterministic(Q.argmax(axis=1), Q.shape[1])


@dataclass(frozen=True)
class ReturnDistTable:
    """Categorical return distribution per (state, action): probs (S, A, N)."""

    support: Support
    probs: np.ndarray
    iterations: int = 0
    converged: bool = True

    def mean(self) -> np.ndarray:
        return self.probs @ self.support.atoms

    def __getitem__(self, sa):
        return self.probs[sa]


def dist_bellman(mdp: TabularMDP, policy, probs, support: Support, gamma=None) -> np.ndarray:
    """Projected one-step distributional operator applied to (S, A, N) probs."""
    gamma = mdp.gamma if gamma is None else gamma
    pol = _as_policy(policy, mdp)
    S, A = mdp.n_states, mdp.n_actions
    mixed = _sa_transition(mdp, pol) @ np.asarray(probs).reshape(S * A, -1)
    values = shift_scale_targets(support, mdp.R.ravel(), np.full(S * A, gamma), np.ones(S * A))
    return project(support, values, mixed).reshape(S, A, -1)


def total_variation(p, q) -> float:
    """Largest total-variation distance over all leading indices."""
    return float(np.max(0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)))


def dist_eval(mdp: TabularMDP, policy, support: Support, iters: int = 10_000,
              tol: float = 1e-9, gamma=None) -> ReturnDistTable:
    """Fixed point of the projected distributional operator by iteration.

    Stops when the sup over (s, a) of the total-variation change drops below
    ``tol``. Running out of iterations is logged and flagged on the result.
    """
    S, A = mdp.n_states, mdp.n_actions
    probs = np.zeros((S, A, support.n_atoms))
    probs[..., 0] = 1.0
    for it in range(1, iters + 1):
        new = dist_bellman(mdp, policy, probs, support, gamma)
        change = total_variation(new, probs)
        probs = new
        if change < tol:
            return ReturnDistTable(support, probs, it, True)
    log.warning("dist_eval did not converge in %d iterations (last change %.3e)", iters, change)
    return ReturnDistTable(support, probs, iters, False)


def _expand(mdp: TabularMDP, pol: TabularPolicy, state, action, prob, cap):
    """All one-step successors (s', a') of each frontier entry with positive probability."""
    S, A = mdp.n_states, mdp.n_actions
    branch = (mdp.P[state, action][:, :, None] * pol.probs[None]).reshape(len(state), S * A)
    parent, succ = np.nonzero(branch > 0)
    if len(parent) > cap:
        raise EnumerationTooLarge(f"{len(parent)} trajectories exceed the cap of {cap}")
    return parent, succ // A, succ % A, prob[parent] * branch[parent, succ]


def nstep_dist_operator(mdp: TabularMDP, policy, Z, n: int, support: Support,
                        gamma=None, cap: int = DEFAULT_CAP) -> ReturnDistTable:
    """Exact n-step projected operator by enumerating length-n trajectories.

    For each start (s, a), every trajectory of n rewards ending in (s_n, a_n)
    contributes Phi(G + gamma^n Z(s_n, a_n)) weighted by its probability.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gamma = mdp.gamma if gamma is None else gamma
    pol = _as_policy(policy, mdp)
    Z = Z.probs if isinstance(Z, ReturnDistTable) else np.asarray(Z, dtype=np.float64)
    S, A = mdp.n_states, mdp.n_actions
    out = np.zeros((S, A, support.n_atoms))
    for s0 in range(S):
        for a0 in range(A):
            state = np.array([s0])
            action = np.array([a0])
            prob = np.ones(1)
            ret = np.zeros(1)
            for i in range(n):
                ret = ret + gamma ** i * mdp.R[state, action]
                parent, state, action, prob = _expand(mdp, pol, state, action, prob, cap)
                ret = ret[parent]
            values = shift_scale_targets(support, ret, np.full(len(ret), gamma ** n), np.ones(len(ret)))
            out[s0, a0] = prob @ project(support, values, Z[state, action])
    return ReturnDistTable(support, out)


@dataclass(frozen=True)
class EmpiricalReturns:
    """Finite-horizon return distribution of one (state, action): distinct values and masses."""

    values: np.ndarray
    probs: np.ndarray

    def mean(self) -> float:
        return float(self.values @ self.probs)


def brute_force_returns(mdp: TabularMDP, policy, horizon: int, gamma=None,
                        cap: int = DEFAULT_CAP, decimals: int = 12) -> dict:
    """Exact distribution of sum_{t<horizon} gamma^t r_t for every (s, a).

    Returns a dict keyed by (state, action). Returns equal after rounding to
    ``decimals`` places are merged.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    gamma = mdp.gamma if gamma is None else gamma
    pol = _as_policy(policy, mdp)
    out = {}
    for s0 in range(mdp.n_states):
        for a0 in range(mdp.n_actions):
            state = np.array([s0])
            action = np.array([a0])
            prob = np.ones(1)
            ret = np.zeros(1)
            for t in range(horizon):
                ret = ret + gamma ** t * mdp.R[state, action]
                if t + 1 < horizon:
                    parent, state, action, prob = _expand(mdp, pol, state, action, prob, cap)
                    ret = ret[parent]
            keys, inverse = np.unique(np.round(ret, decimals), return_inverse=True)
            masses = np.bincount(inverse.ravel(), weights=prob, minlength=len(keys))
            out[(s0, a0)] = EmpiricalReturns(keys, masses)
    return out


def truncation_bound(mdp: TabularMDP, horizon: int, gamma=None) -> float:
    """Worst-case gap between horizon-limited and infinite-horizon expected returns."""
    gamma = mdp.gamma if gamma is None else gamma
    return gamma ** horizon * float(np.max(np.abs(mdp.R))) / (1.0 - gamma)
