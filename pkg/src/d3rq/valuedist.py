"""Categorical return distributions on a fixed atom grid.

All probability math here runs in float64. Functions accept either a single
distribution (1-D) or a batch (leading axes, atoms on the last axis).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

LOG_PROB_FLOOR = -30.0


@dataclass(frozen=True)
class Support:
    v_min: float
    v_max: float
    n_atoms: int
    atoms: np.ndarray = field(init=False, repr=False, compare=False)
    delta: float = field(init=False)

    def __post_init__(self):
        if not self.v_max > self.v_min:
            raise ValueError(f"v_max ({self.v_max}) must exceed v_min ({self.v_min})")
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 2:
            raise ValueError(f"n_atoms must be an integer >= 2, got {self.n_atoms}")
        delta = (self.v_max - self.v_min) / (self.n_atoms - 1)
        atoms = self.v_min + np.arange(self.n_atoms) * delta
        atoms.flags.writeable = False
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "atoms", atoms)


def make_support(v_min: float, v_max: float, n_atoms: int) -> Support:
    if int(n_atoms) != n_atoms:
        raise ValueError(f"n_atoms must be an integer, got {n_atoms}")
    return Support(float(v_min), float(v_max), int(n_atoms))


@dataclass(frozen=True)
class CategoricalDist:
    """Probability mass over the atoms of ``support``."""

    support: Support
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        if probs.shape != (self.support.n_atoms,):
            raise ValueError(f"expected {self.support.n_atoms} probabilities, got shape {probs.shape}")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    def mean(self) -> float:
        return expectation(self.support, self.probs)


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def normalize(logits, support: Support | None = None):
    """Softmax over atoms.

    Returns a :class:`CategoricalDist` when a support is given and the
    logits are 1-D, otherwise the raw probability array.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    probs = softmax(logits)
    if support is not None and probs.ndim == 1:
        return CategoricalDist(support, probs)
    return probs


def expectation(support: Support, probs) -> np.ndarray | float:
    if isinstance(probs, CategoricalDist):
        probs = probs.probs
    out = np.asarray(probs, dtype=np.float64) @ support.atoms
    return float(out) if np.ndim(out) == 0 else out


def shift_scale_targets(support: Support, g, gamma_n, bootstrap) -> np.ndarray:
    """Bellman-map every atom: clamp(g + bootstrap * gamma_n * y_j).

    Scalars give a 1-D result; (B,) inputs give (B, n_atoms).
    """
    g = np.asarray(g, dtype=np.float64)
    scale = np.asarray(gamma_n, dtype=np.float64) * np.asarray(bootstrap, dtype=np.float64)
    values = g[..., None] + scale[..., None] * support.atoms
    return np.clip(values, support.v_min, support.v_max)


def project(support: Support, target_values, target_probs) -> np.ndarray:
    """Project weighted point masses onto the support by linear splitting.

    Mass at value t goes to the bracketing atoms l <= t <= u with weights
    (u - t)/delta and (t - l)/delta. Accepts 1-D or (B, K) inputs.
    """
    values = np.asarray(target_values, dtype=np.float64)
    probs = np.asarray(target_probs, dtype=np.float64)
    if values.shape != probs.shape:
        raise ValueError(f"shape mismatch: values {values.shape} vs probs {probs.shape}")
    # the top atom may sit one rounding step above v_max; it is still in bounds
    if np.any(values < support.v_min) or np.any(values > max(support.v_max, support.atoms[-1])):
        raise ValueError("target value outside support bounds")
    single = values.ndim == 1
    values2 = values.reshape(-1, values.shape[-1])
    probs2 = probs.reshape(-1, probs.shape[-1])
    out = kernels.project(values2, probs2, support.v_min, support.delta, support.n_atoms)
    if single:
        return out[0]
    return out.reshape(values.shape[:-1] + (support.n_atoms,))


def bellman_project(support: Support, probs, g, gamma_n, bootstrap) -> np.ndarray:
    """Shift-scale the atoms by an n-step return, then project ``probs`` back."""
    values = shift_scale_targets(support, g, gamma_n, bootstrap)
    probs = np.broadcast_to(np.asarray(probs, dtype=np.float64), values.shape)
    return project(support, values, probs)


def cross_entropy_loss(target, logits):
    """Softmax cross-entropy and its gradient with respect to the logits.

    Returns ``(loss, grad)``. For batched input, ``loss`` has the batch
    shape (one value per row) and ``grad`` matches ``logits``.
    """
    if isinstance(target, CategoricalDist):
        target = target.probs
    target = np.asarray(target, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    logp = log_softmax(logits)
    loss = -(target * np.maximum(logp, LOG_PROB_FLOOR)).sum(axis=-1)
    grad = np.exp(logp) - target
    if loss.ndim == 0:
        loss = float(loss)
    return loss, grad
