"""Projected ADAM ascent with global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class AdamHyper:
    # beta1, beta2 and eps are the usual defaults; only lr and the clipping
    # norm come from reported settings
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float = 10.0
    clip: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.eps < 0 or not self.max_grad_norm > 0:
            raise ValueError("eps must be >= 0 and max_grad_norm > 0")


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    hyper: AdamHyper = field(default_factory=AdamHyper)

    @classmethod
    def zeros(cls, n: int, hyper: AdamHyper | None = None) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, hyper or AdamHyper())


def clip_gradient(g, max_norm: float) -> np.ndarray:
    """Rescale ``g`` onto the ball of radius ``max_norm`` if it lies outside."""
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    g = np.asarray(g, dtype=float)
    norm = np.linalg.norm(g)
    if norm > max_norm:
        return g * (max_norm / norm)
    return g


def adam_moments(state: AdamState, g):
    """Updated raw and bias-corrected moments for gradient ``g``."""
    h = state.hyper
    t = state.t + 1
    m = h.beta1 * state.m + (1 - h.beta1) * g
    v = h.beta2 * state.v + (1 - h.beta2) * g * g
    m_hat = m / (1 - h.beta1**t)
    v_hat = v / (1 - h.beta2**t)
    return m, v, m_hat, v_hat, t


def adam_step(state: AdamState, g, params, lr: float | None = None):
    """One ADAM *ascent* step; returns ``(new_params, new_state)``.

    ``lr`` overrides ``state.hyper.lr`` for this step.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != state.m.shape:
        raise ValueError(f"gradient shape {g.shape} does not match state {state.m.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient must be finite")
    m, v, m_hat, v_hat, t = adam_moments(state, g)
    step = state.hyper.lr if lr is None else lr
    new_params = np.asarray(params, dtype=float) + step * m_hat / (np.sqrt(v_hat) + state.hyper.eps)
    return new_params, replace(state, m=m, v=v, t=t)


def project(params, lower, upper) -> np.ndarray:
    """Clamp ``params`` elementwise onto ``[lower, upper]``."""
    lower = np.broadcast_to(np.asarray(lower, dtype=float), np.shape(params))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), np.shape(params))
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    return np.clip(params, lower, upper)
