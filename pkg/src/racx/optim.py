"""Bias-corrected adaptive-moment parameter updates."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, TrainingError


class OptimizerState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.step = 0
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.first_moment: dict[str, np.ndarray] = {}
        self.second_moment: dict[str, np.ndarray] = {}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimizerState, weight_decay: float = 0.0) -> dict[str, np.ndarray]:
    """One update over a named parameter dict; returns the new parameters.

    Weight decay is decoupled (applied directly to the parameter, not mixed
    into the moment estimates). Parameters without a gradient are carried
    through unchanged apart from decay.
    """
    state.step += 1
    t = state.step
    lr, b1, b2, eps = state.learning_rate, state.beta1, state.beta2, state.epsilon
    out: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape} for '{name}'")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter '{name}'")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g ** 2
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay:
            new_p = new_p - lr * weight_decay * p
        out[name] = new_p
    return out
