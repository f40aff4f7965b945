"""SGD and Adam parameter updates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..errors import ParameterError, ShapeError


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ParameterError("learning rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ParameterError("batch_size must be >= 1 and epochs >= 0")


def _check(w, g):
    if np.shape(w) != np.shape(g):
        raise ShapeError(f"parameter {np.shape(w)} and gradient {np.shape(g)} differ")


def sgd_step(w: np.ndarray, g: np.ndarray, lr: float) -> np.ndarray:
    """w - lr * g"""
    _check(w, g)
    return w - lr * g


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(w: np.ndarray, g: np.ndarray, state: Optional[AdamState], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_w, new_state)``."""
    _check(w, g)
    if state is None:
        state = AdamState(np.zeros_like(w, dtype=float), np.zeros_like(w, dtype=float))
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * g
    v = beta2 * state.v + (1 - beta2) * g * g
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return w - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


class Optimizer:
    """Stateful optimizer over a dict of named parameters, updated in place."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self._state: Dict[str, AdamState] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        c = self.config
        for key, w in params.items():
            g = grads[key]
            if c.optimizer == "sgd":
                w[...] = sgd_step(w, g, c.learning_rate)
            else:
                new, self._state[key] = adam_step(w, g, self._state.get(key), c.learning_rate,
                                                  c.beta1, c.beta2, c.eps_adam)
                w[...] = new
