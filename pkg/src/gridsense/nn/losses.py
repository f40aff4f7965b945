"""Loss functions. Each returns ``(value, gradient w.r.t. the prediction)``."""

from __future__ import annotations

from typing import Tuple

import numpy as np

from ..errors import DomainError, ShapeError

LOG_CLAMP = 1e-12
PROB_TOL = 1e-6


def cross_entropy(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean over the batch of ``-sum(t * ln(max(p, 1e-12)))``."""
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    if np.any(pred < 0) or np.any(np.abs(pred.sum(axis=-1) - 1.0) > PROB_TOL):
        raise DomainError("cross_entropy needs probability vectors summing to 1")
    b = pred.shape[0]
    clamped = np.maximum(pred, LOG_CLAMP)
    value = float(-np.sum(target * np.log(clamped)) / b)
    grad = np.where(pred >= LOG_CLAMP, -target / clamped, 0.0) / b
    return value, grad


def mse(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean squared error over every element (batch and time)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def kl_gaussian(mu: np.ndarray, logvar: np.ndarray) -> Tuple[float, Tuple[np.ndarray, np.ndarray]]:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over latent dims, averaged over the batch.

    Returns ``(value, (d/dmu, d/dlogvar))``.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    logvar = np.atleast_2d(np.asarray(logvar, dtype=float))
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    b = mu.shape[0]
    var = np.exp(logvar)
    value = float(0.5 * np.sum(mu * mu + var - logvar - 1.0) / b)
    return value, (mu / b, 0.5 * (var - 1.0) / b)


LOSSES = {"cross_entropy": cross_entropy, "mse": mse}
