"""Loss functions returning ``(mean loss, gradient w.r.t. the prediction)``."""

from __future__ import annotations

import numpy as np


def cross_entropy(logits, labels):
    """Softmax cross-entropy averaged over rows; ``labels`` are class indices."""
    z = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(z)
    if n == 0:
        return 0.0, np.zeros_like(z)
    shifted = z - z.max(axis=1, keepdims=True)
    log_sm = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -log_sm[np.arange(n), labels].mean()
    grad = np.exp(log_sm)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def smooth_l1(pred, target, beta=1.0):
    """Quadratic ``0.5 e^2 / beta`` below ``beta``, ``|e| - 0.5 beta`` above; mean over entries."""
    e = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    if e.size == 0:
        return 0.0, np.zeros_like(e)
    a = np.abs(e)
    small = a < beta
    loss = np.where(small, 0.5 * e * e / beta, a - 0.5 * beta)
    grad = np.where(small, e / beta, np.sign(e))
    return float(loss.mean()), grad / e.size


def mse(pred, target):
    e = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    if e.size == 0:
        return 0.0, np.zeros_like(e)
    return float(np.mean(e * e)), 2.0 * e / e.size
