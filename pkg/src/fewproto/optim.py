"""Shared numerical core: softmax, cross-entropy, Adam, finite-difference checks.

Everything here runs in float64; the training loops in `head` and
`prototypes` rely on that for gradient checks at 1e-4 tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

LOG_FLOOR = 1e-12


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable softmax via max-subtraction; rows sum to 1."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def cross_entropy(pred: np.ndarray, true_class: int) -> float:
    """-log(pred[true_class]) with the log input floored at LOG_FLOOR."""
    pred = np.asarray(pred, dtype=np.float64)
    return float(-np.log(max(pred[true_class], LOG_FLOOR)))


@dataclass
class AdamState:
    """Adam moments and hyperparameters for one parameter array.

    step counts completed updates; m and v hold the first and second
    moment running averages (same shape as the parameter).
    """

    step: int
    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, shape, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(step=0, m=np.zeros(shape), v=np.zeros(shape),
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_update(state: AdamState, param: np.ndarray,
                grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam step; returns the new state and parameters.

    m <- b1*m + (1-b1)*g         m_hat = m / (1 - b1^t)
    v <- b2*v + (1-b2)*g^2       v_hat = v / (1 - b2^t)
    param <- param - lr * m_hat / (sqrt(v_hat) + eps)
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ValueError(
            f"shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"state {state.m.shape}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_param = param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, step=t, m=m, v=v), new_param


def grad_check(loss_fn, grad_fn, x: np.ndarray, h: float = 1e-5) -> float:
    """Compare an analytic gradient to central finite differences.

    Returns the worst per-coordinate relative error
    |analytic - fd| / max(|fd|, 1e-8). Raises if the loss goes non-finite
    at any probe point.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(grad_fn(x), dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError("grad_fn output shape does not match x")
    worst = 0.0
    for i in range(x.size):
        probe = x.copy()
        probe.flat[i] = x.flat[i] + h
        up = loss_fn(probe)
        probe.flat[i] = x.flat[i] - h
        down = loss_fn(probe)
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(f"non-finite loss near coordinate {i}")
        fd = (up - down) / (2.0 * h)
        rel = abs(analytic.flat[i] - fd) / max(abs(fd), 1e-8)
        worst = max(worst, rel)
    return worst
