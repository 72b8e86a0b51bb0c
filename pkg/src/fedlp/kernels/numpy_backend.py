"""Pure-numpy reference implementations of the hot kernels.

Semantics match the numba backend; floating-point results may differ in the
last bits because BLAS and explicit loops accumulate in different orders.
"""

from __future__ import annotations

import numpy as np


def affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def relu_forward(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def softmax_forward(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def affine_backward(x: np.ndarray, w: np.ndarray, dz: np.ndarray):
    dw = x.T @ dz
    db = dz.sum(axis=0)
    dx = dz @ w.T
    return dx, dw, db


def relu_backward(z: np.ndarray, da: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, da, 0.0)


def softmax_xent_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    n = probs.shape[0]
    dz = probs.copy()
    dz[np.arange(n), labels] -= 1.0
    dz /= n
    return dz


def xent_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    n = probs.shape[0]
    picked = probs[np.arange(n), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def sgd_update(param: np.ndarray, grad: np.ndarray, lr: float) -> None:
    param -= lr * grad


def prop1_chunk(uniforms: np.ndarray, grads: np.ndarray, p: float):
    """Accumulate masked-mean gradients over one chunk of trials.

    uniforms: (trials, k) uniform draws; a mask bit is uniforms < p.
    Returns (sum of per-trial masked means, sum of their squares); trials
    where every bit is zero contribute 0, matching the empty-contributor rule.
    """
    z = uniforms < p
    cnt = z.sum(axis=1)
    num = z.astype(np.float64) @ grads
    ghat = np.where(cnt > 0, num / np.maximum(cnt, 1), 0.0)
    return float(ghat.sum()), float((ghat * ghat).sum())
