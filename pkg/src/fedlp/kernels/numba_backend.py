"""Numba-jitted kernels for the training and verifier inner loops.

Single-threaded on purpose: results must be bit-reproducible for a fixed
seed, so no parallel=True and no fastmath reassociation.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def affine_forward(x, w, b):
    n, d = x.shape
    m = w.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = b[j]
        for k in range(d):
            xv = x[i, k]
            for j in range(m):
                out[i, j] += xv * w[k, j]
    return out


@njit(cache=True)
def relu_forward(z):
    n, m = z.shape
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            v = z[i, j]
            out[i, j] = v if v > 0.0 else 0.0
    return out


@njit(cache=True)
def softmax_forward(z):
    n, m = z.shape
    out = np.empty((n, m))
    for i in range(n):
        mx = z[i, 0]
        for j in range(1, m):
            if z[i, j] > mx:
                mx = z[i, j]
        s = 0.0
        for j in range(m):
            e = np.exp(z[i, j] - mx)
            out[i, j] = e
            s += e
        for j in range(m):
            out[i, j] /= s
    return out


@njit(cache=True)
def affine_backward(x, w, dz):
    n, d = x.shape
    m = w.shape[1]
    dw = np.zeros((d, m))
    db = np.zeros(m)
    dx = np.empty((n, d))
    for i in range(n):
        for j in range(m):
            db[j] += dz[i, j]
    for i in range(n):
        for k in range(d):
            xv = x[i, k]
            for j in range(m):
                dw[k, j] += xv * dz[i, j]
    for i in range(n):
        for k in range(d):
            acc = 0.0
            for j in range(m):
                acc += dz[i, j] * w[k, j]
            dx[i, k] = acc
    return dx, dw, db


@njit(cache=True)
def relu_backward(z, da):
    n, m = z.shape
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = da[i, j] if z[i, j] > 0.0 else 0.0
    return out


@njit(cache=True)
def softmax_xent_grad(probs, labels):
    n, m = probs.shape
    dz = np.empty((n, m))
    inv = 1.0 / n
    for i in range(n):
        for j in range(m):
            dz[i, j] = probs[i, j] * inv
        dz[i, labels[i]] -= inv
    return dz


@njit(cache=True)
def xent_loss(probs, labels):
    n = probs.shape[0]
    total = 0.0
    for i in range(n):
        p = probs[i, labels[i]]
        if p < 1e-300:
            p = 1e-300
        total += -np.log(p)
    return total / n


@njit(cache=True)
def sgd_update(param, grad, lr):
    for i in range(param.size):
        param[i] -= lr * grad[i]


@njit(cache=True)
def prop1_chunk(uniforms, grads, p):
    t, k = uniforms.shape
    s = 0.0
    s2 = 0.0
    for i in range(t):
        cnt = 0
        num = 0.0
        for j in range(k):
            if uniforms[i, j] < p:
                cnt += 1
                num += grads[j]
        if cnt > 0:
            gh = num / cnt
            s += gh
            s2 += gh * gh
    return s, s2
