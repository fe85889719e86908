"""Shared numeric primitives for the hand-rolled encoders."""

from __future__ import annotations

import numpy as np


def sigmoid(z):
    # numerically stable piecewise form
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(p, dp, axis=-1):
    # dz given p = softmax(z) and upstream dp
    return p * (dp - np.sum(dp * p, axis=axis, keepdims=True))


def layernorm_forward(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gamma + beta, (xhat, inv)


def layernorm_backward(dy, cache, gamma):
    xhat, inv = cache
    dgamma = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    dbeta = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gamma
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def uniform_init(rng: np.random.Generator, shape, d: int, dtype=np.float64):
    """Seeded uniform init scaled by 1/sqrt(d)."""
    bound = 1.0 / np.sqrt(d)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
