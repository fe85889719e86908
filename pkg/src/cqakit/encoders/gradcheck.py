"""Finite-difference verification of the hand-derived gradients."""

from __future__ import annotations

import numpy as np


class NonFiniteLossError(RuntimeError):
    pass


def grad_check(
    loss_and_grads,
    params: dict[str, np.ndarray],
    eps: float = 1e-5,
    subsample_threshold: int = 200,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grads()`` must evaluate the loss at the current parameter
    values and return ``(loss, grads)`` with one gradient array per entry of
    ``params`` (same keys, same shapes). Every scalar parameter is probed
    with a central difference ``(L(p+eps) - L(p-eps)) / (2 eps)``; tensors
    larger than ``subsample_threshold`` entries are probed on a seeded
    random subsample. Parameters must be float64 for the stated tolerances
    to be meaningful.

    The relative error of one entry is ``|a - n| / max(|a|, |n|, 1e-3)``,
    so near-zero gradients are compared absolutely at 1e-3 scale.
    """
    loss0, grads = loss_and_grads()
    if not np.isfinite(loss0):
        raise NonFiniteLossError(f"loss is {loss0}")
    if rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    for name in sorted(params):
        arr = params[name]
        flat = arr.reshape(-1)
        grad_flat = grads[name].reshape(-1)
        size = flat.shape[0]
        if size <= subsample_threshold:
            indices = range(size)
        else:
            indices = rng.choice(size, size=subsample_threshold, replace=False)
        for idx in indices:
            orig = flat[idx]
            flat[idx] = orig + eps
            lp = loss_and_grads()[0]
            flat[idx] = orig - eps
            lm = loss_and_grads()[0]
            flat[idx] = orig
            numeric = (lp - lm) / (2.0 * eps)
            analytic = grad_flat[idx]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
            if rel > worst:
                worst = rel
    return float(worst)
