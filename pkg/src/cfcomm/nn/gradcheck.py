"""Central-difference verification of analytic gradients.

The relative error reported is ``|a - n| / max(1, |a|, |n|)`` per coordinate,
so tiny gradients are compared absolutely and large ones proportionally.
Callers should avoid probe points that sit exactly on a ReLU kink or a maxpool
tie; random float inputs make those a measure-zero event.
"""
from __future__ import annotations

import numpy as np


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / denom


def check_loss_grads(loss_and_grad, store, eps: float = 1e-5,
                     sample: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error of ``loss_and_grad`` against central differences.

    ``loss_and_grad()`` must evaluate the loss and its flat gradient at the
    store's current parameters, recomputing the forward pass on every call.
    ``sample`` limits the check to that many randomly chosen coordinates,
    which keeps large models tractable.
    """
    _, analytic = loss_and_grad()
    analytic = np.asarray(analytic, dtype=np.float64)
    indices = np.arange(store.size)
    if sample is not None and sample < store.size:
        indices = (rng or np.random.default_rng(0)).choice(store.size, size=sample, replace=False)
    numeric = np.empty(len(indices), dtype=np.float64)
    theta = store.theta
    for j, i in enumerate(indices):
        orig = theta[i]
        theta[i] = orig + eps
        hi = loss_and_grad()[0]
        theta[i] = orig - eps
        lo = loss_and_grad()[0]
        theta[i] = orig
        numeric[j] = (hi - lo) / (2.0 * eps)
    return float(relative_errors(analytic[indices], numeric).max())


def grad_check(net, x, eps: float = 1e-5, sample: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Gradient check for a sequential network.

    The output is scalarised by a fixed random weighting so every output
    coordinate exerts gradient pressure (softmax rows included).
    """
    x = np.asarray(x, dtype=np.float64)
    weights = np.random.default_rng(7).standard_normal((1,) + net.output_shape)

    def loss_and_grad():
        y, tape = net.forward(x)
        batch = y.shape[0] if y.ndim > len(net.output_shape) else 1
        yb = y if y.ndim > len(net.output_shape) else y[None]
        loss = float(np.sum(weights * yb))
        _, flat = net.backward(tape, np.broadcast_to(weights, (batch,) + net.output_shape))
        return loss, flat

    return check_loss_grads(loss_and_grad, net.store, eps=eps, sample=sample, rng=rng)
