"""Plain SGD with optional decoupled L2 weight decay or L1 shrinkage.

The update is ``theta <- theta - lr * (grads + l2 * theta + l1 * sign(theta))``
applied in place on any object exposing a ``store`` (ParameterStore). Loss
functions in this package already fold their regulariser into the gradients
they return, in which case callers pass ``l2 = l1 = 0``.
"""
from __future__ import annotations

import numpy as np

from ..errors import TrainingFault


def apply_gradients(model, grads: np.ndarray, lr: float, l2: float = 0.0, l1: float = 0.0):
    """One SGD step. Raises TrainingFault naming the layer on non-finite grads."""
    store = model.store
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != store.theta.shape:
        raise TrainingFault(
            f"gradient vector has {grads.size} entries, parameters have {store.theta.size}")
    if not np.isfinite(grads).all():
        bad = int(np.flatnonzero(~np.isfinite(grads))[0])
        raise TrainingFault(f"non-finite gradient in {store.region_of(bad)}")
    step = grads
    if l2:
        step = step + l2 * store.theta
    if l1:
        step = step + l1 * np.sign(store.theta)
    store.theta -= lr * step
    store.bump()
    return model
