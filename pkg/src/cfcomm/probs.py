"""Small helpers for categorical distributions.

All policies in this package emit rows of probabilities. Any logarithm taken
of those rows goes through a fixed floor so that collapsed components cannot
produce infinities; the floor also zeroes the corresponding gradient, which
keeps analytic gradients consistent with finite differences of the same
floored expression.
"""
from __future__ import annotations

import numpy as np

from .errors import UsageError

PROB_FLOOR = 1e-8


def one_hot(indices, n: int) -> np.ndarray:
    """Encode integer indices as one-hot rows of width ``n``."""
    idx = np.asarray(indices)
    out = np.zeros(idx.shape + (n,), dtype=np.float64)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def floored(probs: np.ndarray) -> np.ndarray:
    return np.maximum(probs, PROB_FLOOR)


def floor_mask(probs: np.ndarray) -> np.ndarray:
    """1 where the floor is inactive (gradients pass), 0 where it clamps."""
    return (probs > PROB_FLOOR).astype(np.float64)


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) per row, computed on floored probabilities."""
    p = floored(probs)
    return -np.sum(p * np.log(p), axis=-1)


def entropy_grad(probs: np.ndarray) -> np.ndarray:
    """d entropy / d probs, with clamped components contributing zero."""
    p = floored(probs)
    return -(np.log(p) + 1.0) * floor_mask(probs)


def kl_categorical(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL(p || q) per row over the last axis, on floored probabilities."""
    pf, qf = floored(p), floored(q)
    return np.sum(pf * (np.log(pf) - np.log(qf)), axis=-1)


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index per row by inverse-CDF sampling. Vectorised."""
    p = np.atleast_2d(probs)
    if not np.isfinite(p).all():
        raise UsageError("categorical sampling received non-finite probabilities")
    cdf = np.cumsum(p, axis=-1)
    u = rng.random((p.shape[0], 1))
    idx = np.sum(cdf < u, axis=-1)
    idx = np.minimum(idx, p.shape[-1] - 1)
    return idx.reshape(np.asarray(probs).shape[:-1])


def greedy_categorical(probs: np.ndarray) -> np.ndarray:
    """First-maximum argmax per row (deterministic under ties)."""
    return np.argmax(probs, axis=-1)
