"""Small shared numeric helpers."""

from __future__ import annotations

import numpy as np


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-invariant softmax along `axis`."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=axis, keepdims=True)


def softmax_vjp(s: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Backward through softmax: s is the softmax output, grad is dL/ds."""
    inner = (grad * s).sum(axis=-1, keepdims=True)
    return s * (grad - inner)


def ensure_2d(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Promote a vector to a single-row matrix; report whether it was 1-D."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError(f"expected 1-D or 2-D array, got shape {x.shape}")


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Scale-normalized max deviation between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / denom)
