"""Dense vector kernels: cosine similarity, temperature softmax, top-k reductions.

Pure functions over array-likes. Everything upstream (losses, scores, metrics)
is built from these; batch variants live next to the scalar ones so the two
paths share conventions (stable softmax, lowest-index tie-breaks).
"""

from __future__ import annotations

import numpy as np

from .errors import (
    EmptyInputError,
    NonPositiveTemperatureError,
    ZeroNormVectorError,
)

NORM_FLOOR = 1e-12
# exp argument cap; cosine/T stays far below this for any T >= 0.0125
EXP_CLAMP = 80.0


def cosine_sim(a, b) -> float:
    """Cosine similarity of two vectors, clipped into [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise ZeroNormVectorError(
            f"cosine similarity needs nonzero vectors (norms {na:.3e}, {nb:.3e})"
        )
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def softmax_T(row, T) -> np.ndarray:
    """Temperature softmax with max-subtraction for stability.

    Order-preserving for any T > 0, so the argmax never depends on T.
    """
    if T <= 0:
        raise NonPositiveTemperatureError(f"temperature must be > 0, got {T}")
    x = np.asarray(row, dtype=np.float64) / T
    e = np.exp(x - x.max())
    return e / e.sum()


def topk_sum(xs, k) -> float:
    """Sum of the min(k, len) largest values."""
    xs = _as_nonempty(xs, "topk_sum")
    k = _check_k(k, xs.size)
    return float(np.sort(xs)[xs.size - k:].sum())


def topk_mean(xs, k) -> float:
    """Mean of the min(k, len) largest values."""
    xs = _as_nonempty(xs, "topk_mean")
    k = _check_k(k, xs.size)
    return float(np.sort(xs)[xs.size - k:].sum() / k)


def topk_support(xs, k) -> np.ndarray:
    """Indices of the min(k, len) largest values, sorted ascending.

    Ties are broken toward the lowest index; this determinism is what keeps
    the top-k subgradients reproducible.
    """
    xs = _as_nonempty(xs, "topk_support")
    k = _check_k(k, xs.size)
    order = np.argsort(-xs, kind="stable")
    return np.sort(order[:k])


def _as_nonempty(xs, op: str) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64).ravel()
    if xs.size == 0:
        raise EmptyInputError(f"{op} of an empty sequence")
    return xs


def _check_k(k, size: int) -> int:
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    return min(int(k), size)


# ---- batch helpers ----

def unit_rows(X) -> np.ndarray:
    """Rows of X scaled to unit norm (works for any leading shape)."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=-1)
    if np.any(norms < NORM_FLOOR):
        raise ZeroNormVectorError("zero-norm row in batch normalization")
    return X / norms[..., None]


def softmax_rows(X, T=1.0) -> np.ndarray:
    """Stable temperature softmax along the last axis."""
    if T <= 0:
        raise NonPositiveTemperatureError(f"temperature must be > 0, got {T}")
    x = np.asarray(X, dtype=np.float64) / T
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def clamped_exp(X) -> np.ndarray:
    """exp with the argument capped at EXP_CLAMP (guards tiny temperatures)."""
    return np.exp(np.minimum(X, EXP_CLAMP))
