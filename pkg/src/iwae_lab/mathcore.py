"""Numeric primitives shared by every other module.

Arrays are plain ``numpy.ndarray`` of dtype float64. Random numbers come from
``numpy.random.Generator`` backed by PCG64:

* normals use numpy's ziggurat transform of the PCG64 uniform stream
  (``Generator.standard_normal``), which is deterministic for a given state;
* independent lanes are obtained by spawning children of a
  ``SeedSequence``, so lane ``j`` of seed ``s`` is always the same stream.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Array shapes do not conform."""


class DomainError(ValueError):
    """A value is outside the domain an operation is defined on."""


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Return ``n`` independent generators derived from ``seed``.

    Stream ``j`` depends only on ``(seed, j)``, never on how many streams are
    requested, so a lane keeps its draws when the lane count changes.
    """
    children = np.random.SeedSequence(seed).spawn(n)
    return [make_rng(c) for c in children]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def log_sum_exp(v, axis: int | None = None) -> np.ndarray | float:
    """Stable ``log(sum(exp(v)))``, optionally along one axis."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or (axis is not None and v.shape[axis] == 0):
        raise ValueError("log_sum_exp of an empty array")
    m = np.max(v, axis=axis, keepdims=True)
    # all -inf along the reduction: result is -inf, avoid nan from inf - inf
    m = np.where(np.isfinite(m), m, 0.0)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_mean_exp(v, axis: int | None = None) -> np.ndarray | float:
    v = np.asarray(v, dtype=np.float64)
    n = v.size if axis is None else v.shape[axis]
    return log_sum_exp(v, axis=axis) - np.log(n)


def softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    z = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def sample_standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape)


def sample_categorical(rng: np.random.Generator, probs) -> int:
    """Draw an index with probability ``probs[i]`` by inverting the CDF.

    One uniform ``u`` is consumed and the smallest ``i`` with
    ``cdf[i] > u`` is returned, so zero-mass entries are never chosen and
    ties between equal weights resolve to the lower index range.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probs must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probs is not a probability vector")
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    i = int(np.searchsorted(cdf, u, side="right"))
    # u can round up to cdf[-1]; fall back to the last index with mass
    return min(i, int(np.flatnonzero(p)[-1]))


def sample_categorical_rows(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """Vectorized :func:`sample_categorical` over the rows of ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    return np.array([sample_categorical(rng, row) for row in probs], dtype=np.int64)
