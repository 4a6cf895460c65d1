"""Dense fp64 helpers and the repo-wide seeded RNG.

Tensors are plain ``numpy.ndarray`` values of dtype float64 in C (row-major)
order. Every random draw in the package goes through :func:`make_rng` so that
the generator algorithm is fixed in one place.
"""

from __future__ import annotations

import numpy as np

# Recorded in every run output so goldens name the stream they came from.
RNG_ALGORITHM = "philox4x64-10 (numpy.random.Philox), ziggurat normals"


class TensorError(ValueError):
    pass


def as_tensor(x, *, copy: bool = False) -> np.ndarray:
    """Coerce to a C-contiguous float64 array and reject non-finite entries."""
    arr = np.array(x, dtype=np.float64, order="C") if copy else np.ascontiguousarray(x, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise TensorError("non-finite entries")
    return arr


def make_rng(seed: int) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise TensorError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(seed))


def draw_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape, dtype=np.float64)


def softmax_rows(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        raise TensorError("empty input")
    if m.ndim != 2:
        raise TensorError(f"softmax_rows expects rank 2, got shape {m.shape}")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    shifted = m - m.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def rms(t) -> float:
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        raise TensorError("empty input")
    return float(np.sqrt(np.mean(t * t)))


def frobenius_norm(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        raise TensorError("empty input")
    return float(np.sqrt(np.sum(m * m)))
