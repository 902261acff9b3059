"""Dense float64 kernels the toy transformer is built from.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Kernels that
operate "per row" act on the last axis, so they also accept stacked inputs.

Random initialisation uses numpy's PCG64 bit generator (``numpy.random.Generator``),
whose stream is fixed for a given seed across platforms and numpy versions.
"""

from __future__ import annotations

import numpy as np

RMS_EPS = 1e-6


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = np.asarray(data, dtype=np.float64)
    if m.ndim == 1 and rows is None and cols is None:
        m = m.reshape(1, -1)
    if rows is not None and cols is not None:
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product of two 2-D matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction.

    Entries equal to ``-inf`` are treated as masked and receive zero weight;
    every row needs at least one finite entry.
    """
    m = np.asarray(m, dtype=np.float64)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    shifted = v - v.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def rms_norm(x: np.ndarray, gain: np.ndarray) -> np.ndarray:
    """Scale each row by its reciprocal root-mean-square, then apply ``gain``."""
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64).reshape(-1)
    if gain.shape[0] != x.shape[-1]:
        raise ValueError(f"rms_norm gain length {gain.shape[0]} != row width {x.shape[-1]}")
    inv = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS)
    return x * inv * gain


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


class Rng:
    """Seeded generator; identical seeds give identical streams."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def state(self) -> dict:
        return self._gen.bit_generator.state

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)


def seeded_init(rng: Rng, rows: int, cols: int, scale: float) -> np.ndarray:
    """Draw a ``rows x cols`` matrix i.i.d. uniform in ``[-scale, scale]``."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return rng.uniform(-scale, scale, (rows, cols))
