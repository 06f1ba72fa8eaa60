"""Dense float32 kernels every layer of the engine is built from.

All operations take and return row-major ``numpy.float32`` arrays and
accumulate in 32-bit floats. ``matmul`` deliberately goes through
``np.einsum`` rather than BLAS: einsum performs plain sequential float32
accumulation, so results are reproducible and match a naive triple-loop
reference bit for bit.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError, InvalidShapeError

F32 = np.float32


def as_f32(values) -> np.ndarray:
    """Coerce to a contiguous float32 array (zero-copy when already one)."""
    return np.ascontiguousarray(values, dtype=F32)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product c[i,j] = sum_p a[i,p] * b[p,j] with float32 accumulation."""
    a = np.asarray(a, dtype=F32)
    b = np.asarray(b, dtype=F32)
    if a.ndim != 2 or b.ndim != 2:
        raise InvalidShapeError(f"matmul expects 2-d operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise InvalidShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return np.einsum("ip,pj->ij", a, b)


def linear(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map ``x @ w + bias`` with the bias broadcast over rows."""
    x = np.asarray(x, dtype=F32)
    w = np.asarray(w, dtype=F32)
    bias = np.asarray(bias, dtype=F32)
    if w.ndim != 2 or bias.ndim != 1 or bias.shape[0] != w.shape[1]:
        raise InvalidShapeError(
            f"linear bias {bias.shape} does not match weight {w.shape}"
        )
    return matmul(x, w) + bias


def layer_norm(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = 1e-5,
) -> np.ndarray:
    """Per-row normalization: zero mean, unit variance, then scale and shift."""
    x = np.asarray(x, dtype=F32)
    gamma = np.asarray(gamma, dtype=F32)
    beta = np.asarray(beta, dtype=F32)
    if x.ndim != 2:
        raise InvalidShapeError(f"layer_norm expects a [T, d] input, got {x.shape}")
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise InvalidShapeError(
            f"layer_norm gamma/beta {gamma.shape}/{beta.shape} do not match width {d}"
        )
    if eps <= 0:
        raise InvalidArgumentError(f"layer_norm eps must be positive, got {eps}")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + F32(eps))
    return centered * inv * gamma + beta


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function (no overflow for large |x|)."""
    x = np.asarray(x, dtype=F32)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def swish(x: np.ndarray) -> np.ndarray:
    """Elementwise x * sigmoid(x)."""
    x = np.asarray(x, dtype=F32)
    return x * sigmoid(x)
