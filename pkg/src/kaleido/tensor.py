"""Dense float64 matrix helpers and activation functions.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64 in C
(row-major) order. Two matrix products are provided:

* :func:`matmul` accumulates every output entry strictly left to right over
  the inner dimension, so it is bit-identical to a naive triple loop on any
  platform.
* :func:`gemm` delegates to the BLAS routine behind ``numpy.matmul``. It is
  deterministic for a fixed build and thread count and is what the network
  uses on its hot paths; it agrees with :func:`matmul` to rounding error.
"""

from enum import Enum

import numpy as np

from .errors import ShapeError

# Largest/smallest float64 strictly inside (0, 1).
_ONE_BELOW = np.nextafter(1.0, 0.0)
_ZERO_ABOVE = np.nextafter(0.0, 1.0)


class ActivationKind(str, Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"

    @property
    def bounds(self):
        """Closed hull ``(lo, hi)`` of the activation's range."""
        return _BOUNDS[self]

    @property
    def bounded(self):
        return self is not ActivationKind.RELU


_BOUNDS = {
    ActivationKind.RELU: (0.0, np.inf),
    ActivationKind.SIGMOID: (0.0, 1.0),
    ActivationKind.TANH: (-1.0, 1.0),
}


def as_matrix(x, name="x"):
    """Return ``x`` as a C-contiguous float64 matrix, promoting 1-D to a row."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def _check_inner(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape[0]}x{a.shape[1] if a.ndim > 1 else '?'} "
            f"by {b.shape[0]}x{b.shape[1] if b.ndim > 1 else '?'}: "
            f"shapes {a.shape} and {b.shape}"
        )


def matmul(a, b):
    """Matrix product with a fixed, platform-independent summation order.

    Entry ``(i, j)`` is ``((0 + a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...``,
    with each product rounded before it is added (no fused multiply-add).

    Raises:
        ShapeError: if the inner dimensions differ.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_inner(a, b)
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols))
    term = np.empty((rows, cols))
    a_cols = np.ascontiguousarray(a.T)
    for k in range(inner):
        np.multiply(a_cols[k][:, None], b[k], out=term)
        out += term
    return out


def gemm(a, b):
    """BLAS-backed matrix product with the same shape checks as :func:`matmul`."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_inner(a, b)
    return a @ b


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # exp of a non-positive argument only, so nothing overflows.
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(out, _ZERO_ABOVE, _ONE_BELOW)


def apply_activation(kind, x):
    """Apply ``kind`` entrywise.

    Sigmoid and Tanh results are rounded inward to the nearest float64 inside
    their open ranges, so saturated inputs never return exactly 0, 1 or -1.
    """
    kind = ActivationKind(kind)
    x = np.asarray(x, dtype=np.float64)
    if kind is ActivationKind.RELU:
        return np.maximum(x, 0.0)
    if kind is ActivationKind.SIGMOID:
        return sigmoid(x)
    return np.clip(np.tanh(x), -_ONE_BELOW, _ONE_BELOW)


def activation_derivative(kind, preact):
    """Entrywise derivative of ``kind`` evaluated at ``preact``.

    The ReLU derivative at exactly zero is taken as 0.
    """
    kind = ActivationKind(kind)
    preact = np.asarray(preact, dtype=np.float64)
    if kind is ActivationKind.RELU:
        return (preact > 0.0).astype(np.float64)
    if kind is ActivationKind.SIGMOID:
        s = sigmoid(preact)
        return s * (1.0 - s)
    t = np.tanh(preact)
    return 1.0 - t * t
