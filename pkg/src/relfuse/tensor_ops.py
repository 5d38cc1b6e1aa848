"""Dense-tensor primitives underneath every layer.

Tensors are numpy arrays in row-major (C) order: float32 is the training
dtype, float64 is reserved for the finite-difference verification suite.
Reductions that feed bit-exact cross-checks accumulate in ascending
flat-index order (``ascending_sum``); numpy's ``add.accumulate`` implements
exactly that strict left fold.
"""

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible or invalid shapes."""


class NonFiniteError(FloatingPointError):
    """An operation produced, or was handed, NaN or Inf."""


def require_finite(t, what="tensor"):
    if not np.all(np.isfinite(t)):
        raise NonFiniteError(f"non-finite values in {what}")
    return t


def matmul(a, b):
    """Matrix product of two rank-2 tensors."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return require_finite(out, "matmul output")


def reshape(t, new_shape):
    """Reshape without reordering data.

    Row-major order means a (W, H, D) feature map reshaped to (W*H, D) places
    spatial position (w, h) at row w*H + h.
    """
    t = np.asarray(t)
    new_shape = tuple(int(d) for d in new_shape)
    if any(d <= 0 for d in new_shape):
        raise ShapeError(f"reshape target must have positive dims, got {new_shape}")
    n = 1
    for d in new_shape:
        n *= d
    if n != t.size:
        raise ShapeError(
            f"cannot reshape {t.shape} ({t.size} elements) into {new_shape} ({n} elements)"
        )
    return t.reshape(new_shape)


def ascending_sum(t, axis=0):
    """Sum along ``axis`` as a strict left fold in ascending index order."""
    t = np.asarray(t)
    if t.shape[axis] == 0:
        ax = axis % t.ndim
        return np.zeros(t.shape[:ax] + t.shape[ax + 1:], dtype=t.dtype)
    return np.take(np.add.accumulate(t, axis=axis), -1, axis=axis)


def reduce_sum(t, axis):
    """Sum a tensor along one axis, dropping it from the shape."""
    t = np.asarray(t)
    if not isinstance(axis, (int, np.integer)) or not 0 <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range for rank-{t.ndim} tensor")
    return require_finite(ascending_sum(t, int(axis)), "reduce_sum output")
