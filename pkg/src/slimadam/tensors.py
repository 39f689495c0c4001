"""Axis reductions and broadcasting for rank-1/rank-2 float64 tensors.

Rank-2 arrays follow the (fan_out, fan_in) convention: axis 0 is fan_out,
axis 1 is fan_in.  Reductions over an axis set are the building block of
the shared second-moment update and of the SNR diagnostic.
"""

from enum import Enum

import numpy as np


class Axes(Enum):
    """Which dimensions a statistic is shared (averaged) over."""

    NONE = "none"
    FAN_OUT = "fan_out"
    FAN_IN = "fan_in"
    BOTH = "both"


# numpy axis tuples; BOTH depends on rank, handled in _axis_tuple
_AXIS_OF = {Axes.FAN_OUT: (0,), Axes.FAN_IN: (1,)}

REDUCING_AXES = (Axes.FAN_OUT, Axes.FAN_IN, Axes.BOTH)


class ShapeError(ValueError):
    pass


def as_tensor(x) -> np.ndarray:
    t = np.asarray(x, dtype=np.float64)
    if t.ndim not in (1, 2):
        raise ShapeError(f"rank must be 1 or 2, got {t.ndim}")
    return t


def _axis_tuple(k: Axes, rank: int) -> tuple:
    if k is Axes.NONE:
        return ()
    if k is Axes.BOTH:
        return tuple(range(rank))
    if rank != 2:
        raise ShapeError(f"{k.value} reduction requires a rank-2 tensor, got rank {rank}")
    return _AXIS_OF[k]


def reduced_shape(shape: tuple, k: Axes) -> tuple:
    """Shape left after removing the dims in k; BOTH collapses to (1,)."""
    axes = _axis_tuple(k, len(shape))
    out = tuple(s for i, s in enumerate(shape) if i not in axes)
    return out if out else (1,)


def mean_along(t: np.ndarray, k: Axes) -> np.ndarray:
    """Arithmetic mean over the dims in k; k=NONE returns t unchanged."""
    if k is Axes.NONE:
        return t
    axes = _axis_tuple(k, t.ndim)
    # BOTH reduces the flat array: same summation order as np.mean(t)
    out = np.mean(t) if k is Axes.BOTH else np.mean(t, axis=axes)
    # constant slices average to the constant itself, bit-exactly; np.mean
    # may round (e.g. 3 copies of 0.1), so patch them up explicitly
    lo = np.min(t, axis=axes)
    hi = np.max(t, axis=axes)
    out = np.where(lo == hi, lo, out)
    return out.reshape(1) if out.ndim == 0 else np.asarray(out)


def var_along(t: np.ndarray, k: Axes, ddof: int = 0) -> np.ndarray:
    """Population variance (ddof=0) over the dims in k.

    A reduced dim of size 1 yields exact zeros.  ddof=1 gives the sample
    estimator for sensitivity checks; it raises on size-1 reductions.
    """
    if k is Axes.NONE:
        raise ShapeError("variance reduction requires at least one axis")
    axes = _axis_tuple(k, t.ndim)
    out = np.var(t, ddof=ddof) if k is Axes.BOTH else np.var(t, axis=axes, ddof=ddof)
    return out.reshape(1) if out.ndim == 0 else out


def broadcast_along(reduced: np.ndarray, k: Axes, full_shape: tuple) -> np.ndarray:
    """Expand a reduced tensor back to full_shape, constant along the dims in k."""
    if k is Axes.NONE:
        if tuple(reduced.shape) != tuple(full_shape):
            raise ShapeError(f"shape mismatch: {reduced.shape} vs {full_shape}")
        return reduced
    if tuple(reduced.shape) != reduced_shape(tuple(full_shape), k):
        raise ShapeError(
            f"reduced shape {reduced.shape} incompatible with {full_shape} minus {k.value}"
        )
    axes = _axis_tuple(k, len(full_shape))
    # reinsert singleton dims where axes were removed, then expand
    shape_with_ones = list(full_shape)
    for ax in axes:
        shape_with_ones[ax] = 1
    base = reduced.reshape(shape_with_ones)
    return np.broadcast_to(base, full_shape).copy()
