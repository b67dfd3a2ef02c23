"""Minmod slopes and one-sided face values of the piecewise-linear reconstruction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidGridError, NonFiniteError
from .mesh import MIN_CELLS

DEFAULT_THETA = 1.5


@dataclass(frozen=True)
class LimiterConfig:
    theta: float = DEFAULT_THETA

    def __post_init__(self):
        if not 1.0 <= self.theta <= 2.0:
            raise ValueError(f"theta must lie in [1, 2], got {self.theta}")


@dataclass(frozen=True)
class FaceLimits:
    """Face values along one axis, on the interior faces only.

    ``minus[..., f, ...]`` is the limit from below at the face between cells
    ``f`` and ``f + 1`` along ``axis``; ``plus`` the limit from above.
    """

    axis: int
    minus: np.ndarray
    plus: np.ndarray


def minmod(*args):
    """``max(min(a_i, 0)) + min(max(a_i, 0))``, elementwise over arrays."""
    if len(args) < 2:
        raise ValueError("minmod needs at least two arguments")
    a = np.asarray(np.broadcast_arrays(*args), dtype=float)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("minmod received non-finite input")
    out = np.max(np.minimum(a, 0.0), axis=0) + np.min(np.maximum(a, 0.0), axis=0)
    return float(out) if out.ndim == 0 else out


def _minmod3(a, b, c):
    # hot path: no validation, three arrays of equal shape
    lo = np.maximum(np.maximum(np.minimum(a, 0.0), np.minimum(b, 0.0)), np.minimum(c, 0.0))
    hi = np.minimum(np.minimum(np.maximum(a, 0.0), np.maximum(b, 0.0)), np.maximum(c, 0.0))
    return lo + hi


def _front(a, axis):
    return a if axis == 0 else np.moveaxis(a, axis, 0)


def _back(a, axis):
    return a if axis == 0 else np.moveaxis(a, 0, axis)


def slopes(u: np.ndarray, theta: float, axis: int = 0) -> np.ndarray:
    """Limited cell increments (slope times spacing) along ``axis``.

    The first and last cell along the axis lack a neighbor and get zero slope.
    """
    u = _front(u, axis)
    s = np.zeros_like(u)
    left = u[1:-1] - u[:-2]
    right = u[2:] - u[1:-1]
    s[1:-1] = _minmod3(theta * left, 0.5 * (u[2:] - u[:-2]), theta * right)
    return _back(s, axis)


def face_limits(u: np.ndarray, config: LimiterConfig = LimiterConfig(), axis: int = 0) -> FaceLimits:
    """One-sided values at every interior face along ``axis``."""
    u = np.asarray(u, dtype=float)
    if u.shape[axis] < MIN_CELLS:
        raise InvalidGridError(f"need at least {MIN_CELLS} cells along axis {axis}")
    s = slopes(u, config.theta, axis)
    um = _front(u, axis)
    sm = _front(s, axis)
    minus = um[:-1] + 0.5 * sm[:-1]
    plus = um[1:] - 0.5 * sm[1:]
    return FaceLimits(axis, _back(minus, axis), _back(plus, axis))
