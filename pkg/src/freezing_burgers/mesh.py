"""Uniform cell-centered rectangular grids in one and two dimensions.

Along axis ``j`` the domain ``[lo_j, hi_j]`` is split into ``n_j + 2`` cells of
width ``dx_j = (hi_j - lo_j) / (n_j + 2)``; the faces sit at ``lo_j + k * dx_j``
for ``k = 0, ..., n_j + 2``.  The two outermost cells per axis are ordinary
unknowns, there are no ghost cells.  Fields are stored as numpy arrays of shape
``grid.shape`` (C order, last axis fastest) and flattened with ``ravel``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidGridError, NonFiniteError

MIN_CELLS = 4


@dataclass(frozen=True)
class Grid:
    bounds: tuple[tuple[float, float], ...]
    n_cells: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.n_cells)

    @property
    def shape(self) -> tuple[int, ...]:
        """Number of stored cells per axis (``n_j + 2``)."""
        return tuple(n + 2 for n in self.n_cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple((hi - lo) / m for (lo, hi), m in zip(self.bounds, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    def faces(self, axis: int) -> np.ndarray:
        """All face coordinates along ``axis``, boundary faces included."""
        lo, _ = self.bounds[axis]
        m = self.shape[axis]
        return lo + np.arange(m + 1) * self.dx[axis]

    def centers(self, axis: int) -> np.ndarray:
        lo, _ = self.bounds[axis]
        m = self.shape[axis]
        return lo + (np.arange(m) + 0.5) * self.dx[axis]

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinates broadcast to ``shape`` (ij indexing)."""
        return tuple(np.meshgrid(*(self.centers(j) for j in range(self.dim)), indexing="ij"))

    def max_abs_coord(self, axis: int) -> float:
        lo, hi = self.bounds[axis]
        return max(abs(lo), abs(hi))

    def is_boundary_face(self, axis: int, coord) -> np.ndarray:
        lo, hi = self.bounds[axis]
        coord = np.asarray(coord)
        return (coord == lo) | (coord == hi)

    def flatten_index(self, k: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(k), self.shape))

    def unflatten_index(self, flat: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))


@dataclass(frozen=True)
class CellField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.size != self.grid.size:
            raise ValueError(f"field has {self.values.size} entries, grid needs {self.grid.size}")

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def build_grid(dim: int, bounds, n_cells) -> Grid:
    """Validate and build a :class:`Grid`.

    ``bounds`` is a pair ``(lo, hi)`` in 1D or a sequence of pairs; ``n_cells``
    an int (used on every axis) or one int per axis.
    """
    if dim not in (1, 2):
        raise InvalidGridError(f"dim must be 1 or 2, got {dim}")
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape == (2,):
        bounds = np.tile(bounds, (dim, 1))
    if bounds.shape != (dim, 2):
        raise InvalidGridError(f"bounds must give (lo, hi) for each of {dim} axes")
    if not np.all(np.isfinite(bounds)) or np.any(bounds[:, 0] >= bounds[:, 1]):
        raise InvalidGridError(f"invalid bounds {bounds.tolist()}: need lo < hi")
    n = np.atleast_1d(np.asarray(n_cells))
    if n.size == 1:
        n = np.repeat(n, dim)
    if n.size != dim or np.any(n != np.round(n)):
        raise InvalidGridError(f"n_cells must give one integer per axis, got {n_cells!r}")
    if np.any(n < MIN_CELLS):
        raise InvalidGridError(f"too few cells: need at least {MIN_CELLS} per axis, got {n.tolist()}")
    return Grid(
        bounds=tuple((float(lo), float(hi)) for lo, hi in bounds),
        n_cells=tuple(int(k) for k in n),
    )


def grid_for_spacing(dim: int, bounds, dx: float) -> Grid:
    """Grid whose spacing is ``dx`` on every axis (domain length must be a multiple)."""
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape == (2,):
        bounds = np.tile(bounds, (dim, 1))
    cells = []
    for lo, hi in bounds:
        m = (hi - lo) / dx
        if abs(m - round(m)) > 1e-9 * max(1.0, m):
            raise InvalidGridError(f"domain length {hi - lo} is not a multiple of dx={dx}")
        cells.append(int(round(m)) - 2)
    return build_grid(dim, bounds, cells)


def cell_average_init(grid: Grid, func: Callable) -> CellField:
    """Midpoint-rule cell averages ``v_k = u0(xi_k)``.

    ``func`` receives one coordinate array per axis and must broadcast.
    """
    coords = grid.mesh()
    values = np.asarray(func(*coords), dtype=float)
    values = np.broadcast_to(values, grid.shape).copy()
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("initial function returned non-finite values")
    return CellField(grid, values)
