"""Semi-discrete central (Kurganov-Tadmor type) fluxes for space-dependent flux
functions, the diffusive face flux, and the no-flux closure.

Face arrays along axis ``j`` have ``shape[j] + 1`` entries on that axis; index
``f`` is the face at ``lo_j + f * dx_j``.  Index 0 and the last index are the
boundary faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NonFiniteError
from .limiter import FaceLimits, LimiterConfig, face_limits
from .mesh import Grid


@dataclass(frozen=True)
class FluxFunction:
    """``eval(xi, u)`` with ``xi`` a tuple of per-axis coordinate arrays."""

    eval: Callable
    carries_dissipation: bool = False
    name: str = ""


@dataclass
class FaceFluxSet:
    """Per-axis full face arrays of hyperbolic (``H``) and diffusive (``P``) fluxes."""

    H: list = field(default_factory=list)
    P: list = field(default_factory=list)


def face_flux(flux: FluxFunction, xi_face, u_minus, u_plus, a_bound: float):
    """Numerical flux through one face (or an array of faces)."""
    if a_bound < 0:
        raise ValueError("a_bound must be non-negative")
    H = 0.5 * (flux.eval(xi_face, u_plus) + flux.eval(xi_face, u_minus))
    if flux.carries_dissipation:
        H = H - a_bound * (np.asarray(u_plus) - np.asarray(u_minus))
    if not np.all(np.isfinite(H)):
        raise NonFiniteError(f"non-finite numerical flux {flux.name!r}")
    return H


def face_points(grid: Grid, axis: int) -> tuple[np.ndarray, ...]:
    """Coordinates of the interior faces along ``axis`` as broadcastable arrays."""
    pts = []
    for j in range(grid.dim):
        c = grid.faces(j)[1:-1] if j == axis else grid.centers(j)
        shape = [1] * grid.dim
        shape[j] = c.size
        pts.append(c.reshape(shape))
    return tuple(pts)


def pad_boundary(interior: np.ndarray, axis: int) -> np.ndarray:
    """Embed interior face values into the full face array with zero boundary faces."""
    pad = [(0, 0)] * interior.ndim
    pad[axis] = (1, 1)
    return np.pad(interior, pad)


def hyperbolic_face_fluxes(
    flux: FluxFunction,
    u: np.ndarray,
    grid: Grid,
    axis: int,
    a_bound: float,
    config: LimiterConfig = LimiterConfig(),
    limits: FaceLimits | None = None,
    xi: tuple | None = None,
) -> np.ndarray:
    """Full face array of numerical fluxes along ``axis``, zero on the boundary."""
    if limits is None:
        limits = face_limits(u, config, axis)
    if xi is None:
        xi = face_points(grid, axis)
    return pad_boundary(face_flux(flux, xi, limits.minus, limits.plus, a_bound), axis)


def flux_difference(H: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """``(H_{k+1/2} - H_{k-1/2}) / dx`` along ``axis``."""
    return np.diff(H, axis=axis) / grid.dx[axis]


def interior_flux_difference(Hi: np.ndarray, dx: float, axis: int) -> np.ndarray:
    """:func:`flux_difference` of ``pad_boundary(Hi, axis)`` without building the padded array."""
    Hm = Hi if axis == 0 else np.moveaxis(Hi, axis, 0)
    out = np.empty((Hm.shape[0] + 1,) + Hm.shape[1:])
    out[0] = Hm[0]
    np.subtract(Hm[1:], Hm[:-1], out=out[1:-1])
    out[-1] = -Hm[-1]
    out /= dx
    return out if axis == 0 else np.moveaxis(out, 0, axis)


def semi_discrete_hyperbolic_rhs(
    fluxes: Sequence[FluxFunction],
    u: np.ndarray,
    grid: Grid,
    a_bound: float,
    config: LimiterConfig = LimiterConfig(),
) -> np.ndarray:
    """Tendency ``-sum_j (H_{k+1/2} - H_{k-1/2}) / dx_j`` with no-flux boundaries.

    ``fluxes[j]`` is the flux function in direction ``j``.
    """
    u = np.asarray(u, dtype=float).reshape(grid.shape)
    out = np.zeros(grid.shape)
    for axis, flux in enumerate(fluxes):
        H = hyperbolic_face_fluxes(flux, u, grid, axis, a_bound, config)
        out -= flux_difference(H, grid, axis)
    return out


def diffusive_face_fluxes(u: np.ndarray, grid: Grid, nu: float, axis: int) -> np.ndarray:
    P = nu * np.diff(u, axis=axis) / grid.dx[axis]
    return pad_boundary(P, axis)


def diffusion_rhs(u: np.ndarray, grid: Grid, nu: float) -> np.ndarray:
    """Tendency ``sum_j (P_{k+1/2} - P_{k-1/2}) / dx_j`` with zero boundary fluxes."""
    if nu < 0:
        raise ValueError(f"viscosity must be non-negative, got {nu}")
    u = np.asarray(u, dtype=float).reshape(grid.shape)
    out = np.zeros(grid.shape)
    if nu == 0:
        return out
    for axis in range(grid.dim):
        out += flux_difference(diffusive_face_fluxes(u, grid, nu, axis), grid, axis)
    return out


def _neumann_laplacian_1d(m: int, dx: float) -> sp.csr_matrix:
    main = -2.0 * np.ones(m)
    main[0] = main[-1] = -1.0
    off = np.ones(m - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / dx**2


def diffusion_matrix(grid: Grid, nu: float) -> sp.csr_matrix:
    """Sparse matrix of :func:`diffusion_rhs` acting on the flattened field."""
    if nu < 0:
        raise ValueError(f"viscosity must be non-negative, got {nu}")
    shape = grid.shape
    L = sp.csr_matrix((grid.size, grid.size))
    for axis in range(grid.dim):
        factors = [sp.identity(m, format="csr") for m in shape]
        factors[axis] = _neumann_laplacian_1d(shape[axis], grid.dx[axis])
        term = factors[0]
        for f in factors[1:]:
            term = sp.kron(term, f, format="csr")
        L = L + term
    return (nu * L).tocsr()


def enforce_noflux(faces: FaceFluxSet, grid: Grid) -> FaceFluxSet:
    """Zero every hyperbolic and diffusive flux on a face lying in the domain boundary."""
    def zeroed(arrs):
        out = []
        for axis, arr in enumerate(arrs):
            arr = np.array(arr, dtype=float, copy=True)
            idx = [slice(None)] * arr.ndim
            for end in (0, -1):
                idx[axis] = end
                arr[tuple(idx)] = 0.0
            out.append(arr)
        return out

    return FaceFluxSet(H=zeroed(faces.H), P=zeroed(faces.P))
