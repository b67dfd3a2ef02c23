"""Discrete freezing operator for the d-dimensional Burgers' equation

    u_t + (1/p) div(a |u|^p) = nu * Laplace(u)

written in co-moving variables ``u(x, t) = v((x - b)/alpha^(p-1), tau) / alpha``.
The method-of-lines right-hand side has the affine structure

    F(v, mu) = -H0(v) - H1(v) @ mu + P v

with ``mu = (mu_scale, mu_shift_1, ..., mu_shift_d)``.  ``H1`` has one column per
group generator (scaling first, then one shift per axis); the zero-order source
of the scaling generator is folded into its first column.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .central_flux import FluxFunction, diffusion_matrix, face_flux, face_points, interior_flux_difference
from .errors import NonFiniteError, SingularSystemError
from .limiter import LimiterConfig, face_limits
from .linear_solvers import solve_small
from .mesh import Grid

log = logging.getLogger(__name__)

PHASES = ("orthogonal", "fixed", "none")
DEFAULT_CFL = {1: 1.0 / 3.0, 2: 0.2}
INIT_SWEEPS = 50


@dataclass
class OperatorBundle:
    H0: np.ndarray
    H1: np.ndarray
    Pv: np.ndarray
    G: np.ndarray | None = None

    def rhs(self, mu) -> np.ndarray:
        out = -self.H0 - self.H1 @ np.asarray(mu, dtype=float) + self.Pv
        if self.G is not None:
            out = out + self.G
        return out

    def mu_free_rhs(self) -> np.ndarray:
        """``F(v, 0)``: everything except the generator terms."""
        out = self.Pv - self.H0
        if self.G is not None:
            out = out + self.G
        return out


@dataclass
class FreezingProblem:
    """Physical, symmetry and discretization parameters of one freezing run.

    ``phase`` is ``orthogonal`` (index 1), ``fixed`` (index 2, needs
    ``reference``) or ``none`` (``mu`` held at zero: the plain Burgers MOL).
    """

    grid: Grid
    nu: float = 0.0
    p: float = 2.0
    a: tuple = (1.0,)
    limiter: LimiterConfig = field(default_factory=LimiterConfig)
    phase: str = "orthogonal"
    reference: np.ndarray | None = None
    cfl: float | None = None

    def __post_init__(self):
        d = self.grid.dim
        self.a = tuple(float(x) for x in np.broadcast_to(np.asarray(self.a, dtype=float), (d,)))
        if self.nu < 0:
            raise ValueError(f"viscosity must be non-negative, got {self.nu}")
        if self.p <= 1:
            raise ValueError(f"exponent p must exceed 1, got {self.p}")
        if not any(self.a):
            raise ValueError("direction vector a must be nonzero")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.phase == "fixed" and self.reference is None:
            raise ValueError("fixed phase condition needs a reference field")
        if self.cfl is None:
            self.cfl = DEFAULT_CFL[d]
        if self.cfl <= 0:
            raise ValueError("cfl must be positive")
        if self.reference is not None:
            self.reference = np.asarray(self.reference, dtype=float).reshape(-1).copy()

    # -- static pieces -----------------------------------------------------

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def n_mu(self) -> int:
        return self.grid.dim + 1

    @property
    def conservative(self) -> bool:
        return abs(self.source_coefficient) < 1e-14

    @property
    def source_coefficient(self) -> float:
        """``1 - d(p-1)``: coefficient of the zero-order scaling source."""
        return 1.0 - self.dim * (self.p - 1.0)

    @property
    def weights(self) -> float:
        """Quadrature weight of every cell (uniform grid)."""
        return self.grid.cell_volume

    @cached_property
    def P(self):
        return diffusion_matrix(self.grid, self.nu)

    @cached_property
    def _face_xi(self):
        return [face_points(self.grid, j) for j in range(self.dim)]

    @cached_property
    def fluxes(self) -> dict:
        return flux_family(self)

    @cached_property
    def Psi(self) -> np.ndarray | None:
        """Weighted reference generators ``W H1(u_ref)``; computed once."""
        if self.reference is None:
            return None
        H1 = self.bundle(self.reference, 0.0).H1
        return self.weights * H1

    @cached_property
    def psi_target(self) -> np.ndarray | None:
        if self.Psi is None:
            return None
        return self.Psi.T @ self.reference

    def set_reference(self, reference) -> None:
        self.reference = np.asarray(reference, dtype=float).reshape(-1).copy()
        for key in ("Psi", "psi_target"):
            self.__dict__.pop(key, None)

    def mass(self, v) -> float:
        return float(self.weights * np.sum(v))

    # -- operator assembly -------------------------------------------------

    def bundle(self, v, a_bound: float) -> OperatorBundle:
        """Assemble ``(H0, H1, P v)`` for the flattened field ``v``."""
        grid = self.grid
        u = np.asarray(v, dtype=float).reshape(grid.shape)
        d = self.dim
        H0 = np.zeros(grid.shape)
        H1 = np.zeros(grid.shape + (d + 1,))
        H1[..., 0] = -self.source_coefficient * u
        fl = self.fluxes
        for j in range(d):
            lim = face_limits(u, self.limiter, j)
            xi = self._face_xi[j]
            dx = grid.dx[j]
            H0 += interior_flux_difference(face_flux(fl[0, j], xi, lim.minus, lim.plus, a_bound), dx, j)
            H1[..., 0] += interior_flux_difference(face_flux(fl[1, j], xi, lim.minus, lim.plus, 0.0), dx, j)
            H1[..., 1 + j] = interior_flux_difference(face_flux(fl[2 + j, j], xi, lim.minus, lim.plus, 0.0), dx, j)
        H0 = H0.reshape(-1)
        H1 = H1.reshape(-1, d + 1)
        Pv = self.P @ u.reshape(-1)
        if not (np.all(np.isfinite(H0)) and np.all(np.isfinite(H1)) and np.all(np.isfinite(Pv))):
            raise NonFiniteError("non-finite operator assembly")
        return OperatorBundle(H0, H1, Pv)

    def closure_mu(self, V, bundle: OperatorBundle) -> np.ndarray:
        """Orthogonal closure: least-squares ``mu`` minimizing the weighted ``|F(V, mu)|``."""
        return _gram_solve(bundle.H1, bundle.mu_free_rhs(), self.weights)


def _gram_solve(H1, rhs, w) -> np.ndarray:
    gram = w * (H1.T @ H1)
    try:
        return solve_small(gram, w * (H1.T @ rhs), "Gram matrix H1^T W H1")
    except SingularSystemError:
        raise
    except np.linalg.LinAlgError as exc:  # pragma: no cover - solve_small screens this
        raise SingularSystemError(str(exc)) from exc


def flux_family(problem: FreezingProblem) -> dict:
    """Flux functions ``f_{i,j}`` keyed by ``(i, axis)`` plus the source under key ``"source"``.

    Family 0 is the Burgers flux (the only one carrying the central-scheme
    dissipation), family 1 the scaling generator, families ``2..d+1`` the
    shifts.
    """
    p = problem.p
    d = problem.dim
    out = {}
    for j, aj in enumerate(problem.a):
        out[0, j] = FluxFunction(lambda xi, u, aj=aj: (aj / p) * np.abs(u) ** p, True, f"burgers[{j}]")
        out[1, j] = FluxFunction(lambda xi, u, j=j: -(p - 1.0) * xi[j] * u, False, f"scale[{j}]")
        for i in range(d):
            if i == j:
                out[2 + i, j] = FluxFunction(lambda xi, u: -np.asarray(u, dtype=float), False, f"shift{i}[{j}]")
            else:
                out[2 + i, j] = FluxFunction(lambda xi, u: np.zeros_like(np.asarray(u, dtype=float)), False, "zero")
    c = problem.source_coefficient
    out["source"] = lambda u: c * np.asarray(u, dtype=float)
    return out


def assemble_operators(problem: FreezingProblem, v, a_bound: float | None = None) -> OperatorBundle:
    if a_bound is None:
        a_bound = wave_speed_bound(problem, v, np.zeros(problem.n_mu))
    return problem.bundle(v, a_bound)


def freezing_rhs(problem: FreezingProblem, v, mu, a_bound: float | None = None) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (problem.n_mu,):
        raise ValueError(f"mu must have length {problem.n_mu}, got shape {mu.shape}")
    if a_bound is None:
        a_bound = wave_speed_bound(problem, v, mu)
    return problem.bundle(v, a_bound).rhs(mu)


def wave_speed_bound(problem: FreezingProblem, v, mu) -> float:
    """Rough global bound on the characteristic speeds of all hyperbolic terms.

    For ``p = 2`` in 1D this is ``sup|v| + |mu_1| max|xi| + |mu_2|``, for
    ``p = 3/2`` in 2D ``sup sqrt|v| + max_j(|mu_1| max|xi_j| + |mu_{j+1}|)``.
    """
    v = np.asarray(v, dtype=float)
    mu = np.asarray(mu, dtype=float)
    vmax = float(np.max(np.abs(v))) if v.size else 0.0
    burgers = max(abs(x) for x in problem.a) * vmax ** (problem.p - 1.0)
    scale = max(1.0, problem.p - 1.0)
    group = max(
        abs(mu[0]) * scale * problem.grid.max_abs_coord(j) + abs(mu[1 + j]) for j in range(problem.dim)
    )
    return float(burgers + group)


def phase_residual(problem: FreezingProblem, v, mu=None, a_bound: float | None = None) -> np.ndarray:
    """Discrete phase condition, length ``d + 1``.

    Orthogonal: ``sum_k vol * (-H1_k) * F_k(v, mu)``; fixed: the same template
    with ``H1`` of the reference field and ``v - u_ref`` in place of ``F``.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    if problem.phase == "fixed":
        if problem.reference is None:
            raise ValueError("fixed phase condition needs a reference field")
        return -(problem.Psi.T @ (v - problem.reference))
    if problem.phase == "none":
        return np.zeros(problem.n_mu)
    if mu is None:
        raise ValueError("orthogonal phase residual needs mu")
    mu = np.asarray(mu, dtype=float)
    if a_bound is None:
        a_bound = wave_speed_bound(problem, v, mu)
    b = problem.bundle(v, a_bound)
    return -problem.weights * (b.H1.T @ b.rhs(mu))


def solve_mu_orthogonal(problem: FreezingProblem, v, a_bound: float | None = None) -> np.ndarray:
    """``mu = (H1^T W H1)^{-1} H1^T W (P v - H0)``.

    The wave-speed bound entering ``H0`` defaults to the one at ``mu = 0``.
    """
    if a_bound is None:
        a_bound = wave_speed_bound(problem, v, np.zeros(problem.n_mu))
    b = problem.bundle(v, a_bound)
    return problem.closure_mu(v, b)


def consistent_initialize(problem: FreezingProblem, v, a_bound: float | None = None, return_bound: bool = False):
    """Initial ``mu`` consistent with the (hidden) algebraic constraint at ``v``.

    For the fixed phase this solves ``Psi^T F(v, mu) = 0``.  ``a_bound`` defaults
    to the fixed point of ``a -> bound(v, mu(a))``, since the bound itself
    depends on ``mu``.  With ``return_bound`` the pair ``(mu, a_bound)`` is
    returned.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    if problem.phase == "none":
        mu = np.zeros(problem.n_mu)
        a = wave_speed_bound(problem, v, mu) if a_bound is None else a_bound
        return (mu, a) if return_bound else mu

    def solve(a):
        b = problem.bundle(v, a)
        if problem.phase == "orthogonal":
            return problem.closure_mu(v, b)
        M = problem.Psi.T @ b.H1
        return solve_small(M, problem.Psi.T @ b.mu_free_rhs(), "Psi^T H1")

    if a_bound is not None:
        mu = solve(a_bound)
        return (mu, a_bound) if return_bound else mu
    a0 = wave_speed_bound(problem, v, np.zeros(problem.n_mu))
    mu0 = solve(a0)
    a, mu, step = a0, mu0, np.inf
    for _ in range(INIT_SWEEPS):
        a_new = wave_speed_bound(problem, v, mu)
        change = abs(a_new - a)
        if change <= 1e-13 * max(a, 1.0):
            break
        if change > step:
            # numerical dissipation dominates mu (grid too coarse): no fixed point
            log.warning("wave-speed bound does not settle during initialization (%.3e -> %.3e); "
                        "using the bound at mu = 0", a, a_new)
            mu, a = mu0, a0
            break
        a, step = a_new, change
        mu = solve(a)
    return (mu, a) if return_bound else mu
