"""Half-explicit IMEX Runge-Kutta integration of semi-explicit DAEs

    V' = P V - H1(V) mu - H0(V) + G(V)
    0  = H1(V)^T W (P V - H1(V) mu - H0(V) + G(V))    (orthogonal, index 1)
    0  = Psi^T V - Psi^T U_ref                         (fixed, index 2)

together with the group and time reconstruction ``g' = r_alg(g, mu)``,
``t' = r_time(g)``.  The hyperbolic terms go through the explicit tableau and
``P`` through the diagonally implicit one.

A *system* is any object offering ``P`` (matrix), ``weights`` (scalar),
``phase`` (``orthogonal``/``index1``/``fixed``/``none``), ``n_mu``, ``p``,
``bundle(V, a_bound) -> OperatorBundle`` and, depending on the phase,
``closure_mu(V, bundle)`` or ``Psi``/``psi_target``.  :class:`FreezingProblem`
is one; the manufactured DAEs in :mod:`freezing_burgers.verification` are others.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .errors import FreezingError, IntegrationError, NonFiniteError, StepSizeError
from .freezing import FreezingProblem, consistent_initialize, wave_speed_bound
from .linear_solvers import factor_implicit, prepare_operator, solve_implicit, solve_small

log = logging.getLogger(__name__)

DT_FLOOR = 1e-12
SPEED_BLOWUP = 1e6  # wave-speed growth over the initial bound treated as divergence of mu
SPEED_FLOOR = 1e-14
STATIONARY_TOL = 1e-10
STATIONARY_STEPS = 10


@dataclass(frozen=True)
class ButcherPair:
    """Explicit tableau ``(c, A)`` and diagonally implicit ``(c, Ahat)``; the
    weights are the last rows."""

    c: np.ndarray
    A: np.ndarray
    Ahat: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        Ahat = np.asarray(self.Ahat, dtype=float)
        c = np.asarray(self.c, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n) or Ahat.shape != (n, n) or c.shape != (n,):
            raise ValueError("tableau shapes do not match")
        if np.any(np.triu(A) != 0):
            raise ValueError("explicit tableau must be strictly lower triangular")
        if np.any(np.triu(Ahat, 1) != 0):
            raise ValueError("implicit tableau must be lower triangular")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Ahat", Ahat)
        object.__setattr__(self, "c", c)

    @property
    def s(self) -> int:
        return self.A.shape[0] - 1

    @property
    def b(self) -> np.ndarray:
        return self.A[-1]

    @property
    def bhat(self) -> np.ndarray:
        return self.Ahat[-1]


# Heun's method coupled with Crank-Nicolson.
HEUN_CN = ButcherPair(
    c=np.array([0.0, 1.0, 1.0]),
    A=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.5, 0.0]]),
    Ahat=np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5]]),
)


@dataclass
class FreezingState:
    v: np.ndarray
    mu: np.ndarray
    alpha: float = 1.0
    b: np.ndarray = field(default_factory=lambda: np.zeros(0))
    t: float = 0.0
    tau: float = 0.0
    dtau: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass
class StepRecord:
    step: int
    tau: float
    dtau: float
    t: float
    alpha: float
    b: tuple
    mu: tuple
    res_phase: float
    mass: float
    rhs_norm: float


@dataclass
class StageResult:
    V: np.ndarray
    mu_stages: list
    mu_next: np.ndarray
    bundle_end: object = None


class ImplicitCache:
    """Factorizations of ``I - shift * P`` for the current step size only."""

    def __init__(self, P, method: str = "auto", check_spd: bool = True):
        self.P = prepare_operator(P, check_spd) if method in ("auto", "tridiagonal") else P
        self.method = method
        self.check_spd = check_spd
        self._h = None
        self._factors = {}
        self.n_factorizations = 0

    def get(self, h: float, a_coeff: float):
        if h != self._h:
            self._factors.clear()
            self._h = h
        key = a_coeff
        if key not in self._factors:
            self._factors[key] = factor_implicit(self.P, h, a_coeff, self.method, self.check_spd)
            self.n_factorizations += 1
        return self._factors[key]


def stage_solve(system, factor, R1, V_prev, bundle_prev, h_a: float):
    """Solve one stage for ``(V_i, mu_{i-1})`` by block elimination.

    ``bundle_prev`` is the operator bundle at ``V_prev = V_{i-1}`` and ``h_a`` is
    ``h * a_{i,i-1}``.  Index-1 phases first solve the small closure system for
    ``mu_{i-1}`` and then one large system; the fixed phase needs ``d + 2``
    large solves and one small one.
    """
    phase = system.phase
    if phase == "none":
        mu = np.zeros(system.n_mu)
        return solve_implicit(factor, R1), mu
    if phase in ("orthogonal", "index1"):
        mu = np.asarray(system.closure_mu(V_prev, bundle_prev), dtype=float)
        return solve_implicit(factor, R1 - h_a * (bundle_prev.H1 @ mu)), mu
    if phase == "fixed":
        Psi = system.Psi
        A_star = solve_implicit(factor, h_a * bundle_prev.H1)
        A_star = A_star.reshape(R1.size, -1)
        V_star = solve_implicit(factor, R1)
        mu = solve_small(Psi.T @ A_star, Psi.T @ V_star - system.psi_target, "Psi^T A*")
        return V_star - A_star @ mu, mu
    raise ValueError(f"unknown phase {phase!r}")


def imex_stages(system, V0, h: float, a_bound: float = 0.0, tableau: ButcherPair = HEUN_CN,
                cache: ImplicitCache | None = None, bundle0=None) -> StageResult:
    """One step of the DAE part: stage values and the new ``mu``."""
    A, Ahat, s = tableau.A, tableau.Ahat, tableau.s
    if cache is None:
        cache = ImplicitCache(system.P)
    V0 = np.asarray(V0, dtype=float)
    bundles = [bundle0 if bundle0 is not None else system.bundle(V0, a_bound)]
    Vs = [V0]
    mus = []
    for i in range(1, s + 1):
        R1 = V0.copy()
        for nu in range(i):
            bnd = bundles[nu]
            if A[i, nu]:
                explicit = bnd.H0 if bnd.G is None else bnd.H0 - bnd.G
                if nu <= i - 2:
                    explicit = explicit + bnd.H1 @ mus[nu]
                R1 -= h * A[i, nu] * explicit
            if Ahat[i, nu]:
                R1 += h * Ahat[i, nu] * bnd.Pv
        factor = cache.get(h, Ahat[i, i])
        Vi, mu = stage_solve(system, factor, R1, Vs[i - 1], bundles[i - 1], h * A[i, i - 1])
        if not np.all(np.isfinite(Vi)):
            raise NonFiniteError(f"non-finite value in stage {i}")
        Vs.append(Vi)
        mus.append(mu)
        if i < s:
            bundles.append(system.bundle(Vi, a_bound))
    bundle_end = None
    if system.phase in ("orthogonal", "index1"):
        bundle_end = system.bundle(Vs[-1], a_bound)
        mu_next = np.asarray(system.closure_mu(Vs[-1], bundle_end), dtype=float)
    else:
        mu_next = mus[-1]
    return StageResult(Vs[-1], mus, mu_next, bundle_end)


def r_alg(alpha: float, mu, p: float) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    return np.concatenate([[alpha * mu[0]], alpha ** (p - 1.0) * mu[1:]])


def r_time(alpha: float, p: float) -> float:
    return alpha ** (2.0 * p - 2.0)


def group_time_step(alpha: float, b, t: float, mu_stages, h: float, p: float,
                    tableau: ButcherPair = HEUN_CN) -> tuple[float, np.ndarray, float]:
    """Explicit-tableau update of ``g = (alpha, b)`` and ``t`` from the stage ``mu``."""
    A, s = tableau.A, tableau.s
    g0 = np.concatenate([[alpha], np.asarray(b, dtype=float)])
    gs = [g0]
    ts = [t]
    for i in range(1, s + 1):
        g = g0.copy()
        ti = t
        for nu in range(i):
            if A[i, nu]:
                g += h * A[i, nu] * r_alg(gs[nu][0], mu_stages[nu], p)
                ti += h * A[i, nu] * r_time(gs[nu][0], p)
        gs.append(g)
        ts.append(ti)
    g = gs[-1]
    if not g[0] > 0:
        raise StepSizeError(f"alpha became non-positive ({g[0]:.3e}); step size {h:.3e} too large")
    return float(g[0]), g[1:], float(ts[-1])


def imex_step(system, state: FreezingState, h: float, a_bound: float = 0.0,
              tableau: ButcherPair = HEUN_CN, cache: ImplicitCache | None = None) -> FreezingState:
    """Advance the full state (``v``, ``mu``, ``alpha``, ``b``, ``t``, ``tau``) by ``h``."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    res = imex_stages(system, state.v, h, a_bound, tableau, cache)
    alpha, b, t = group_time_step(state.alpha, state.b, state.t, res.mu_stages, h, system.p, tableau)
    return FreezingState(v=res.V, mu=res.mu_next, alpha=alpha, b=b, t=t, tau=state.tau + h, dtau=h)


def cfl_target(problem: FreezingProblem, a_bound: float) -> float:
    return problem.cfl * min(problem.grid.dx) / max(a_bound, SPEED_FLOOR)


def adapt_timestep(problem: FreezingProblem, state: FreezingState, a_bound: float | None = None,
                   policy: str = "hysteresis") -> float:
    """CFL step size.

    ``hysteresis`` keeps the current step unless it violates the CFL bound
    (then it drops to the bound) or the bound allows twice the step (then it
    doubles).  ``every-step`` always returns the bound.
    """
    if a_bound is None:
        a_bound = wave_speed_bound(problem, state.v, state.mu)
    target = cfl_target(problem, a_bound)
    dtau = state.dtau
    if policy == "every-step" or not dtau or dtau > target:
        return target
    if target >= 2.0 * dtau:
        return 2.0 * dtau
    return dtau


def _phase_error(problem, v, bundle, mu) -> float:
    """Relative phase-condition residual.

    Orthogonal: ``max|H1^T F|`` over ``|H1| (|P v| + |H0| + |H1 mu|)``, i.e.
    relative to the terms that make up ``F`` (near a steady state ``F`` itself
    is roundoff and would make ``|F|`` a meaningless scale).  Fixed:
    ``max|Psi^T v - Psi^T u_ref|`` over ``|Psi| |u_ref|``.
    """
    if problem.phase == "none":
        return 0.0
    if problem.phase == "fixed":
        num = np.max(np.abs(problem.Psi.T @ v - problem.psi_target))
        den = np.linalg.norm(problem.Psi) * np.linalg.norm(problem.reference)
    else:
        H1mu = bundle.H1 @ mu
        F = bundle.Pv - bundle.H0 - H1mu
        if bundle.G is not None:
            F = F + bundle.G
        num = np.max(np.abs(bundle.H1.T @ F))
        den = np.linalg.norm(bundle.H1) * (np.linalg.norm(bundle.Pv) + np.linalg.norm(bundle.H0)
                                          + np.linalg.norm(H1mu))
    return float(num / den) if den > 0 else float(num)


@dataclass
class RunResult:
    state: FreezingState
    records: list
    n_steps: int
    reason: str
    n_factorizations: int = 0


def integrate(problem: FreezingProblem, v0, tau_end: float, callbacks: Iterable[Callable] = (),
              tableau: ButcherPair = HEUN_CN, policy: str = "hysteresis", stop_when_stationary: bool = True,
              keep_records: bool = True, max_steps: int | None = None, solver: str = "auto") -> RunResult:
    """Run the freezing system from ``v0`` to ``tau_end``.

    Each accepted step (and the initial state, as step 0) is reported to every
    callback as a :class:`StepRecord`.  The last step is shortened to land on
    ``tau_end``.
    """
    if tau_end < 0:
        raise ValueError("tau_end must be non-negative")
    v = np.asarray(v0, dtype=float).reshape(-1).copy()
    d = problem.dim
    mu, a0 = consistent_initialize(problem, v, return_bound=True)
    state = FreezingState(v=v, mu=mu, alpha=1.0, b=np.zeros(d), t=0.0, tau=0.0, dtau=0.0)
    cache = ImplicitCache(problem.P, solver)
    records = []
    callbacks = list(callbacks)

    def emit(step, st, bundle):
        F = bundle.rhs(st.mu)
        rec = StepRecord(
            step=step, tau=st.tau, dtau=st.dtau, t=st.t, alpha=st.alpha, b=tuple(st.b), mu=tuple(st.mu),
            res_phase=_phase_error(problem, st.v, bundle, st.mu), mass=problem.mass(st.v),
            rhs_norm=float(np.max(np.abs(F))),
        )
        if keep_records:
            records.append(rec)
        for cb in callbacks:
            cb(rec, st)
        return rec

    emit(0, state, problem.bundle(v, a0))
    step = 0
    quiet = 0
    reason = "tau_end"
    while state.tau < tau_end * (1 - 1e-14):
        if max_steps is not None and step >= max_steps:
            reason = "max_steps"
            break
        a = wave_speed_bound(problem, state.v, state.mu)
        if a > SPEED_BLOWUP * max(a0, 1.0):
            raise IntegrationError(f"wave speed {a:.3e} exceeds {SPEED_BLOWUP:g} x initial bound {a0:.3e} "
                                   "(algebraic variables diverge)", step, state.tau)
        dtau = adapt_timestep(problem, state, a, policy)
        if dtau < DT_FLOOR:
            raise IntegrationError(f"step size {dtau:.3e} below floor {DT_FLOOR:g} (wave speed {a:.3e})",
                                   step, state.tau)
        h = min(dtau, tau_end - state.tau)
        try:
            res = imex_stages(problem, state.v, h, a, tableau, cache)
            alpha, b, t = group_time_step(state.alpha, state.b, state.t, res.mu_stages, h, problem.p, tableau)
            if not (np.all(np.isfinite(res.mu_next)) and np.isfinite(alpha) and np.isfinite(t)):
                raise NonFiniteError("non-finite algebraic or group variables")
        except FreezingError as exc:
            raise IntegrationError(f"{type(exc).__name__}: {exc}", step + 1, state.tau) from exc
        tau = tau_end if h < dtau or abs(state.tau + h - tau_end) < 1e-14 * max(1.0, tau_end) else state.tau + h
        state = FreezingState(v=res.V, mu=res.mu_next, alpha=alpha, b=b, t=t, tau=tau, dtau=dtau)
        step += 1
        bundle = res.bundle_end if res.bundle_end is not None else problem.bundle(state.v, a)
        rec = emit(step, replace(state, dtau=h), bundle)
        if stop_when_stationary:
            vmax = float(np.max(np.abs(state.v)))
            quiet = quiet + 1 if rec.rhs_norm <= STATIONARY_TOL * (1.0 + vmax) else 0
            if quiet >= STATIONARY_STEPS:
                reason = "stationary"
                break
    log.debug("integrate: %d steps, reason=%s", step, reason)
    return RunResult(state, records, step, reason, cache.n_factorizations)
