"""Manufactured semi-explicit DAEs for measuring the temporal order of the
half-explicit IMEX scheme, independent of the PDE discretization.

Each :class:`ManufacturedDAE` speaks the same *system* protocol as
:class:`~freezing_burgers.freezing.FreezingProblem`, so it is integrated by
the very same stage solver.  Reference solutions are computed by the same
integrator at a 64 times smaller step.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .freezing import OperatorBundle
from .imex import HEUN_CN, ButcherPair, ImplicitCache, group_time_step, imex_stages
from .linear_solvers import condition_estimate, solve_small

REF_FACTOR = 64
COND_LIMIT = 1e12
ROUNDOFF = 1e-11


@dataclass
class ManufacturedDAE:
    """``V' = P V - H1(V) mu - H0(V)`` closed by an algebraic equation.

    ``phase="index1"`` closes with ``mu = closure(V)`` (the solved form of
    ``Psi(V, mu) = 0``, whose ``d Psi / d mu`` must be invertible);
    ``phase="fixed"`` with the linear constraint ``Psi^T V = psi_target``;
    ``phase="none"`` has no algebraic part.
    """

    name: str
    V0: np.ndarray
    P: np.ndarray
    H0: Callable
    H1: Callable
    phase: str = "index1"
    closure: Callable | None = None
    dmu_psi: Callable | None = None
    Psi: np.ndarray | None = None
    psi_target: np.ndarray | None = None
    n_mu: int = 1
    p: float = 2.0
    weights: float = 1.0
    exact: Callable | None = None
    conditions: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.V0 = np.asarray(self.V0, dtype=float)
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if self.phase == "index1" and self.closure is None:
            raise ValueError("index-1 system needs a closure")
        if self.phase == "fixed":
            if self.Psi is None:
                raise ValueError("fixed-phase system needs Psi")
            self.Psi = np.asarray(self.Psi, dtype=float).reshape(self.V0.size, self.n_mu)
            if self.psi_target is None:
                self.psi_target = self.Psi.T @ self.V0
            self.psi_target = np.asarray(self.psi_target, dtype=float)

    @property
    def m(self) -> int:
        return self.V0.size

    def bundle(self, V, a_bound: float = 0.0) -> OperatorBundle:
        V = np.asarray(V, dtype=float)
        H1 = np.asarray(self.H1(V), dtype=float).reshape(self.m, self.n_mu)
        return OperatorBundle(np.asarray(self.H0(V), dtype=float), H1, self.P @ V)

    def monitor(self, V) -> None:
        """Record the condition of the matrix that must stay invertible."""
        if self.phase == "index1" and self.dmu_psi is not None:
            self.conditions.append(condition_estimate(self.dmu_psi(V)))
        elif self.phase == "fixed":
            self.conditions.append(condition_estimate(self.Psi.T @ self.bundle(V).H1))

    def closure_mu(self, V, bundle) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.closure(V), dtype=float))

    def consistent_mu(self, V=None) -> np.ndarray:
        V = self.V0 if V is None else np.asarray(V, dtype=float)
        if self.phase == "none":
            return np.zeros(self.n_mu)
        b = self.bundle(V)
        if self.phase == "index1":
            return self.closure_mu(V, b)
        # hidden constraint d/dt Psi^T V = Psi^T F(V, mu) = 0
        M = self.Psi.T @ b.H1
        return solve_small(M, self.Psi.T @ b.mu_free_rhs(), "Psi^T H1")

    def algebraic_residual(self, V, mu) -> float:
        """Residual of the (hidden, for index 2) algebraic equation at ``(V, mu)``."""
        V = np.asarray(V, dtype=float)
        if self.phase == "index1":
            return float(np.max(np.abs(np.atleast_1d(mu) - self.closure_mu(V, None))))
        if self.phase == "fixed":
            F = self.bundle(V).rhs(mu)
            return float(np.max(np.abs(self.Psi.T @ F)))
        return 0.0


@dataclass
class Trajectory:
    V: np.ndarray
    mu: np.ndarray
    g: np.ndarray
    t: float
    n_steps: int


def integrate_dae(dae: ManufacturedDAE, h: float, horizon: float, tableau: ButcherPair = HEUN_CN) -> Trajectory:
    """Fixed-step integration of ``dae`` (plus ``alpha, b, t``) to ``horizon``."""
    n = int(round(horizon / h))
    if n < 1 or abs(n * h - horizon) > 1e-9 * horizon:
        raise ValueError(f"horizon {horizon} is not a multiple of h={h}")
    cache = ImplicitCache(dae.P, method="dense", check_spd=False)
    V = dae.V0.copy()
    mu = dae.consistent_mu(V)
    alpha, b, t = 1.0, np.zeros(dae.n_mu - 1), 0.0
    for _ in range(n):
        dae.monitor(V)
        res = imex_stages(dae, V, h, 0.0, tableau, cache)
        alpha, b, t = group_time_step(alpha, b, t, res.mu_stages, h, dae.p, tableau)
        V, mu = res.V, res.mu_next
    return Trajectory(V, np.atleast_1d(mu), np.concatenate([[alpha], b]), t, n)


def fit_order(h, err) -> float:
    """Least-squares slope of ``log(err)`` against ``log(h)``."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if h.size < 2 or h.size != err.size:
        raise ValueError("need at least two (h, error) pairs for a slope")
    if np.any(~np.isfinite(err)) or np.any(err <= 0):
        raise ValueError(f"slope undefined for errors {err.tolist()}")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


@dataclass
class OrderStudy:
    h: list
    errors: dict
    slopes: dict

    def table(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["h", "err_V", "err_mu", "err_g", "err_t"])
        for k, h in enumerate(self.h):
            w.writerow([f"{h:.17g}"] + [f"{self.errors[key][k]:.17g}" for key in ("V", "mu", "g", "t")])
        return buf.getvalue()


def order_study(dae: ManufacturedDAE, h_list, horizon: float = 1.0, tableau: ButcherPair = HEUN_CN) -> OrderStudy:
    """Errors at ``horizon`` against a run with step ``min(h_list) / 64`` and
    their fitted orders for ``V``, ``mu``, ``g = (alpha, b)`` and ``t``.

    Variable classes whose error stays at roundoff level (e.g. ``mu`` of a
    pure ODE) get slope ``nan``.
    """
    h_list = [float(h) for h in h_list]
    if len(h_list) < 2 or any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise ValueError("h_list must be strictly decreasing with at least two entries")
    ref = integrate_dae(dae, min(h_list) / REF_FACTOR, horizon, tableau)
    if dae.exact is not None:
        ref.V = np.asarray(dae.exact(horizon), dtype=float)
    errors = {"V": [], "mu": [], "g": [], "t": []}
    for h in h_list:
        tr = integrate_dae(dae, h, horizon, tableau)
        errors["V"].append(float(np.max(np.abs(tr.V - ref.V))))
        errors["mu"].append(float(np.max(np.abs(tr.mu - ref.mu))))
        errors["g"].append(float(np.max(np.abs(tr.g - ref.g))))
        errors["t"].append(abs(tr.t - ref.t))
    if dae.conditions and max(dae.conditions) > COND_LIMIT:
        raise ValueError(f"{dae.name}: algebraic part lost invertibility (cond {max(dae.conditions):.3e})")
    scale = {"V": np.max(np.abs(ref.V)), "mu": np.max(np.abs(ref.mu)), "g": np.max(np.abs(ref.g)), "t": abs(ref.t)}
    slopes = {}
    for key, e in errors.items():
        # errors at roundoff level carry no order information
        exact = max(e) <= ROUNDOFF * (1.0 + scale[key])
        slopes[key] = float("nan") if exact else fit_order(h_list, e)
    return OrderStudy(h_list, errors, slopes)


# -- the manufactured examples ----------------------------------------------


def index1_example(v0: float = 0.5) -> ManufacturedDAE:
    """``V' = -V + mu`` with ``0 = mu - V^2``."""
    return ManufacturedDAE(
        name="index1",
        V0=np.array([v0]),
        P=np.array([[-1.0]]),
        H0=lambda V: np.zeros(1),
        H1=lambda V: np.array([[-1.0]]),
        phase="index1",
        closure=lambda V: V**2,
        dmu_psi=lambda V: np.eye(1),
    )


def index2_example(v0=(0.3, 1.0)) -> ManufacturedDAE:
    """``V' = P V - H0(V) + mu e_1`` with ``0 = V_1 - V_1(0)``.

    The explicit part couples the nonlinearity into both components so the
    hidden constraint ties ``mu`` to ``V_2`` nonlinearly.
    """
    return ManufacturedDAE(
        name="index2",
        V0=np.asarray(v0, dtype=float),
        P=np.array([[-1.0, 1.0], [1.0, -1.0]]),
        H0=lambda V: np.array([V[1] ** 2, 0.5 * V[0] * V[1]]),
        H1=lambda V: np.array([[-1.0], [0.0]]),
        phase="fixed",
        Psi=np.array([[1.0], [0.0]]),
    )


def linear_example(lam: float = -2.0, v0: float = 1.0) -> ManufacturedDAE:
    """``V' = lam V``: pure diffusion part, no algebraic variable."""
    return ManufacturedDAE(
        name="linear",
        V0=np.array([v0]),
        P=np.array([[lam]]),
        H0=lambda V: np.zeros(1),
        H1=lambda V: np.zeros((1, 1)),
        phase="none",
        exact=lambda T: np.array([v0 * np.exp(lam * T)]),
    )


EXAMPLES = {"index1": index1_example, "index2": index2_example, "linear": linear_example}
DEFAULT_H = (0.1, 0.05, 0.025, 0.0125)
