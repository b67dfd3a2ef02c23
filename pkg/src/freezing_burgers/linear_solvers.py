"""Factorizations of ``I - h*a*P`` and small dense solves.

``P`` is the (negative semi-definite, symmetric) no-flux diffusion matrix, so
``I - h*a*P`` is SPD with all eigenvalues >= 1.  Tridiagonal matrices go
through LAPACK ``gttrf``/``gttrs``, other sparse matrices through SuperLU (or
conjugate gradients above ``CG_THRESHOLD`` unknowns), dense ones through LU.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotSPDError, SingularSystemError, StaleFactorError

log = logging.getLogger(__name__)

CG_THRESHOLD = 100_000
CG_RTOL = 1e-12
SMALL_COND_LIMIT = 1e14


@dataclass
class ImplicitFactor:
    h: float
    a_coeff: float
    kind: str
    n: int
    data: Any = field(repr=False, default=None)
    matrix: Any = field(repr=False, default=None)

    @property
    def shift(self) -> float:
        return self.h * self.a_coeff


def _is_tridiagonal(P) -> bool:
    coo = P.tocoo()
    return bool(np.all(np.abs(coo.row - coo.col) <= 1))


def _check_spd(M) -> None:
    """Symmetry plus a Gershgorin bound ``lambda_min >= 1``."""
    if sp.issparse(M):
        asym = abs(M - M.T)
        asym = asym.max() if asym.nnz else 0.0
        diag = M.diagonal()
        off = np.asarray(abs(M).sum(axis=1)).ravel() - np.abs(diag)
    else:
        asym = np.max(np.abs(M - M.T)) if M.size else 0.0
        diag = np.diag(M)
        off = np.abs(M).sum(axis=1) - np.abs(diag)
    scale = max(1.0, float(np.max(np.abs(diag)))) if diag.size else 1.0
    if asym > 1e-12 * scale:
        raise NotSPDError(f"implicit matrix is not symmetric (max asymmetry {asym:.3e})")
    if np.any(diag - off < 1.0 - 1e-12 * scale):
        raise NotSPDError("implicit matrix fails the Gershgorin bound lambda_min >= 1")


@dataclass
class PreparedOperator:
    """``P`` analysed once: structure, diagonals and the SPD screen.

    ``I - s P`` with ``s >= 0`` passes the Gershgorin test for every ``s`` iff
    ``P`` is symmetric with non-positive diagonal and ``-P`` weakly diagonally
    dominant, so the check does not have to be repeated per step size.
    """

    P: Any
    tridiagonal: bool
    diagonals: tuple | None
    spd_checked: bool


def prepare_operator(P, check_spd: bool = True) -> PreparedOperator:
    if isinstance(P, PreparedOperator):
        return P
    tri = sp.issparse(P) and _is_tridiagonal(P)
    diags = None
    if tri:
        Pc = sp.csr_matrix(P)
        diags = (Pc.diagonal(-1).copy(), Pc.diagonal(0).copy(), Pc.diagonal(1).copy())
    if check_spd:
        if sp.issparse(P):
            diag = P.diagonal()
            off = np.asarray(abs(P).sum(axis=1)).ravel() - np.abs(diag)
            asym = abs(P - P.T)
            asym = asym.max() if asym.nnz else 0.0
        else:
            P = np.asarray(P, dtype=float)
            diag = np.diag(P)
            off = np.abs(P).sum(axis=1) - np.abs(diag)
            asym = np.max(np.abs(P - P.T)) if P.size else 0.0
        scale = max(1.0, float(np.max(np.abs(diag)))) if diag.size else 1.0
        if asym > 1e-12 * scale:
            raise NotSPDError(f"operator is not symmetric (max asymmetry {asym:.3e})")
        if np.any(diag > 0) or np.any(-diag - off < -1e-12 * scale):
            raise NotSPDError("I - s*P fails the Gershgorin bound lambda_min >= 1")
    return PreparedOperator(P, tri, diags, check_spd)


def implicit_matrix(P, shift: float):
    if sp.issparse(P):
        return (sp.identity(P.shape[0], format="csr") - shift * P).tocsr()
    P = np.asarray(P, dtype=float)
    return np.eye(P.shape[0]) - shift * P


def factor_implicit(P, h: float, a_coeff: float, method: str = "auto", check_spd: bool = True) -> ImplicitFactor:
    """Factor ``I - h * a_coeff * P``.

    ``method`` is one of ``auto``, ``tridiagonal``, ``splu``, ``cg``, ``dense``.
    Set ``check_spd=False`` for non-symmetric test operators.  ``P`` may be a
    :class:`PreparedOperator`, which skips the per-call analysis.
    """
    shift = h * a_coeff
    if shift < 0:
        raise ValueError("h * a_coeff must be non-negative")
    if isinstance(P, PreparedOperator):
        prep = P
        if prep.tridiagonal and method in ("auto", "tridiagonal"):
            lo, mid, up = prep.diagonals
            dl, d, du, du2, ipiv, info = sla.lapack.dgttrf(-shift * lo, 1.0 - shift * mid, -shift * up)
            if info != 0:
                raise SingularSystemError("tridiagonal factorization failed")
            return ImplicitFactor(h=h, a_coeff=a_coeff, kind="tridiagonal", n=mid.size,
                                  data=(dl, d, du, du2, ipiv))
        P = prep.P
        check_spd = check_spd and not prep.spd_checked
    M = implicit_matrix(P, shift)
    n = M.shape[0]
    if check_spd:
        _check_spd(M)
    if method == "auto":
        if not sp.issparse(M):
            method = "dense"
        elif _is_tridiagonal(M):
            method = "tridiagonal"
        elif n > CG_THRESHOLD:
            method = "cg"
        else:
            method = "splu"

    if method == "tridiagonal":
        M = sp.csr_matrix(M)
        dl, d, du = M.diagonal(-1), M.diagonal(0), M.diagonal(1)
        dl, d, du, du2, ipiv, info = sla.lapack.dgttrf(dl, d, du)
        if info != 0:
            raise SingularSystemError("tridiagonal factorization failed")
        data = (dl, d, du, du2, ipiv)
    elif method == "splu":
        data = spla.splu(sp.csc_matrix(M))
    elif method == "cg":
        M = sp.csr_matrix(M)
        data = 1.0 / M.diagonal()  # Jacobi preconditioner
    elif method == "dense":
        M = M.toarray() if sp.issparse(M) else M
        data = sla.lu_factor(M)
    else:
        raise ValueError(f"unknown factorization method {method!r}")
    return ImplicitFactor(h=h, a_coeff=a_coeff, kind=method, n=n, data=data, matrix=M)


def solve_implicit(factor: ImplicitFactor, rhs, h: float | None = None) -> np.ndarray:
    """Solve ``(I - h*a*P) x = rhs``; ``rhs`` may hold several columns.

    Passing ``h`` checks that the factor was built for that step size.
    """
    if h is not None and h != factor.h:
        raise StaleFactorError(f"factor built for h={factor.h}, used with h={h}")
    rhs = np.asarray(rhs, dtype=float)
    if factor.kind == "tridiagonal":
        dl, d, du, du2, ipiv = factor.data
        x, info = sla.lapack.dgttrs(dl, d, du, du2, ipiv, rhs)
        if info != 0:
            raise SingularSystemError("tridiagonal solve failed")
        return x
    if factor.kind == "splu":
        return factor.data.solve(rhs)
    if factor.kind == "dense":
        return sla.lu_solve(factor.data, rhs)
    # cg
    if rhs.ndim == 2:
        return np.column_stack([solve_implicit(factor, c) for c in rhs.T])
    M = factor.matrix
    precond = spla.LinearOperator(M.shape, matvec=lambda r: factor.data * r)
    x, info = spla.cg(M, rhs, rtol=CG_RTOL, atol=0.0, M=precond, maxiter=10 * factor.n)
    if info != 0:
        raise SingularSystemError(f"conjugate gradients did not converge (info={info})")
    return x


def condition_estimate(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape == (1, 1):
        return 1.0 if M[0, 0] != 0 and np.isfinite(M[0, 0]) else float("inf")
    with np.errstate(all="ignore"):
        try:
            return float(np.linalg.cond(M))
        except np.linalg.LinAlgError:
            return float("inf")


def solve_small(M, rhs, what: str = "small system") -> np.ndarray:
    """Dense LU with partial pivoting for the ``(d+1) x (d+1)`` systems."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    rhs = np.asarray(rhs, dtype=float)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{what}: matrix must be square, got {M.shape}")
    cond = condition_estimate(M)
    if not np.isfinite(cond) or cond > SMALL_COND_LIMIT:
        raise SingularSystemError(f"{what} is singular to working precision", cond)
    if cond > 1e8:
        log.debug("%s is ill-conditioned: cond=%.3e", what, cond)
    return np.linalg.solve(M, rhs)
