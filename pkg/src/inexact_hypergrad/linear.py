"""Matrix-free solvers for the SPD system ``A q = rhs``.

CG is the default.  GD and HB minimize the quadratic
``Phi(q) = q.A q / 2 - rhs.q`` whose gradient is the residual; started from
q = 0 they reproduce the adjoint recursions of inexact reverse-mode AD.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (ContractViolation, CurvatureConstants, DivergenceError,
                   SpdViolationError)
from .lower import (DIVERGENCE_NORM, BoundValue, Method, StoppingRule,
                    optimal_params, rate_constant)

LINEAR_METHODS = (Method.CG, Method.GD, Method.HB)


@dataclass(frozen=True)
class SpdSystem:
    matvec: Callable[[np.ndarray], np.ndarray]
    rhs: np.ndarray
    constants: CurvatureConstants


@dataclass
class LinearSolveReport:
    """Result of :func:`solve_spd`.

    ``residual_norm`` always comes from a direct evaluation of
    ``|A q - rhs|``, never from a recursively updated residual.  ``matvecs``
    counts every product with A, including ones spent certifying the
    residual.
    """

    q_tilde: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    matvecs: int = 0


def _guard(q, it):
    if not np.all(np.isfinite(q)):
        raise DivergenceError(f"non-finite iterate at iteration {it}", it)
    if np.linalg.norm(q) > DIVERGENCE_NORM:
        raise DivergenceError(
            f"iterate norm exceeded {DIVERGENCE_NORM:g} at iteration {it}", it)


def solve_spd(sys: SpdSystem, q0=None, method=Method.CG,
              stop: Optional[StoppingRule] = None,
              callback: Optional[Callable[[int, np.ndarray], None]] = None,
              alpha: Optional[float] = None, beta: Optional[float] = None
              ) -> LinearSolveReport:
    """Approximately solve ``sys.matvec(q) = sys.rhs``.

    Parameters
    ----------
    q0 : array, optional
        Starting point; zero by default.
    method : {"CG", "GD", "HB"}
    stop : StoppingRule
        ``tolerance`` stops once the true residual norm is at most ``eps``.
    callback : callable, optional
        ``callback(k, q)`` after every iteration k = 1, 2, ...
    alpha, beta : float, optional
        Override the optimal GD/HB parameters derived from ``sys.constants``.
    """
    method = Method.parse(method)
    if method not in LINEAR_METHODS:
        raise ContractViolation(f"{method.value} is not a linear solver")
    stop = stop or StoppingRule.tolerance(1e-10)
    b = np.asarray(sys.rhs, dtype=float)
    if q0 is None:
        q = np.zeros_like(b)
        r = -b  # A q - b at q = 0
        mv = 0
    else:
        q = np.array(q0, dtype=float)
        if q.shape != b.shape:
            raise ContractViolation("q0 and rhs shapes differ")
        if not np.all(np.isfinite(q)):
            raise ContractViolation("q0 must be finite")
        r = sys.matvec(q) - b
        mv = 1
    tol = stop.eps if stop.kind == "tolerance" else None
    cap = stop.cap
    rnorm = float(np.linalg.norm(r))
    if tol is not None and rnorm <= tol:
        return LinearSolveReport(q, rnorm, 0, True, mv)

    if method is Method.CG:
        return _cg(sys, q, r, mv, tol, cap, callback)

    if alpha is None or (method is Method.HB and beta is None):
        opt = optimal_params(method, sys.constants)
        alpha = opt.alpha if alpha is None else alpha
        beta = opt.beta if beta is None else beta
    if method is Method.GD:
        beta = 0.0
    q_prev = q.copy()
    it = 0
    converged = tol is None
    while it < cap:
        step = q - alpha * r
        if beta:
            step += beta * (q - q_prev)
        q_prev, q = q, step
        it += 1
        _guard(q, it)
        r = sys.matvec(q) - b
        mv += 1
        rnorm = float(np.linalg.norm(r))
        if callback is not None:
            callback(it, q)
        if tol is not None and rnorm <= tol:
            converged = True
            break
    return LinearSolveReport(q, rnorm, it, converged, mv)


def _cg(sys, q, r_pos, mv, tol, cap, callback):
    # Hestenes-Stiefel CG; r below is b - A q
    b = np.asarray(sys.rhs, dtype=float)
    r = -r_pos
    rr = float(r @ r)
    p = r.copy()
    it = 0
    converged = tol is None
    certified = None
    while it < cap:
        if rr == 0.0:
            # exact solution reached; further steps are undefined
            converged = True
            break
        Ap = sys.matvec(p)
        mv += 1
        pap = float(p @ Ap)
        if not pap > 0:
            raise SpdViolationError(
                f"nonpositive curvature <p, Ap> = {pap:g} at iteration {it + 1}")
        a = rr / pap
        q = q + a * p
        r = r - a * Ap
        it += 1
        _guard(q, it)
        if callback is not None:
            callback(it, q)
        rr_new = float(r @ r)
        if tol is not None and math.sqrt(rr_new) <= tol:
            true_r = b - sys.matvec(q)
            mv += 1
            tn = float(np.linalg.norm(true_r))
            if tn <= tol:
                converged = True
                certified = tn
                break
            # recursive residual drifted: restart from the true one
            r = true_r
            rr = float(r @ r)
            p = r.copy()
            continue
        p = r + (rr_new / rr) * p
        rr = rr_new
    if certified is None:
        if it == 0:
            certified = math.sqrt(rr)
        else:
            certified = float(np.linalg.norm(sys.matvec(q) - b))
            mv += 1
    return LinearSolveReport(q, certified, it, converged, mv)


def apriori_residual_bound(method, c: CurvatureConstants, k: int,
                           rhs_norm: float) -> BoundValue:
    """Predicted ``|A q_k - rhs|`` after k iterations started from q = 0."""
    method = Method.parse(method)
    if k < 0 or rhs_norm < 0:
        raise ContractViolation("need k >= 0 and rhs_norm >= 0")
    kappa = c.condition
    if method is Method.GD:
        return BoundValue(kappa * rate_constant(Method.GD, c) ** k * rhs_norm)
    if method is Method.HB:
        return BoundValue(kappa * rate_constant(Method.HB, c) ** k * rhs_norm,
                          heuristic=True)
    if method is Method.CG:
        return BoundValue(2.0 * kappa ** 1.5 * rate_constant(Method.HB, c) ** k
                          * rhs_norm)
    raise ContractViolation(f"{method.value} is not a linear solver")
