"""First-order solvers for the strongly convex lower-level problem.

Gradient descent, Polyak heavy ball and FISTA adapted to strong convexity
(Chambolle & Pock 2016, Algorithm 5, without a proximal term), each with
fixed-iteration, tolerance or work-budget stopping.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .core import (ContractViolation, CurvatureConstants, DivergenceError,
                   LowerProblem, SolveReport)

DIVERGENCE_NORM = 1e12


class Method(str, enum.Enum):
    GD = "GD"
    HB = "HB"
    FISTA = "FISTA"
    CG = "CG"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ContractViolation(f"unknown method {value!r}") from None


LOWER_METHODS = (Method.GD, Method.HB, Method.FISTA)


@dataclass(frozen=True)
class BoundValue:
    """A bound together with a flag telling whether it is certified.

    ``heuristic`` is True when unknown constants were replaced by guesses
    (heavy ball's c=1, gamma=0) or when quantities at the unknown solution
    were replaced by surrogates.
    """

    value: float
    heuristic: bool = False

    def __post_init__(self):
        if not self.value >= 0:
            raise ContractViolation(f"bound must be nonnegative, got {self.value}")


@dataclass(frozen=True)
class StoppingRule:
    """When to stop an iterative solver.

    kind is ``"fixed"`` (exactly ``k`` iterations), ``"tolerance"`` (stop once
    the certified error measure drops to ``eps``) or ``"budget"`` (at most
    ``units`` iterations).  ``max_iters`` caps tolerance runs.
    """

    kind: str
    k: int = 0
    eps: float = 0.0
    units: int = 0
    max_iters: int = 100_000

    def __post_init__(self):
        if self.kind not in ("fixed", "tolerance", "budget"):
            raise ContractViolation(f"unknown stopping kind {self.kind!r}")
        if self.k < 0 or self.units < 0:
            raise ContractViolation("iteration counts must be nonnegative")
        if self.kind == "tolerance" and not self.eps > 0:
            raise ContractViolation("tolerance must be positive")
        if self.max_iters < 1:
            raise ContractViolation("max_iters must be >= 1")

    @classmethod
    def fixed(cls, k: int) -> "StoppingRule":
        return cls("fixed", k=int(k))

    @classmethod
    def tolerance(cls, eps: float, max_iters: int = 100_000) -> "StoppingRule":
        return cls("tolerance", eps=float(eps), max_iters=int(max_iters))

    @classmethod
    def budget(cls, units: int) -> "StoppingRule":
        return cls("budget", units=int(units))

    @property
    def cap(self) -> int:
        if self.kind == "fixed":
            return self.k
        if self.kind == "budget":
            return self.units
        return self.max_iters


@dataclass(frozen=True)
class LowerSolverParams:
    """Method, stepsize and momentum for a lower-level solve.

    ``alpha``/``beta`` left as None are filled in from the optimal values for
    the curvature constants at the current theta.
    """

    method: Method
    stop: StoppingRule
    alpha: Optional[float] = None
    beta: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if self.method not in LOWER_METHODS:
            raise ContractViolation(f"{self.method.value} is not a lower-level solver")
        if self.alpha is not None and not self.alpha > 0:
            raise ContractViolation("alpha must be positive")
        if self.beta is not None and not 0 <= self.beta < 1:
            raise ContractViolation("beta must lie in [0, 1)")

    def resolved(self, c: CurvatureConstants) -> "LowerSolverParams":
        opt = optimal_params(self.method, c)
        return replace(self,
                       alpha=opt.alpha if self.alpha is None else self.alpha,
                       beta=opt.beta if self.beta is None else self.beta)


def _check_constants(c: CurvatureConstants):
    if not 0 < c.mu <= c.big_l:
        raise ContractViolation("need 0 < mu <= L")


def rate_constant(method, c: CurvatureConstants) -> float:
    """Per-iteration linear contraction factor of the optimally tuned method."""
    method = Method.parse(method)
    _check_constants(c)
    L, mu = c.big_l, c.mu
    if method is Method.GD:
        return (L - mu) / (L + mu)
    if method in (Method.HB, Method.CG):
        sl, sm = math.sqrt(L), math.sqrt(mu)
        return (sl - sm) / (sl + sm)
    return 1.0 - math.sqrt(mu / L)


def optimal_params(method, c: CurvatureConstants,
                   stop: Optional[StoppingRule] = None) -> LowerSolverParams:
    method = Method.parse(method)
    _check_constants(c)
    stop = stop or StoppingRule.fixed(0)
    L, mu = c.big_l, c.mu
    if method is Method.GD:
        return LowerSolverParams(method, stop, alpha=2.0 / (L + mu), beta=0.0)
    if method is Method.HB:
        lam = rate_constant(Method.HB, c)
        alpha = 4.0 / (math.sqrt(L) + math.sqrt(mu)) ** 2
        return LowerSolverParams(method, stop, alpha=alpha, beta=lam * lam)
    if method is Method.FISTA:
        # momentum is computed on the fly from (mu, L)
        return LowerSolverParams(method, stop, alpha=1.0 / L, beta=0.0)
    raise ContractViolation(f"{method.value} is not a lower-level solver")


def apriori_lower_bound(method, c: CurvatureConstants, k: int,
                        dist0: float) -> BoundValue:
    """A priori bound on ``|x_k - x*|`` after k optimally tuned iterations.

    Heavy ball uses c=1, gamma=0 in its rate statement and is therefore
    flagged heuristic.
    """
    method = Method.parse(method)
    if k < 0 or dist0 < 0:
        raise ContractViolation("need k >= 0 and dist0 >= 0")
    lam = rate_constant(method, c)
    if method is Method.GD:
        return BoundValue(lam ** k * dist0)
    if method is Method.HB:
        return BoundValue(lam ** k * dist0, heuristic=True)
    if method is Method.FISTA:
        q = math.sqrt(c.mu / c.big_l)
        factor = min((1.0 + q) * lam ** k, 4.0 / (k + 1) ** 2)
        return BoundValue(math.sqrt(factor * c.condition) * dist0)
    raise ContractViolation(f"{method.value} is not a lower-level solver")


def _guard(x, iteration):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite iterate at iteration {iteration}", iteration)
    if np.linalg.norm(x) > DIVERGENCE_NORM:
        raise DivergenceError(
            f"iterate norm exceeded {DIVERGENCE_NORM:g} at iteration {iteration}",
            iteration)


def solve_lower(p: LowerProblem, theta, x0, params: LowerSolverParams,
                callback: Optional[Callable[[int, np.ndarray], None]] = None
                ) -> SolveReport:
    """Approximately minimize ``g(., theta)`` starting from ``x0``.

    Returns a :class:`SolveReport` whose ``eps_tilde = |grad g(x)| / mu``
    certifies ``|x_tilde - x*| <= eps_tilde``.  ``callback(k, x)`` is invoked
    after each iteration k = 1, 2, ...

    Every call performs ``iterations + 1`` gradient evaluations for GD and HB
    (the last one certifies the output); FISTA needs one more per iteration
    under tolerance stopping because its steps use extrapolated points.
    """
    theta = p.check_theta(theta)
    x = p.check_x(x0).copy()
    if not np.all(np.isfinite(x)):
        raise ContractViolation("x0 must be finite")
    c = p.curvature(theta)
    prm = params.resolved(c)
    stop = prm.stop
    mu = c.mu
    tol = stop.eps * mu if stop.kind == "tolerance" else None
    cap = stop.cap

    g = p.grad_g(x, theta)
    evals = 1
    if tol is not None and np.linalg.norm(g) <= tol:
        return SolveReport.from_gradient(x, g, mu, 0, True, evals)

    alpha, beta = prm.alpha, prm.beta
    x_prev = x.copy()
    it = 0
    converged = stop.kind != "tolerance"
    if prm.method in (Method.GD, Method.HB):
        while it < cap:
            step = x - alpha * g
            if prm.method is Method.HB and beta:
                step += beta * (x - x_prev)
            x_prev, x = x, step
            it += 1
            _guard(x, it)
            g = p.grad_g(x, theta)
            evals += 1
            if callback is not None:
                callback(it, x)
            if tol is not None and np.linalg.norm(g) <= tol:
                converged = True
                break
    else:
        qf = mu / c.big_l
        t = 1.0
        g_y = g
        while it < cap:
            t_next = 0.5 * (1 - qf * t * t + math.sqrt((1 - qf * t * t) ** 2 + 4 * t * t))
            if qf >= 1.0:
                mom = 0.0
            else:
                mom = (t - 1.0) / t_next * (1.0 - t_next * qf) / (1.0 - qf)
            if it > 0:
                y = x + mom * (x - x_prev)
                g_y = p.grad_g(y, theta)
                evals += 1
            else:
                y = x
            x_prev, x = x, y - alpha * g_y
            t = t_next
            it += 1
            _guard(x, it)
            if callback is not None:
                callback(it, x)
            if tol is not None:
                g = p.grad_g(x, theta)
                evals += 1
                if np.linalg.norm(g) <= tol:
                    converged = True
                    break
        if tol is None:
            if it > 0:
                g = p.grad_g(x, theta)
                evals += 1
    return SolveReport.from_gradient(x, g, mu, it, converged, evals)
