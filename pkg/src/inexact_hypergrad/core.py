"""Problem abstractions shared by every solver and bound calculator.

A lower-level problem is a bundle of hand-coded derivative callables
(gradient, Hessian-vector product, mixed Jacobian-transpose product) plus the
curvature constants that certify convergence rates and error bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

Vector = np.ndarray


class ContractViolation(ValueError):
    """Inputs violate a documented precondition (shapes, constants, ...)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class DivergenceError(NumericError):
    """An iterative method produced a non-finite or exploding iterate."""

    def __init__(self, message: str, iteration: Optional[int] = None):
        super().__init__(message)
        self.iteration = iteration


class SpdViolationError(NumericError):
    """Nonpositive curvature was met in a system assumed to be SPD."""


@dataclass(frozen=True)
class CurvatureConstants:
    """Spectral and Lipschitz constants of the lower-level Hessian.

    ``mu * I <= A(y) <= big_l * I`` for all y, with A (resp. B) Lipschitz in y
    with constant ``lip_a`` (resp. ``lip_b``).
    """

    mu: float
    big_l: float
    lip_a: float = 0.0
    lip_b: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.big_l)):
            raise ContractViolation("curvature constants must be finite")
        if not 0.0 < self.mu <= self.big_l:
            raise ContractViolation(
                f"need 0 < mu <= L, got mu={self.mu!r}, L={self.big_l!r}")
        if self.lip_a < 0 or self.lip_b < 0:
            raise ContractViolation("Lipschitz constants must be nonnegative")

    @property
    def condition(self) -> float:
        return self.big_l / self.mu


ConstantsLike = Union[CurvatureConstants, Callable[[Vector], CurvatureConstants]]


@dataclass(frozen=True)
class LowerProblem:
    """Strongly convex lower-level objective g(x, theta) in matrix-free form.

    ``constants`` is either fixed or a function of theta (constants that
    depend on the hyperparameters are recomputed at every call to
    :meth:`curvature`).  ``jvp_theta`` (B u) and ``b_norm`` are optional;
    when present they let bound calculators avoid generic estimators.
    """

    dim_x: int
    dim_theta: int
    grad_g: Callable[[Vector, Vector], Vector]
    hvp: Callable[[Vector, Vector, Vector], Vector]
    jtvp: Callable[[Vector, Vector, Vector], Vector]
    constants: ConstantsLike
    jvp_theta: Optional[Callable[[Vector, Vector, Vector], Vector]] = None
    b_norm: Optional[Callable[[Vector, Vector], float]] = None
    value: Optional[Callable[[Vector, Vector], float]] = None

    def __post_init__(self):
        if self.dim_x < 1 or self.dim_theta < 1:
            raise ContractViolation("dimensions must be positive")

    def curvature(self, theta: Vector) -> CurvatureConstants:
        if isinstance(self.constants, CurvatureConstants):
            return self.constants
        return self.constants(theta)

    def check_x(self, x: Vector) -> Vector:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim_x,):
            raise ContractViolation(
                f"expected x of shape ({self.dim_x},), got {x.shape}")
        return x

    def check_theta(self, theta: Vector) -> Vector:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim_theta,):
            raise ContractViolation(
                f"expected theta of shape ({self.dim_theta},), got {theta.shape}")
        return theta


@dataclass(frozen=True)
class UpperObjective:
    """Upper-level loss f(x) with gradient and gradient Lipschitz constant."""

    f: Callable[[Vector], float]
    grad_f: Callable[[Vector], Vector]
    lip_grad_f: float

    def __post_init__(self):
        if not self.lip_grad_f > 0:
            raise ContractViolation("lip_grad_f must be positive")


@dataclass(frozen=True)
class BilevelTask:
    """One term f_i(x_i*(theta)) of the upper objective.

    ``x_star`` is an optional exact solution map, available for
    oracle-equipped problems only.
    """

    lower: LowerProblem
    upper: UpperObjective
    index: int = 0
    x_star: Optional[Callable[[Vector], Vector]] = None


@dataclass
class SolveReport:
    x_tilde: Vector
    grad_norm: float
    eps_tilde: float
    iterations: int
    converged: bool
    grad_evals: int = 0

    @classmethod
    def from_gradient(cls, x, grad, mu, iterations, converged, grad_evals):
        gn = float(np.linalg.norm(grad))
        return cls(x_tilde=x, grad_norm=gn, eps_tilde=gn / mu,
                   iterations=iterations, converged=converged,
                   grad_evals=grad_evals)


def _pair_vectors(rng, dim, trials):
    return rng.standard_normal((trials, dim)), rng.standard_normal((trials, dim))


def check_hvp_symmetry(p: LowerProblem, x, theta, trials: int = 10,
                       tol: float = 1e-10, seed: int = 0) -> bool:
    """Return True iff <Au, v> and <u, Av> agree on random probe pairs.

    Agreement is judged by ``|<Au,v> - <u,Av>| <= tol * (1 + |u| |v|)``.
    """
    if trials < 1 or not tol > 0:
        raise ContractViolation("need trials >= 1 and tol > 0")
    x = p.check_x(x)
    theta = p.check_theta(theta)
    rng = np.random.default_rng(seed)
    us, vs = _pair_vectors(rng, p.dim_x, trials)
    for u, v in zip(us, vs):
        lhs = float(np.dot(p.hvp(x, theta, u), v))
        rhs = float(np.dot(u, p.hvp(x, theta, v)))
        scale = np.linalg.norm(u) * np.linalg.norm(v)
        if not abs(lhs - rhs) <= tol * (1.0 + scale):
            return False
    return True


def check_curvature(p: LowerProblem, x, theta, trials: int = 10,
                    rtol: float = 1e-10, seed: int = 0) -> bool:
    """Check that Rayleigh quotients of the Hessian lie in [mu, L]."""
    x = p.check_x(x)
    theta = p.check_theta(theta)
    c = p.curvature(theta)
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        v = rng.standard_normal(p.dim_x)
        v /= np.linalg.norm(v)
        rq = float(np.dot(v, p.hvp(x, theta, v)))
        if rq < c.mu * (1 - rtol) or rq > c.big_l * (1 + rtol):
            return False
    return True


def finite_diff_check_grad(fun: Callable[[Vector], float],
                           grad: Callable[[Vector], Vector],
                           x, h: float = 1e-5) -> float:
    """Max relative error between ``grad(x)`` and central differences of ``fun``.

    Each coordinate contributes ``|cd_j - g_j| / (1 + |g_j|)``.
    """
    if not h > 0:
        raise ContractViolation("step h must be positive")
    x = np.asarray(x, dtype=float)
    g = np.asarray(grad(x), dtype=float)
    if not np.all(np.isfinite(g)):
        raise NumericError("gradient returned non-finite values")
    worst = 0.0
    e = np.zeros_like(x)
    for j in range(x.size):
        e[j] = h
        fp, fm = float(fun(x + e)), float(fun(x - e))
        e[j] = 0.0
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {j}")
        cd = (fp - fm) / (2 * h)
        worst = max(worst, abs(cd - g[j]) / (1.0 + abs(g[j])))
    return worst


def finite_diff_check_jacobian(fun: Callable[[Vector], Vector],
                               jvp: Callable[[Vector], Vector],
                               x, directions, h: float = 1e-5) -> float:
    """Directional check of a vector map's derivative.

    Returns the max over ``directions`` of
    ``|cd - jvp(v)| / (1 + |jvp(v)|)`` with cd the central difference of
    ``fun`` along v.
    """
    x = np.asarray(x, dtype=float)
    worst = 0.0
    for v in directions:
        cd = (np.asarray(fun(x + h * v)) - np.asarray(fun(x - h * v))) / (2 * h)
        if not np.all(np.isfinite(cd)):
            raise NumericError("non-finite values in finite differences")
        jv = np.asarray(jvp(v))
        worst = max(worst, float(np.linalg.norm(cd - jv) / (1.0 + np.linalg.norm(jv))))
    return worst
