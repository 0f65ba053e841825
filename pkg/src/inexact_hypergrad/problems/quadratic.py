"""Least-squares bilevel testbed with an exact dense oracle.

    F(theta) = |A1 x*(theta) - b1|^2,
    x*(theta) = argmin_x |A2 x + A3 theta - b2|^2.

Hessian ``A = 2 A2^T A2`` and mixed derivative ``B = 2 A2^T A3`` do not
depend on x, so ``L_A = L_B = 0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

from ..core import (BilevelTask, ContractViolation, CurvatureConstants,
                    LowerProblem, UpperObjective)
from .rng import rng_stream

log = logging.getLogger(__name__)

DEGENERACY_RATIO = 1e-10
MAX_REGENERATIONS = 100


@dataclass(frozen=True)
class QuadraticInstance:
    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    seed: int = 0

    @property
    def dim(self) -> int:
        return self.a2.shape[1]

    @property
    def dim_theta(self) -> int:
        return self.a3.shape[1]


@dataclass(frozen=True)
class QuadraticOracle:
    x_star: Callable[[np.ndarray], np.ndarray]
    h_star: Callable[[np.ndarray], np.ndarray]
    F_star: Callable[[np.ndarray], float]
    hessian: np.ndarray
    jacobian: np.ndarray  # B, shape (d, n)


def _is_degenerate(a2) -> bool:
    ev = np.linalg.eigvalsh(a2.T @ a2)
    return not ev[0] > DEGENERACY_RATIO * max(ev[-1], np.finfo(float).tiny)


def _draw(seed, rows, dim, noise):
    rng = rng_stream(seed)
    a1 = rng.uniform((rows, dim))
    a2 = rng.uniform((rows, dim))
    a3 = rng.uniform((rows, dim))
    x1_hat = rng.uniform(dim)
    x2_hat = rng.uniform(dim)
    theta_hat = rng.uniform(dim)
    y1 = rng.normal(rows)
    y2 = rng.normal(rows)
    b1 = a1 @ x1_hat + noise * y1
    b2 = a2 @ x2_hat + a3 @ theta_hat + noise * y2
    return QuadraticInstance(a1, a2, a3, b1, b2, seed)


def quadratic_from_arrays(inst: QuadraticInstance):
    """Build the bilevel task and dense oracle for explicit matrices."""
    a1, a2, a3 = (np.asarray(m, dtype=float) for m in (inst.a1, inst.a2, inst.a3))
    b1, b2 = np.asarray(inst.b1, dtype=float), np.asarray(inst.b2, dtype=float)
    if a1.shape[1] != a2.shape[1] or a2.shape[0] != a3.shape[0]:
        raise ContractViolation("inconsistent matrix shapes")
    d, n = a2.shape[1], a3.shape[1]
    gram = a2.T @ a2
    cross = a2.T @ a3
    rhs0 = a2.T @ b2
    gram1 = a1.T @ a1
    rhs1 = a1.T @ b1
    ev = np.linalg.eigvalsh(gram)
    if not ev[0] > 0:
        raise ContractViolation("A2^T A2 is not positive definite")
    consts = CurvatureConstants(mu=2 * float(ev[0]), big_l=2 * float(ev[-1]), lip_a=0.0, lip_b=0.0)
    lip_f = 2 * float(np.linalg.eigvalsh(gram1)[-1]) if d else 0.0
    bmat = 2 * cross
    bnorm = float(np.linalg.norm(bmat, 2))
    chol = linalg.cho_factor(gram)

    def grad_g(x, theta):
        return 2 * (gram @ x + cross @ theta - rhs0)

    def hvp(x, theta, v):
        return 2 * (gram @ v)

    def jtvp(x, theta, v):
        return bmat.T @ v

    def jvp_theta(x, theta, u):
        return bmat @ u

    def g_value(x, theta):
        r = a2 @ x + a3 @ theta - b2
        return float(r @ r)

    lower = LowerProblem(dim_x=d, dim_theta=n, grad_g=grad_g, hvp=hvp, jtvp=jtvp,
                         constants=consts, jvp_theta=jvp_theta,
                         b_norm=lambda x, theta: bnorm, value=g_value)

    def f(x):
        r = a1 @ x - b1
        return float(r @ r)

    def grad_f(x):
        return 2 * (gram1 @ x - rhs1)

    upper = UpperObjective(f=f, grad_f=grad_f, lip_grad_f=max(lip_f, 1e-300))

    def x_star(theta):
        return linalg.cho_solve(chol, rhs0 - cross @ np.asarray(theta, dtype=float))

    def h_star(theta):
        xs = x_star(theta)
        # -B^T A^{-1} grad f with A = 2 gram, B = 2 cross
        return -cross.T @ linalg.cho_solve(chol, grad_f(xs))

    def F_star(theta):
        return f(x_star(theta))

    task = BilevelTask(lower=lower, upper=upper, index=0, x_star=x_star)
    oracle = QuadraticOracle(x_star=x_star, h_star=h_star, F_star=F_star,
                             hessian=2 * gram, jacobian=bmat)
    return task, oracle


def gen_quadratic(seed: int = 0, rows: int = 1000, dim: int = 10,
                  noise: float = 0.01):
    """Random least-squares bilevel instance.

    Matrices have i.i.d. Unif[0, 1] entries; ``b1 = A1 x1 + noise*y1`` and
    ``b2 = A2 x2 + A3 theta0 + noise*y2`` with uniform x1, x2, theta0 and
    standard Gaussian y1, y2.  A draw with numerically singular ``A2^T A2``
    is discarded and the next seed is used.

    Returns ``(instance, task, oracle)``.
    """
    if not rows >= dim >= 1:
        raise ContractViolation("need rows >= dim >= 1")
    if noise < 0:
        raise ContractViolation("noise must be nonnegative")
    s = seed
    for _ in range(MAX_REGENERATIONS):
        inst = _draw(s, rows, dim, noise)
        if not _is_degenerate(inst.a2):
            break
        log.warning("degenerate A2 for seed %d, regenerating with seed %d", s, s + 1)
        s += 1
    else:
        raise ContractViolation("could not draw a nondegenerate instance")
    task, oracle = quadratic_from_arrays(inst)
    return inst, task, oracle
