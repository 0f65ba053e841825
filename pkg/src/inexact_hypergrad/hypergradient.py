"""Inexact hypergradients and their error bounds.

:func:`compute_hypergradient` is the general two-stage method: approximately
solve the lower-level problem, approximately solve ``A(x) q = grad f(x)``,
return ``-B(x)^T q``.  :func:`iad_gd_reference` and :func:`iad_hb_reference`
are literal transcriptions of inexact reverse-mode AD through GD/HB, kept as
independent references for the equivalence tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import BilevelTask, ContractViolation, CurvatureConstants
from .linear import LINEAR_METHODS, SpdSystem, solve_spd
from .lower import (BoundValue, LowerSolverParams, Method, StoppingRule,
                    solve_lower)

NORM_SAFETY = 1.1


@dataclass(frozen=True)
class HypergradConfig:
    lower: LowerSolverParams
    linear_method: Method = Method.CG
    linear_stop: StoppingRule = field(
        default_factory=lambda: StoppingRule.tolerance(1e-6))
    warm_start_q: bool = False

    def __post_init__(self):
        object.__setattr__(self, "linear_method", Method.parse(self.linear_method))
        if self.linear_method not in LINEAR_METHODS:
            raise ContractViolation(f"{self.linear_method.value} is not a linear solver")


@dataclass
class HypergradResult:
    h_tilde: np.ndarray
    x_tilde: np.ndarray
    q_tilde: np.ndarray
    eps_tilde: float
    delta_tilde: float
    lower_iters: int
    linear_iters: int
    aposteriori: BoundValue
    apriori: Optional[BoundValue] = None
    lower_converged: bool = True
    linear_converged: bool = True
    grad_evals: int = 0
    matvecs: int = 0

    @property
    def work(self) -> int:
        return self.lower_iters + self.linear_iters


def _transpose_by_assembly(matvec_t, dim_in):
    cols = [np.asarray(matvec_t(e)) for e in np.eye(dim_in)]
    dense_t = np.stack(cols, axis=1)  # (dim_out, dim_in) representation of B^T
    return lambda u: dense_t.T @ u


def operator_norm_estimate(matvec_t: Callable[[np.ndarray], np.ndarray],
                           dim_in: int, iters: int = 20, seed: int = 0,
                           matvec: Optional[Callable] = None,
                           safety: float = NORM_SAFETY) -> float:
    """Estimate ``|B|`` from products with ``B^T`` by power iteration.

    Power iteration runs on ``B B^T``.  If the forward product ``matvec`` is
    not supplied, ``B`` is obtained from ``matvec_t`` by pairing against the
    ``dim_in`` unit vectors.  The final estimate is inflated by ``safety``
    since power iteration approaches the norm from below.
    """
    if iters < 1:
        raise ContractViolation("iters must be >= 1")
    if matvec is None:
        matvec = _transpose_by_assembly(matvec_t, dim_in)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim_in)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        w = np.asarray(matvec_t(v))
        sigma = float(np.linalg.norm(w))
        if sigma == 0.0:
            return 0.0
        v = np.asarray(matvec(w))
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v = v / nv
    sigma = max(sigma, float(np.linalg.norm(matvec_t(v))))
    return safety * sigma


def b_norm(task: BilevelTask, x, theta, iters: int = 20, seed: int = 0) -> float:
    p = task.lower
    if p.b_norm is not None:
        return float(p.b_norm(x, theta))
    fwd = None
    if p.jvp_theta is not None:
        fwd = lambda u: p.jvp_theta(x, theta, u)
    return operator_norm_estimate(lambda v: p.jtvp(x, theta, v), p.dim_x,
                                  iters=iters, seed=seed, matvec=fwd)


def _c_factor(c: CurvatureConstants, lip_grad_f, bnorm, fnorm):
    lip_ainv = c.lip_a / c.mu ** 2
    return (lip_grad_f * bnorm / c.mu + lip_ainv * fnorm * bnorm
            + c.lip_b * fnorm / c.mu)


def aposteriori_bound(task: BilevelTask, theta, x_tilde, eps_tilde: float,
                      delta_tilde: float, bnorm: Optional[float] = None,
                      fnorm: Optional[float] = None) -> BoundValue:
    """Computable bound on ``|h_tilde - h*|`` from observed residuals.

    ``eps_tilde = |grad g(x_tilde)| / mu``, ``delta_tilde`` is the linear
    system residual.  ``bnorm`` and ``fnorm`` default to ``|B(x_tilde)|`` and
    ``|grad f(x_tilde)|``.
    """
    if eps_tilde < 0 or delta_tilde < 0:
        raise ContractViolation("residual measures must be nonnegative")
    c = task.lower.curvature(theta)
    lf = task.upper.lip_grad_f
    if bnorm is None:
        bnorm = b_norm(task, x_tilde, theta)
    if fnorm is None:
        fnorm = float(np.linalg.norm(task.upper.grad_f(x_tilde)))
    value = (_c_factor(c, lf, bnorm, fnorm) * eps_tilde
             + bnorm / c.mu * delta_tilde
             + c.lip_b * lf / c.mu * eps_tilde ** 2)
    return BoundValue(float(value))


def apriori_bound(task: BilevelTask, theta, eps: float, delta: float,
                  bnorm_star: float, fnorm_star: float,
                  heuristic: bool = False) -> BoundValue:
    """Bound on ``|h_tilde - h*|`` from prescribed accuracies.

    Valid whenever ``|x_tilde - x*| <= eps`` and the linear residual is at
    most ``delta``.  The norms must be evaluated at x*; pass
    ``heuristic=True`` when surrogates were used instead.
    """
    if eps < 0 or delta < 0:
        raise ContractViolation("eps and delta must be nonnegative")
    c = task.lower.curvature(theta)
    lf = task.upper.lip_grad_f
    value = (_c_factor(c, lf, bnorm_star, fnorm_star) * eps
             + bnorm_star / c.mu * delta
             + c.lip_b * lf / c.mu * eps ** 2
             + c.lip_b / c.mu * delta * eps)
    return BoundValue(float(value), heuristic=heuristic)


def compute_hypergradient(task: BilevelTask, theta, x0, cfg: HypergradConfig,
                          q0=None) -> HypergradResult:
    """Estimate the hypergradient of ``f(x*(theta))``.

    The a priori bound is attached only when both stages stopped on a
    tolerance that was met.  It uses norms at the exact solution when the
    task has one and is flagged heuristic otherwise.
    """
    p = task.lower
    theta = p.check_theta(theta)
    c = p.curvature(theta)
    rep = solve_lower(p, theta, x0, cfg.lower)
    x = rep.x_tilde
    fgrad = np.asarray(task.upper.grad_f(x), dtype=float)
    sys = SpdSystem(matvec=lambda v: p.hvp(x, theta, v), rhs=fgrad, constants=c)
    lin = solve_spd(sys, q0 if cfg.warm_start_q else None, cfg.linear_method,
                    cfg.linear_stop)
    h = -np.asarray(p.jtvp(x, theta, lin.q_tilde), dtype=float)

    fnorm = float(np.linalg.norm(fgrad))
    bnorm = b_norm(task, x, theta)
    post = aposteriori_bound(task, theta, x, rep.eps_tilde, lin.residual_norm,
                             bnorm=bnorm, fnorm=fnorm)
    prior = None
    lower_stop, linear_stop = cfg.lower.stop, cfg.linear_stop
    if (lower_stop.kind == "tolerance" and linear_stop.kind == "tolerance"
            and rep.converged and lin.converged):
        if task.x_star is not None:
            xs = task.x_star(theta)
            prior = apriori_bound(
                task, theta, lower_stop.eps, linear_stop.eps,
                b_norm(task, xs, theta),
                float(np.linalg.norm(task.upper.grad_f(xs))))
        else:
            prior = apriori_bound(task, theta, lower_stop.eps, linear_stop.eps,
                                  bnorm, fnorm, heuristic=True)
    return HypergradResult(
        h_tilde=h, x_tilde=x, q_tilde=lin.q_tilde, eps_tilde=rep.eps_tilde,
        delta_tilde=lin.residual_norm, lower_iters=rep.iterations,
        linear_iters=lin.iterations, aposteriori=post, apriori=prior,
        lower_converged=rep.converged, linear_converged=lin.converged,
        grad_evals=rep.grad_evals, matvecs=lin.matvecs)


def _run_lower_literal(p, theta, x0, K, alpha, beta):
    x = np.array(x0, dtype=float)
    x_prev = x.copy()
    for _ in range(K):
        x_new = x - alpha * p.grad_g(x, theta) + beta * (x - x_prev)
        x_prev, x = x, x_new
    return x


def iad_hb_reference(task: BilevelTask, theta, x0, K: int, alpha: float,
                     beta: float) -> np.ndarray:
    """Inexact reverse-mode AD through K heavy-ball steps.

    Hessian and Jacobian are frozen at the final iterate; the adjoint
    sequence starts at ``grad f(x_K)`` with a zero predecessor.
    """
    if K < 0:
        raise ContractViolation("K must be >= 0")
    if not 0 <= beta < 1:
        raise ContractViolation("beta must lie in [0, 1)")
    p = task.lower
    theta = p.check_theta(theta)
    xK = _run_lower_literal(p, theta, p.check_x(x0), K, alpha, beta)
    h = np.zeros(p.dim_theta)
    adj = np.asarray(task.upper.grad_f(xK), dtype=float)
    adj_prev = np.zeros_like(adj)
    for _ in range(K):
        h = h - alpha * p.jtvp(xK, theta, adj)
        adj_next = adj - alpha * p.hvp(xK, theta, adj) + beta * (adj - adj_prev)
        adj_prev, adj = adj, adj_next
    return h


def iad_gd_reference(task: BilevelTask, theta, x0, K: int,
                     alpha: float) -> np.ndarray:
    """Inexact reverse-mode AD through K gradient descent steps."""
    if K < 0:
        raise ContractViolation("K must be >= 0")
    p = task.lower
    theta = p.check_theta(theta)
    xK = _run_lower_literal(p, theta, p.check_x(x0), K, alpha, 0.0)
    h = np.zeros(p.dim_theta)
    adj = np.asarray(task.upper.grad_f(xK), dtype=float)
    for _ in range(K):
        h = h - alpha * p.jtvp(xK, theta, adj)
        adj = adj - alpha * p.hvp(xK, theta, adj)
    return h
