"""Upper-level gradient descent driven by inexact hypergradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import BilevelTask, ContractViolation, DivergenceError, NumericError
from .hypergradient import HypergradConfig, compute_hypergradient
from .lower import LowerSolverParams, Method, StoppingRule, solve_lower

DIVERGENCE_NORM = 1e12
EVAL_MAX_ITERS = 100_000


@dataclass
class BilevelConfig:
    """Settings for :func:`run_bilevel`.

    ``tolerances`` is a sequence of ``(eps, delta)`` pairs, one per upper
    iteration; the last pair is reused once the sequence runs out.  The
    stopping rules inside ``hypergrad_cfg`` are replaced by these tolerances
    at every iteration; only methods and stepsizes are taken from it.
    """

    upper_step: float
    tolerances: Sequence[tuple]
    hypergrad_cfg: HypergradConfig
    max_upper_iters: int = 100
    work_budget: Optional[int] = None
    reg_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    reg: Optional[Callable[[np.ndarray], float]] = None
    eval_eps: float = 1e-10
    eval_method: Method = Method.HB
    inner_max_iters: int = 100_000
    record_theta: bool = False

    def __post_init__(self):
        if not self.upper_step > 0:
            raise ContractViolation("upper_step must be positive")
        if len(self.tolerances) == 0:
            raise ContractViolation("need at least one (eps, delta) pair")
        for eps, delta in self.tolerances:
            if not (eps > 0 and delta > 0):
                raise ContractViolation("tolerances must be positive")
        if self.max_upper_iters < 0:
            raise ContractViolation("max_upper_iters must be >= 0")
        if not self.eval_eps > 0:
            raise ContractViolation("eval_eps must be positive")

    def tolerance_at(self, k: int):
        return self.tolerances[min(k, len(self.tolerances) - 1)]


@dataclass
class TraceRow:
    upper_iter: int
    upper_objective: float
    cumulative_work: int
    eps_used: float
    delta_used: float
    grad_norm_estimate: float
    plateau: bool = False
    eval_work: int = 0
    aposteriori: float = math.nan
    theta_snapshot: Optional[np.ndarray] = None


def _evaluate(tasks, theta, eps, reg, states, method, max_iters):
    total, work = 0.0, 0
    new_states = []
    for task, x0 in zip(tasks, states):
        params = LowerSolverParams(method, StoppingRule.tolerance(eps, max_iters))
        rep = solve_lower(task.lower, theta, x0, params)
        if not rep.converged and method is not Method.GD:
            # momentum methods are not guaranteed to converge off quadratics
            rep = solve_lower(task.lower, theta, rep.x_tilde, LowerSolverParams(
                Method.FISTA, StoppingRule.tolerance(eps, max_iters)))
        total += task.upper.f(rep.x_tilde)
        work += rep.iterations
        new_states.append(rep.x_tilde)
    value = total / len(tasks)
    if reg is not None:
        value += float(reg(theta))
    return value, work, new_states


def evaluate_upper(tasks: Sequence[BilevelTask], theta, eval_eps: float = 1e-10,
                   reg=None, method=Method.HB) -> float:
    """``F(theta)`` with every lower-level problem solved to ``eval_eps``."""
    if not eval_eps > 0:
        raise ContractViolation("eval_eps must be positive")
    theta = np.asarray(theta, dtype=float)
    states = [np.zeros(t.lower.dim_x) for t in tasks]
    value, _, _ = _evaluate(tasks, theta, eval_eps, reg, states,
                            Method.parse(method), EVAL_MAX_ITERS)
    return value


def run_bilevel(tasks: Sequence[BilevelTask], theta0, cfg: BilevelConfig,
                x0s: Optional[Sequence[np.ndarray]] = None) -> list:
    """Gradient descent on F using inexact hypergradients.

    Lower-level solves are warm-started from each task's previous solution.
    Each trace row reports F at the current theta from a separate tight
    solve (``cfg.eval_eps``); that evaluation is counted in ``eval_work``,
    not in ``cumulative_work``.  ``plateau`` marks iterations where every
    linear solve accepted ``q = 0`` without iterating, so the hypergradient
    (apart from the regularizer) was exactly zero.  Once such a step leaves
    theta and every warm start unchanged, later steps would repeat it bit for
    bit; their rows are copied instead of recomputed.
    """
    if not tasks:
        raise ContractViolation("need at least one task")
    n = tasks[0].lower.dim_theta
    if any(t.lower.dim_theta != n for t in tasks):
        raise ContractViolation("tasks disagree on dim_theta")
    theta = np.array(theta0, dtype=float)
    if theta.shape != (n,) or not np.all(np.isfinite(theta)):
        raise ContractViolation("theta0 must be a finite vector of length dim_theta")
    warm = [np.zeros(t.lower.dim_x) if x0s is None else np.array(x0s[i], dtype=float)
            for i, t in enumerate(tasks)]
    eval_states = [w.copy() for w in warm]
    method = Method.parse(cfg.eval_method)

    def snapshot():
        return theta.copy() if cfg.record_theta else None

    F, ework, eval_states = _evaluate(tasks, theta, cfg.eval_eps, cfg.reg,
                                      eval_states, method, EVAL_MAX_ITERS)
    work = 0
    rows = [TraceRow(0, F, 0, math.nan, math.nan, math.nan, False, ework,
                     math.nan, snapshot())]
    base = cfg.hypergrad_cfg
    repeat = None
    for it in range(1, cfg.max_upper_iters + 1):
        if cfg.work_budget is not None and work >= cfg.work_budget:
            break
        eps, delta = cfg.tolerance_at(it - 1)
        if repeat is not None and cfg.tolerance_at(it - 2) == (eps, delta):
            # previous step changed nothing, so this one would replay it exactly
            rows.append(replace(repeat, upper_iter=it, eval_work=0,
                                theta_snapshot=snapshot()))
            continue
        repeat = None
        hcfg = replace(
            base,
            lower=replace(base.lower, stop=StoppingRule.tolerance(eps, cfg.inner_max_iters)),
            linear_stop=StoppingRule.tolerance(delta, cfg.inner_max_iters))
        hs, bounds = [], []
        plateau = True
        settled = True
        step_work = 0
        for i, task in enumerate(tasks):
            try:
                res = compute_hypergradient(task, theta, warm[i], hcfg)
            except (NumericError, ContractViolation) as exc:
                exc.upper_iter = it
                raise
            warm[i] = res.x_tilde
            hs.append(res.h_tilde)
            bounds.append(res.aposteriori.value)
            step_work += res.work
            plateau &= res.linear_iters == 0 and not np.any(res.q_tilde)
            settled &= res.lower_converged and res.lower_iters == 0
        grad = np.mean(hs, axis=0)
        if cfg.reg_grad is not None:
            grad = grad + np.asarray(cfg.reg_grad(theta), dtype=float)
        theta = theta - cfg.upper_step * grad
        if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > DIVERGENCE_NORM:
            exc = DivergenceError(f"upper iterate diverged at upper iteration {it}", it)
            exc.upper_iter = it
            raise exc
        work += step_work
        try:
            F, ework, eval_states = _evaluate(tasks, theta, cfg.eval_eps, cfg.reg,
                                              eval_states, method, EVAL_MAX_ITERS)
        except (NumericError, ContractViolation) as exc:
            exc.upper_iter = it
            raise
        rows.append(TraceRow(it, F, work, eps, delta, float(np.linalg.norm(grad)),
                             plateau, ework, float(np.mean(bounds)), snapshot()))
        if plateau and settled and ework == 0 and not np.any(grad):
            repeat = rows[-1]
    return rows
