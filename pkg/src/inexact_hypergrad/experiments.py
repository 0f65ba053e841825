"""Experiment loops behind the CLI: bound quality, work trade-off, hypercleaning.

Every function returns plain row dictionaries so results can be written as
CSV or inspected directly in tests.
"""

from __future__ import annotations

import itertools
import logging
import time
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .core import BilevelTask
from .driver import BilevelConfig, run_bilevel
from .hypergradient import (HypergradConfig, aposteriori_bound, apriori_bound,
                            b_norm)
from .linear import LINEAR_METHODS, SpdSystem, apriori_residual_bound, solve_spd
from .lower import (LOWER_METHODS, LowerSolverParams, Method, StoppingRule,
                    apriori_lower_bound, solve_lower)

log = logging.getLogger(__name__)

LOWER_COLUMNS = ["solver", "k", "true_error", "apriori_bound",
                 "apriori_heuristic", "aposteriori_bound"]
HYPERGRAD_COLUMNS = ["lower", "N", "linear", "k", "eps_tilde", "delta_tilde",
                     "true_error", "apriori_bound", "apriori_heuristic",
                     "aposteriori_bound"]
TRADEOFF_COLUMNS = ["linear", "N", "k", "total_work", "true_error"]
TRACE_COLUMNS = ["lower", "linear", "eps", "delta", "upper_iter",
                 "cumulative_work", "upper_objective", "grad_norm_estimate",
                 "aposteriori", "plateau"]


def bounds_lower(task: BilevelTask, theta, iters: int,
                 methods: Sequence = LOWER_METHODS, x0=None) -> list:
    """Per-iteration lower-level error and its a priori / a posteriori bounds."""
    p = task.lower
    c = p.curvature(theta)
    xs = task.x_star(theta)
    x0 = np.zeros(p.dim_x) if x0 is None else np.asarray(x0, dtype=float)
    dist0 = float(np.linalg.norm(x0 - xs))
    rows = []
    for m in map(Method.parse, methods):
        def record(k, x, m=m):
            prior = apriori_lower_bound(m, c, k, dist0)
            rows.append({
                "solver": m.value, "k": k,
                "true_error": float(np.linalg.norm(x - xs)),
                "apriori_bound": prior.value,
                "apriori_heuristic": int(prior.heuristic),
                "aposteriori_bound": float(np.linalg.norm(p.grad_g(x, theta))) / c.mu,
            })
        solve_lower(p, theta, x0, LowerSolverParams(m, StoppingRule.fixed(iters)),
                    callback=record)
    return rows


def _hypergrad_rows(task, theta, x_tilde, h_star, eps_prior, lower_label, n_label,
                    lower_heuristic, iters, linear_methods):
    p = task.lower
    c = p.curvature(theta)
    xs = task.x_star(theta)
    fgrad = task.upper.grad_f(x_tilde)
    fnorm = float(np.linalg.norm(fgrad))
    bnorm = b_norm(task, x_tilde, theta)
    bnorm_star = b_norm(task, xs, theta)
    fnorm_star = float(np.linalg.norm(task.upper.grad_f(xs)))
    eps_tilde = float(np.linalg.norm(p.grad_g(x_tilde, theta))) / c.mu
    matvec = lambda v: p.hvp(x_tilde, theta, v)
    sys = SpdSystem(matvec, fgrad, c)
    rows = []
    for lm in map(Method.parse, linear_methods):
        def record(k, q, lm=lm):
            delta_tilde = float(np.linalg.norm(matvec(q) - fgrad))
            h = -p.jtvp(x_tilde, theta, q)
            dprior = apriori_residual_bound(lm, c, k, fnorm)
            prior = apriori_bound(task, theta, eps_prior, dprior.value, bnorm_star,
                                  fnorm_star,
                                  heuristic=dprior.heuristic or lower_heuristic)
            post = aposteriori_bound(task, theta, x_tilde, eps_tilde, delta_tilde,
                                     bnorm=bnorm, fnorm=fnorm)
            rows.append({
                "lower": lower_label, "N": n_label, "linear": lm.value, "k": k,
                "eps_tilde": eps_tilde, "delta_tilde": delta_tilde,
                "true_error": float(np.linalg.norm(h - h_star)),
                "apriori_bound": prior.value,
                "apriori_heuristic": int(prior.heuristic),
                "aposteriori_bound": post.value,
            })
        rep = solve_spd(sys, None, lm, StoppingRule.fixed(iters), callback=record)
        # CG stops early once its residual is exactly zero; hold the iterate
        for k in range(rep.iterations + 1, iters + 1):
            record(k, rep.q_tilde)
    return rows


def bounds_hypergrad(task: BilevelTask, theta, h_star, iters: int,
                     lower_iters: Optional[int] = None,
                     lower_methods: Sequence = LOWER_METHODS,
                     linear_methods: Sequence = LINEAR_METHODS) -> list:
    """Hypergradient error and bounds per linear-solver iteration.

    With ``lower_iters=None`` the exact lower solution is used (eps = 0);
    otherwise each lower method runs ``lower_iters`` iterations from zero and
    the a priori eps is that method's rate bound.
    """
    p = task.lower
    c = p.curvature(theta)
    xs = task.x_star(theta)
    if lower_iters is None:
        return _hypergrad_rows(task, theta, xs, h_star, 0.0, "exact", 0, False,
                               iters, linear_methods)
    rows = []
    x0 = np.zeros(p.dim_x)
    for m in map(Method.parse, lower_methods):
        rep = solve_lower(p, theta, x0, LowerSolverParams(m, StoppingRule.fixed(lower_iters)))
        eps = apriori_lower_bound(m, c, lower_iters, float(np.linalg.norm(x0 - xs)))
        rows += _hypergrad_rows(task, theta, rep.x_tilde, h_star, eps.value, m.value,
                                lower_iters, eps.heuristic, iters, linear_methods)
    return rows


def dedupe(values: Iterable[int]) -> list:
    out = []
    for v in values:
        if v in out:
            log.warning("duplicate value %s in grid ignored", v)
        else:
            out.append(v)
    return out


def tradeoff(task: BilevelTask, theta, h_star, lower_iters: Sequence[int],
             iters: int, linear_methods: Sequence = (Method.HB, Method.CG),
             lower_method=Method.HB) -> list:
    """True hypergradient error against total work ``N + k``.

    The lower problem gets N heavy-ball iterations from zero; the linear
    solver then runs k = 0..iters iterations from q = 0.
    """
    p = task.lower
    c = p.curvature(theta)
    rows = []
    for n_iter in dedupe(int(n) for n in lower_iters):
        rep = solve_lower(p, theta, np.zeros(p.dim_x),
                          LowerSolverParams(lower_method, StoppingRule.fixed(n_iter)))
        x = rep.x_tilde
        fgrad = task.upper.grad_f(x)
        sys = SpdSystem(lambda v: p.hvp(x, theta, v), fgrad, c)
        for lm in map(Method.parse, linear_methods):
            errs = [float(np.linalg.norm(h_star))]  # q = 0 gives h = 0
            rep = solve_spd(sys, None, lm, StoppingRule.fixed(iters),
                            callback=lambda k, q: errs.append(
                                float(np.linalg.norm(-p.jtvp(x, theta, q) - h_star))))
            errs += errs[-1:] * (iters - rep.iterations)
            for k, e in enumerate(errs):
                rows.append({"linear": lm.value, "N": n_iter, "k": k,
                             "total_work": n_iter + k, "true_error": e})
    return rows


def error_at_budget(rows, linear, n_iter, budget):
    """Lowest error reached by the (linear, N) curve within ``budget`` work."""
    errs = [r["true_error"] for r in rows
            if r["linear"] == linear and r["N"] == n_iter and r["total_work"] <= budget]
    return min(errs) if errs else float("inf")


def hyperclean_sweep(tasks, combos, eps_delta, upper_step: float,
                     work_budget: Optional[int], max_upper_iters: int,
                     theta0=None, eval_eps: float = 1e-10,
                     on_cell: Optional[Callable] = None) -> dict:
    """Run the bilevel driver for every (lower, linear, eps, delta) cell.

    Returns ``{(lower, linear, eps, delta): [row dicts]}`` in cell order.
    ``on_cell(key, rows)`` is called as soon as each cell finishes.
    """
    n = tasks[0].lower.dim_theta
    theta0 = np.zeros(n) if theta0 is None else theta0
    out = {}
    for (lo, li), (eps, delta) in itertools.product(combos, eps_delta):
        lo, li = Method.parse(lo), Method.parse(li)
        cfg = BilevelConfig(
            upper_step=upper_step, tolerances=[(eps, delta)],
            hypergrad_cfg=HypergradConfig(LowerSolverParams(lo, StoppingRule.fixed(0)), li),
            max_upper_iters=max_upper_iters, work_budget=work_budget,
            eval_eps=eval_eps)
        t0 = time.perf_counter()
        trace = run_bilevel(tasks, theta0, cfg)
        key = (lo.value, li.value, eps, delta)
        log.info("%s+%s eps=%g delta=%g: %d steps, work %d, %.1fs", *key,
                 len(trace) - 1, trace[-1].cumulative_work, time.perf_counter() - t0)
        out[key] = [{
            "lower": lo.value, "linear": li.value, "eps": eps, "delta": delta,
            "upper_iter": r.upper_iter, "cumulative_work": r.cumulative_work,
            "upper_objective": r.upper_objective,
            "grad_norm_estimate": r.grad_norm_estimate,
            "aposteriori": r.aposteriori, "plateau": int(r.plateau),
        } for r in trace]
        if on_cell is not None:
            on_cell(key, out[key])
    return out


def work_to_reach(rows, threshold: float) -> Optional[int]:
    """Cumulative work of the first trace row with ``F <= threshold``."""
    for r in rows:
        if r["upper_objective"] <= threshold:
            return r["cumulative_work"]
    return None


def objective_at_work(rows, budget: int) -> float:
    """F at the last trace row whose cumulative work is within ``budget``."""
    eligible = [r for r in rows if r["cumulative_work"] <= budget]
    return eligible[-1]["upper_objective"]
