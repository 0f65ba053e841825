"""Command-line front end: ``bounds``, ``tradeoff``, ``hyperclean``, ``selftest``.

Every CSV is written with a header row, LF line endings and floats in
17-significant-digit form, next to a ``<csv>.config.txt`` sidecar holding
the full effective configuration.  Settings come from built-in defaults,
then the ``[common]`` and ``[<command>]`` sections of ``--config``, then
explicit flags.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .core import (ContractViolation, NumericError, check_hvp_symmetry,
                   finite_diff_check_grad, finite_diff_check_jacobian)
from .hypergradient import (HypergradConfig, compute_hypergradient,
                            iad_gd_reference, iad_hb_reference)
from .lower import LowerSolverParams, Method, StoppingRule, optimal_params
from .problems import gen_hyperclean, gen_quadratic

log = logging.getLogger("inexact_hypergrad")

DEFAULTS = {
    "bounds": {"seed": 0, "rows": 1000, "dim": 10, "mode": "lower", "iters": None,
               "lower_iters": 100, "exact_x": False, "out": "bounds.csv"},
    "tradeoff": {"seed": 0, "rows": 1000, "dim": 10, "lower_iters": "20,60,100",
                 "iters": 200, "out": "tradeoff.csv"},
    "hyperclean": {"seed": 0, "n_train": 2000, "n_val": 500, "n_classes": 5,
                   "dim_f": 50, "penalty": 1e-3, "eps": "0.01,0.1",
                   "delta": "0.01,0.1",
                   "combos": "GD+CG,HB+CG,FISTA+CG,GD+HB,HB+HB,FISTA+HB",
                   "upper_step": 1000.0, "work_budget": 10000,
                   "max_upper_iters": 2000, "out": "hyperclean_out"},
    "selftest": {"seed": 0, "quick": False, "break_symmetry": False},
}


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            return ""
        return "%.17g" % value
    return str(value)


def write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) for c in columns])


def write_sidecar(csv_path, command, settings) -> None:
    cp = configparser.ConfigParser()
    cp[command] = {k: fmt(v) for k, v in sorted(settings.items())}
    with open(str(csv_path) + ".config.txt", "w", newline="\n") as fh:
        cp.write(fh)


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if like is None:
        return int(raw) if raw.strip() else None
    return raw


def effective_settings(command, args) -> dict:
    settings = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise FileNotFoundError(f"config file not found: {args.config}")
        for section in ("common", command):
            if cp.has_section(section):
                for key, raw in cp.items(section):
                    key = key.replace("-", "_")
                    if key in settings:
                        settings[key] = _coerce(raw, settings[key])
    for key in settings:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            settings[key] = val
    return settings


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def cmd_bounds(s) -> int:
    _, task, oracle = gen_quadratic(s["seed"], s["rows"], s["dim"])
    theta = np.ones(s["dim"])
    if s["mode"] == "lower":
        iters = s["iters"] or 100
        rows = ex.bounds_lower(task, theta, iters)
        columns = ex.LOWER_COLUMNS
    elif s["mode"] == "hypergrad":
        iters = s["iters"] or 200
        n = None if s["exact_x"] else s["lower_iters"]
        rows = ex.bounds_hypergrad(task, theta, oracle.h_star(theta), iters, n)
        columns = ex.HYPERGRAD_COLUMNS
    else:
        raise ContractViolation(f"unknown mode {s['mode']!r}")
    write_csv(s["out"], columns, rows)
    write_sidecar(s["out"], "bounds", s)
    return 0


def cmd_tradeoff(s) -> int:
    _, task, oracle = gen_quadratic(s["seed"], s["rows"], s["dim"])
    theta = np.ones(s["dim"])
    grid = _int_list(s["lower_iters"])
    if not grid:
        raise ContractViolation("lower-iters grid is empty")
    rows = ex.tradeoff(task, theta, oracle.h_star(theta), grid, s["iters"])
    write_csv(s["out"], ex.TRADEOFF_COLUMNS, rows)
    write_sidecar(s["out"], "tradeoff", s)
    return 0


def cmd_hyperclean(s) -> int:
    _, tasks = gen_hyperclean(s["seed"], s["n_train"], s["n_val"], s["n_classes"],
                              s["dim_f"], s["penalty"])
    combos = [tuple(c.split("+")) for c in str(s["combos"]).split(",") if c.strip()]
    grid = [(e, d) for e in _float_list(s["eps"]) for d in _float_list(s["delta"])]
    if not combos or not grid:
        raise ContractViolation("combos and tolerance grids must be nonempty")
    out_dir = Path(s["out"])
    out_dir.mkdir(parents=True, exist_ok=True)

    def write_cell(key, rows):
        lo, li, eps, delta = key
        path = out_dir / f"trace_{lo}_{li}_eps{fmt(eps)}_delta{fmt(delta)}.csv"
        write_csv(path, ex.TRACE_COLUMNS, rows)
        write_sidecar(path, "hyperclean", s)

    ex.hyperclean_sweep(tasks, combos, grid, s["upper_step"], s["work_budget"],
                        s["max_upper_iters"], on_cell=write_cell)
    return 0


def _break_symmetry(task):
    d = task.lower.dim_x
    skew = np.triu(np.ones((d, d)), 1)
    hvp = task.lower.hvp
    bad = replace(task.lower, hvp=lambda x, th, v: hvp(x, th, v) + skew @ v)
    return replace(task, lower=bad)


def selftest_checks(quick=False, break_symmetry=False, seed=0):
    """Yield ``(name, passed, detail)`` for each self-check."""
    _, task, oracle = gen_quadratic(seed, 100, 10)
    if break_symmetry:
        task = _break_symmetry(task)
    p = task.lower
    theta = np.ones(10)
    c = p.curvature(theta)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(10)

    yield "quadratic hvp symmetry", check_hvp_symmetry(p, x, theta, 10, 1e-10), ""

    _, htasks = gen_hyperclean(seed, n_train=60, n_val=30, n_classes=3, dim_f=4)
    ht = htasks[0]
    hth = rng.standard_normal(ht.lower.dim_theta)
    hx = 0.3 * rng.standard_normal(ht.lower.dim_x)
    yield "hyperclean hvp symmetry", check_hvp_symmetry(ht.lower, hx, hth, 10, 1e-10), ""

    dirs = rng.standard_normal((3, ht.lower.dim_x))
    err = finite_diff_check_jacobian(lambda z: ht.lower.grad_g(z, hth),
                                     lambda v: ht.lower.hvp(hx, hth, v), hx, dirs)
    yield "hyperclean hvp vs finite differences", err <= 1e-5, f"err={err:.2e}"
    tdirs = rng.standard_normal((3, ht.lower.dim_theta))
    # <jtvp(v), u> must match d/dtheta <grad_g, v> along u
    v = rng.standard_normal(ht.lower.dim_x)
    worst = 0.0
    for u in tdirs:
        cd = (ht.lower.grad_g(hx, hth + 1e-5 * u) - ht.lower.grad_g(hx, hth - 1e-5 * u)) @ v / 2e-5
        an = ht.lower.jtvp(hx, hth, v) @ u
        worst = max(worst, abs(cd - an) / (1 + abs(an)))
    yield "hyperclean jtvp vs finite differences", worst <= 1e-5, f"err={worst:.2e}"
    err = finite_diff_check_grad(ht.upper.f, ht.upper.grad_f, hx)
    yield "hyperclean grad_f vs finite differences", err <= 1e-5, f"err={err:.2e}"

    err = finite_diff_check_grad(oracle.F_star, oracle.h_star, theta, 1e-3)
    yield "quadratic oracle h* vs finite differences", err <= 1e-5, f"err={err:.2e}"

    kmax = 20 if quick else 100
    worst = 0.0
    x0 = np.zeros(10)
    for m in (Method.GD, Method.HB):
        prm = optimal_params(m, c)
        for K in range(1, kmax + 1):
            if m is Method.GD:
                ref = iad_gd_reference(task, theta, x0, K, prm.alpha)
            else:
                ref = iad_hb_reference(task, theta, x0, K, prm.alpha, prm.beta)
            cfg = HypergradConfig(LowerSolverParams(m, StoppingRule.fixed(K)), m,
                                  StoppingRule.fixed(K))
            h = compute_hypergradient(task, theta, x0, cfg).h_tilde
            worst = max(worst, float(np.linalg.norm(ref - h) / np.linalg.norm(ref)))
    yield f"IAD/IFT equivalence K<= {kmax}", worst <= 1e-10, f"max rel diff={worst:.2e}"

    hstar = oracle.h_star(theta)
    iters = 50 if quick else 200
    rows = ex.bounds_hypergrad(task, theta, hstar, iters, 20 if quick else 100)
    slack = 1e-12 * (1 + np.linalg.norm(hstar))
    bad = sum(r["aposteriori_bound"] < r["true_error"] - slack for r in rows)
    yield "a posteriori dominance", bad == 0, f"{len(rows)} points, {bad} violations"
    if not quick:
        floor = 1e-13 * np.linalg.norm(hstar)
        rows = ex.bounds_hypergrad(task, theta, hstar, iters, None,
                                   linear_methods=(Method.GD, Method.CG))
        rows += ex.bounds_hypergrad(task, theta, hstar, iters, 60,
                                    lower_methods=(Method.GD,),
                                    linear_methods=(Method.GD, Method.CG))
        bad = sum(r["apriori_bound"] < r["true_error"] for r in rows
                  if r["true_error"] >= floor)
        yield "a priori dominance (GD, CG)", bad == 0, f"{len(rows)} points, {bad} violations"


def cmd_selftest(s) -> int:
    t0 = time.perf_counter()
    failed = 0
    for name, ok, detail in selftest_checks(s["quick"], s["break_symmetry"], s["seed"]):
        failed += not ok
        print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    print(f"{'FAILED' if failed else 'OK'}: {failed} failing check(s), "
          f"{time.perf_counter() - t0:.1f}s")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inexact-hypergrad",
        description="Inexact hypergradient experiments with certified error bounds.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--config", help="key=value file with [common]/[command] sections")
        if out:
            sp.add_argument("--out")

    sp = sub.add_parser("bounds", help="error bounds vs. true errors (quadratic)")
    common(sp)
    sp.add_argument("--mode", choices=["lower", "hypergrad"])
    sp.add_argument("--iters", type=int)
    sp.add_argument("--lower-iters", type=int, dest="lower_iters")
    sp.add_argument("--exact-x", action="store_true", dest="exact_x")
    sp.add_argument("--rows", type=int)
    sp.add_argument("--dim", type=int)

    sp = sub.add_parser("tradeoff", help="error vs. total work for several N")
    common(sp)
    sp.add_argument("--lower-iters", dest="lower_iters", help="comma-separated N grid")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--rows", type=int)
    sp.add_argument("--dim", type=int)

    sp = sub.add_parser("hyperclean", help="bilevel data hypercleaning sweep")
    common(sp)
    sp.add_argument("--eps", help="comma-separated lower tolerances")
    sp.add_argument("--delta", help="comma-separated linear tolerances")
    sp.add_argument("--combos", help="e.g. HB+CG,GD+GD")
    sp.add_argument("--upper-step", type=float, dest="upper_step")
    sp.add_argument("--work-budget", type=int, dest="work_budget")
    sp.add_argument("--max-upper-iters", type=int, dest="max_upper_iters")
    sp.add_argument("--n-train", type=int, dest="n_train")
    sp.add_argument("--n-val", type=int, dest="n_val")
    sp.add_argument("--n-classes", type=int, dest="n_classes")
    sp.add_argument("--dim-f", type=int, dest="dim_f")
    sp.add_argument("--penalty", type=float)

    sp = sub.add_parser("selftest", help="equivalence, dominance and derivative checks")
    common(sp, out=False)
    sp.add_argument("--quick", action="store_true")
    sp.add_argument("--break-symmetry", action="store_true", dest="break_symmetry")
    return parser


COMMANDS = {"bounds": cmd_bounds, "tradeoff": cmd_tradeoff,
            "hyperclean": cmd_hyperclean, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = effective_settings(args.command, args)
        return COMMANDS[args.command](settings)
    except (NumericError, ContractViolation, OSError, ValueError) as exc:
        print(f"error: {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
