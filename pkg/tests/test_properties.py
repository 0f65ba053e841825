import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from inexact_hypergrad import (BilevelTask, CurvatureConstants, HypergradConfig,
                               LowerProblem, LowerSolverParams, SpdSystem, StoppingRule,
                               UpperObjective, aposteriori_bound, apriori_lower_bound,
                               apriori_residual_bound, check_hvp_symmetry,
                               compute_hypergradient, iad_gd_reference, iad_hb_reference,
                               optimal_params, rate_constant, solve_lower, solve_spd)
from inexact_hypergrad.problems import gen_quadratic, load_instance, rng_stream, save_instance

curvatures = st.tuples(st.floats(1e-3, 1e2), st.floats(1.0, 1e4)).map(
    lambda p: CurvatureConstants(p[0], p[0] * p[1]))
methods = st.sampled_from(["GD", "HB", "FISTA"])


def spd_matrix(seed, d, kappa):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    ev = np.geomspace(1.0, kappa, d)
    return (Q * ev) @ Q.T, CurvatureConstants(1.0, float(kappa))


@given(curvatures, methods)
def test_rate_in_unit_interval(c, method):
    assert 0.0 <= rate_constant(method, c) < 1.0


@given(curvatures, methods, st.integers(0, 300), st.floats(0.0, 1e3))
def test_lower_bound_nonincreasing(c, method, k, dist0):
    a = apriori_lower_bound(method, c, k, dist0).value
    b = apriori_lower_bound(method, c, k + 1, dist0).value
    assert 0.0 <= b <= a * (1 + 1e-12)


@given(curvatures, st.sampled_from(["GD", "HB", "CG"]), st.integers(0, 300))
def test_residual_bound_nonincreasing(c, method, k):
    a = apriori_residual_bound(method, c, k, 1.0).value
    assert apriori_residual_bound(method, c, k + 1, 1.0).value <= a * (1 + 1e-12)
    assert apriori_residual_bound(method, c, k, 2.0).value == 2.0 * a


def _toy(lip_a, lip_b):
    lower = LowerProblem(1, 1, lambda x, t: x, lambda x, t, v: v, lambda x, t, v: v,
                         CurvatureConstants(1.0, 2.0, lip_a, lip_b))
    return BilevelTask(lower, UpperObjective(lambda x: 0.0, lambda x: x, 3.0))


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 1), st.floats(0, 1),
       st.floats(0, 1), st.floats(0, 1))
def test_aposteriori_monotone(la, lb, e1, e2, d1, d2):
    t = _toy(la, lb)
    lo = aposteriori_bound(t, np.zeros(1), np.zeros(1), min(e1, e2), min(d1, d2), 2.0, 1.5)
    hi = aposteriori_bound(t, np.zeros(1), np.zeros(1), max(e1, e2), max(d1, d2), 2.0, 1.5)
    assert 0.0 <= lo.value <= hi.value


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.floats(1.0, 1e3))
def test_cg_solves_random_spd(seed, d, kappa):
    A, c = spd_matrix(seed, d, kappa)
    b = np.random.default_rng(seed + 1).standard_normal(d)
    tol = 1e-9 * (1 + np.linalg.norm(b))
    rep = solve_spd(SpdSystem(lambda v: A @ v, b, c), stop=StoppingRule.tolerance(tol, 500))
    assert rep.converged
    assert np.linalg.norm(A @ rep.q_tilde - b) <= tol


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8), st.floats(1.0, 100.0))
def test_symmetric_hvp_passes(seed, d, kappa):
    A, c = spd_matrix(seed, d, kappa)
    p = LowerProblem(d, 1, lambda x, t: A @ x, lambda x, t, v: A @ v,
                     lambda x, t, v: np.zeros(1), c)
    assert check_hvp_symmetry(p, np.zeros(d), np.zeros(1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.floats(2.0, 100.0))
def test_gd_contracts_at_optimal_rate(seed, d, kappa):
    A, c = spd_matrix(seed, d, kappa)
    x0 = np.random.default_rng(seed).standard_normal(d)
    p = LowerProblem(d, 1, lambda x, t: A @ x, lambda x, t, v: A @ v,
                     lambda x, t, v: np.zeros(1), c)
    lam = rate_constant("GD", c)
    errs = []
    solve_lower(p, np.zeros(1), x0, LowerSolverParams("GD", StoppingRule.fixed(40)),
                callback=lambda k, x: errs.append((k, np.linalg.norm(x))))
    for k, e in errs:
        assert e <= lam ** k * np.linalg.norm(x0) * (1 + 1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 500), st.integers(2, 6), st.integers(1, 40), st.booleans())
def test_iad_equals_ift_on_random_quadratics(seed, dim, K, heavy_ball):
    _, task, _ = gen_quadratic(seed, 4 * dim, dim)
    theta = np.ones(dim)
    method = "HB" if heavy_ball else "GD"
    prm = optimal_params(method, task.lower.curvature(theta))
    if heavy_ball:
        ref = iad_hb_reference(task, theta, np.zeros(dim), K, prm.alpha, prm.beta)
    else:
        ref = iad_gd_reference(task, theta, np.zeros(dim), K, prm.alpha)
    cfg = HypergradConfig(LowerSolverParams(method, StoppingRule.fixed(K)), method,
                          StoppingRule.fixed(K))
    h = compute_hypergradient(task, theta, np.zeros(dim), cfg).h_tilde
    assert np.linalg.norm(h - ref) <= 1e-10 * (1 + np.linalg.norm(ref))


@given(st.integers(0, 2 ** 64 - 1))
def test_rng_repeatable_for_any_seed(seed):
    assert np.array_equal(rng_stream(seed).normal(7), rng_stream(seed).normal(7))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 4))
def test_instance_round_trip(tmp_path_factory, seed, dim):
    inst, _, _ = gen_quadratic(seed, dim + 3, dim)
    path = tmp_path_factory.mktemp("inst") / "q.bin"
    save_instance(path, inst)
    back = load_instance(path)
    assert all(np.array_equal(getattr(inst, n), getattr(back, n))
               for n in ("a1", "a2", "a3", "b1", "b2"))
