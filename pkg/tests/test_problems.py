import logging
import math

import numpy as np
import pytest

from inexact_hypergrad import ContractViolation, check_curvature, check_hvp_symmetry
from inexact_hypergrad.core import finite_diff_check_grad, finite_diff_check_jacobian
from inexact_hypergrad.problems import (QuadraticInstance, gen_hyperclean, gen_quadratic,
                                        load_instance, quadratic_from_arrays,
                                        rng_stream, save_instance)
from inexact_hypergrad.problems import quadratic as quadratic_mod
from oracles import (central_gradient, dense_quadratic, hyperclean_lower_value,
                     hyperclean_upper_value, philox_uniforms)

# seed 0, theta = 1: (mu, L, lip_f, |B|, F*, |h*|) from dense numpy.linalg
FROZEN_QUAD = {
    100: (9.6183823329603992, 498.27496612084332, 538.40096233321378,
          487.05793731269279, 867.39690423562683, 927.26037827264065),
    1000: (140.49611434314309, 5150.3475383878704, 5125.0634622879188,
           5020.9681565496676, 3077.4312821366566, 5344.9344442734919),
}
PHILOX_SEED0 = [0.011546754286331562, 0.24154919656271812,
                0.11142585551493822, 0.5644146216071337]


class TestRng:
    def test_frozen_stream(self):
        assert rng_stream(0).uniform(4).tolist() == PHILOX_SEED0
        np.testing.assert_array_equal(rng_stream(7).uniform(9), philox_uniforms(7, 9))

    def test_repeatable(self):
        a, b = rng_stream(0), rng_stream(0)
        np.testing.assert_array_equal(a.normal(1000), b.normal(1000))
        np.testing.assert_array_equal(a.uniform(10), b.uniform(10))

    def test_seeds_differ(self):
        assert not np.array_equal(rng_stream(0).uniform(5), rng_stream(1).uniform(5))

    def test_uniform_mean(self):
        u = rng_stream(0).uniform(100_000)
        assert abs(u.mean() - 0.5) <= 0.01
        assert u.min() >= 0.0 and u.max() < 1.0

    def test_gaussian_variance(self):
        z = rng_stream(0).normal(100_000)
        assert abs(z.var() - 1.0) <= 0.05
        assert abs(z.mean()) <= 0.02

    def test_odd_sizes_and_shapes(self):
        assert rng_stream(3).normal((3, 5)).shape == (3, 5)
        assert isinstance(rng_stream(3).uniform(), float)

    def test_integers_and_permutation(self):
        r = rng_stream(2)
        k = r.integers(4, 10_000)
        assert k.min() == 0 and k.max() == 3
        assert sorted(r.permutation(50)) == list(range(50))


class TestQuadratic:
    @pytest.mark.parametrize("rows", [100, 1000])
    def test_frozen_constants(self, rows, ones10):
        _, task, oracle = gen_quadratic(0, rows, 10)
        mu, L, lip_f, bn, F, hn = FROZEN_QUAD[rows]
        c = task.lower.curvature(ones10)
        assert c.mu == pytest.approx(mu, rel=1e-12)
        assert c.big_l == pytest.approx(L, rel=1e-12)
        assert (c.lip_a, c.lip_b) == (0.0, 0.0)
        assert task.upper.lip_grad_f == pytest.approx(lip_f, rel=1e-12)
        assert task.lower.b_norm(None, ones10) == pytest.approx(bn, rel=1e-12)
        assert oracle.F_star(ones10) == pytest.approx(F, rel=1e-10)
        assert np.linalg.norm(oracle.h_star(ones10)) == pytest.approx(hn, rel=1e-10)

    def test_oracle_matches_dense_solve(self, quad100):
        inst, _, oracle = quad100
        theta = np.linspace(-1, 2, 10)
        ref = dense_quadratic(inst, theta)
        np.testing.assert_allclose(oracle.x_star(theta), ref["x_star"], rtol=1e-10)
        np.testing.assert_allclose(oracle.h_star(theta), ref["h_star"], rtol=1e-10)

    def test_stationarity(self, quad1000, ones10):
        _, task, oracle = quad1000
        assert np.linalg.norm(task.lower.grad_g(oracle.x_star(ones10), ones10)) <= 1e-8

    def test_scalar_closed_form(self):
        inst = QuadraticInstance(np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]),
                                 np.array([0.0]), np.array([0.0]), 0)
        _, oracle = quadratic_from_arrays(inst)
        for th in (-2.0, 0.0, 3.5):
            assert oracle.x_star(np.array([th]))[0] == pytest.approx(-th)
        slope = oracle.x_star(np.array([1.0]))[0] - oracle.x_star(np.array([0.0]))[0]
        assert slope == pytest.approx(-1.0)

    def test_hstar_finite_differences(self):
        _, _, oracle = gen_quadratic(0, 100, 5)
        theta = np.ones(5)
        h = oracle.h_star(theta)
        fd = central_gradient(oracle.F_star, theta, h=1e-4)
        assert np.linalg.norm(fd - h) <= 1e-5 * np.linalg.norm(h)

    def test_derivatives_consistent(self, quad100, ones10):
        _, task, _ = quad100
        p = task.lower
        x = np.linspace(0, 1, 10)
        assert finite_diff_check_grad(lambda z: p.value(z, ones10),
                                      lambda z: p.grad_g(z, ones10), x) <= 1e-6
        assert finite_diff_check_jacobian(lambda z: p.grad_g(z, ones10),
                                          lambda v: p.hvp(x, ones10, v), x,
                                          np.eye(10)) <= 1e-6
        # jtvp: d/dtheta <grad_g, v>
        v = np.arange(10.0)
        assert finite_diff_check_grad(lambda th: p.grad_g(x, th) @ v,
                                      lambda th: p.jtvp(x, th, v), ones10) <= 1e-6

    def test_regenerates_on_degenerate_draw(self, monkeypatch, caplog):
        calls = []
        real = quadratic_mod._is_degenerate

        def fake(a2):
            calls.append(1)
            return len(calls) == 1 or real(a2)
        monkeypatch.setattr(quadratic_mod, "_is_degenerate", fake)
        with caplog.at_level(logging.WARNING):
            inst, _, _ = gen_quadratic(5, 20, 3)
        assert inst.seed == 6
        assert "regenerating" in caplog.text

    @pytest.mark.parametrize("rows,dim,noise", [(3, 4, 0.01), (5, 0, 0.01), (5, 2, -1.0)])
    def test_invalid(self, rows, dim, noise):
        with pytest.raises(ContractViolation):
            gen_quadratic(0, rows, dim, noise)

    def test_deterministic(self):
        a, _, _ = gen_quadratic(3, 50, 4)
        b, _, _ = gen_quadratic(3, 50, 4)
        for name in ("a1", "a2", "a3", "b1", "b2"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


class TestHyperclean:
    def test_corruption(self):
        inst, _ = gen_hyperclean(0)
        assert inst.corrupt_mask.sum() == math.floor(0.1 * 2000)
        bad = inst.corrupt_mask
        assert np.all(inst.y_train[bad] != inst.y_train_clean[bad])
        assert np.array_equal(inst.y_train[~bad], inst.y_train_clean[~bad])
        assert inst.y_train.min() == 0 and inst.y_train.max() == 4

    def test_half_weights_at_zero(self, small_clean):
        inst, task = small_clean
        x = np.linspace(-0.5, 0.5, task.lower.dim_x)
        W = x.reshape(inst.n_classes, -1)
        ce = []
        for xj, yj in zip(inst.x_train, inst.y_train):
            z = W @ xj
            ce.append(np.log(np.sum(np.exp(z))) - z[yj])
        expected = 0.5 * np.mean(ce) + inst.penalty_c * float(x @ x)
        assert task.lower.value(x, np.zeros(60)) == pytest.approx(expected, rel=1e-12)

    def test_values_match_reference(self, small_clean):
        inst, task = small_clean
        rng = np.random.default_rng(4)
        x, th = rng.standard_normal(task.lower.dim_x), rng.standard_normal(60)
        assert task.lower.value(x, th) == pytest.approx(
            hyperclean_lower_value(inst, x, th), rel=1e-12)
        assert task.upper.f(x) == pytest.approx(hyperclean_upper_value(inst, x), rel=1e-12)
        g = central_gradient(lambda z: hyperclean_lower_value(inst, z, th), x)
        np.testing.assert_allclose(task.lower.grad_g(x, th), g, atol=1e-8)

    def test_hvp_finite_differences(self, small_clean):
        _, task = small_clean
        p = task.lower
        rng = np.random.default_rng(5)
        x, th = rng.standard_normal(p.dim_x), rng.standard_normal(60)
        err = finite_diff_check_jacobian(lambda z: p.grad_g(z, th),
                                         lambda v: p.hvp(x, th, v), x,
                                         rng.standard_normal((5, p.dim_x)))
        assert err <= 1e-5

    def test_jtvp_finite_differences(self, small_clean):
        _, task = small_clean
        p = task.lower
        rng = np.random.default_rng(6)
        x, th = rng.standard_normal(p.dim_x), rng.standard_normal(60)
        v = rng.standard_normal(p.dim_x)
        assert finite_diff_check_grad(lambda t: p.grad_g(x, t) @ v,
                                      lambda t: p.jtvp(x, t, v), th) <= 1e-5
        u = rng.standard_normal(60)
        assert p.jvp_theta(x, th, u) @ v == pytest.approx(p.jtvp(x, th, v) @ u, rel=1e-12)

    def test_curvature_and_symmetry(self, small_clean):
        inst, task = small_clean
        p = task.lower
        rng = np.random.default_rng(7)
        for _ in range(3):
            x, th = 2 * rng.standard_normal(p.dim_x), 3 * rng.standard_normal(60)
            assert check_hvp_symmetry(p, x, th)
            assert check_curvature(p, x, th, trials=20)
            v = rng.standard_normal(p.dim_x)
            assert v @ p.hvp(x, th, v) / (v @ v) >= 2 * inst.penalty_c - 1e-10

    def test_constants_follow_theta(self, small_clean):
        _, task = small_clean
        lo = task.lower.curvature(np.full(60, -5.0)).big_l
        hi = task.lower.curvature(np.full(60, 5.0)).big_l
        assert lo < hi
        assert task.lower.curvature(np.zeros(60)).mu == pytest.approx(2e-3)

    def test_append_bias(self):
        inst, tasks = gen_hyperclean(0, n_train=30, n_val=10, n_classes=2, dim_f=3,
                                     append_bias=True)
        assert inst.x_train.shape == (30, 4) and np.all(inst.x_train[:, -1] == 1)
        assert tasks[0].lower.dim_x == 8

    @pytest.mark.parametrize("kwargs", [{"n_classes": 1}, {"corrupt_frac": 1.0},
                                        {"penalty_c": 0.0}, {"n_train": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ContractViolation):
            gen_hyperclean(0, **kwargs)


class TestSerialization:
    def test_quadratic_round_trip(self, tmp_path, quad100):
        inst = quad100[0]
        save_instance(tmp_path / "q.bin", inst)
        back = load_instance(tmp_path / "q.bin")
        assert back.seed == inst.seed
        for name in ("a1", "a2", "a3", "b1", "b2"):
            np.testing.assert_array_equal(getattr(back, name), getattr(inst, name))

    def test_hyperclean_round_trip(self, tmp_path, small_clean):
        inst = small_clean[0]
        save_instance(tmp_path / "h.bin", inst)
        back = load_instance(tmp_path / "h.bin")
        assert back.n_classes == inst.n_classes and back.penalty_c == inst.penalty_c
        np.testing.assert_array_equal(back.corrupt_mask, inst.corrupt_mask)
        np.testing.assert_array_equal(back.x_train, inst.x_train)
        np.testing.assert_array_equal(back.y_train, inst.y_train)

    def test_bytes_are_reproducible(self, tmp_path, quad100):
        save_instance(tmp_path / "a.bin", quad100[0])
        save_instance(tmp_path / "b.bin", gen_quadratic(0, 100, 10)[0])
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
        assert (tmp_path / "a.bin").read_bytes()[:4] == b"IHGI"

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"nope")
        with pytest.raises(ValueError):
            load_instance(tmp_path / "x.bin")
