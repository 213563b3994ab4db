import math

import numpy as np
import pytest

from conftest import random_ordered_pair
from ibmot import (
    Coupling,
    Evaluator,
    QuadratureSpec,
    brownian_rap,
    inner_error,
    k_gradient,
    k_objective,
    k_upper_bound,
    k_value_and_gradient,
    k_variance_form,
    make_measure,
    second_moment,
)


class TestQuadratureSpec:
    def test_time_nodes_interior(self, rap, quad):
        assert quad.t_nodes.min() > rap.t0
        assert quad.t_nodes.max() < rap.t1

    @pytest.mark.parametrize("n", [8, 16, 32])
    def test_hermite_moments(self, rap, n):
        # exactness up to polynomial order 2n-1 against standard normal moments
        q = QuadratureSpec.build(rap, n_hermite=n, n_time=4)
        moment = 1.0
        for order in range(0, 2 * n, 2):
            got = float(np.dot(q.z_weights, q.z_nodes**order))
            assert got == pytest.approx(moment, rel=1e-12)
            moment *= order + 1  # E[Z^(k+2)] = (k+1) E[Z^k]
        for order in range(1, 2 * n - 1, 2):
            got = float(np.dot(q.z_weights, q.z_nodes**order))
            scale = float(np.dot(q.z_weights, np.abs(q.z_nodes) ** order))
            assert abs(got) <= 1e-13 * max(scale, 1.0)

    def test_rejects_tiny_counts(self, rap):
        with pytest.raises(ValueError):
            QuadratureSpec.build(rap, n_hermite=1)


class TestInnerError:
    def test_identity_coupling_zero(self, rap, quad):
        m = make_measure([-1.0, 0.5, 2.0], [0.2, 0.3, 0.5])
        c = Coupling(np.diag(m.weights), m.atoms, m.atoms)
        for t in (0.1, 0.5, 0.9):
            assert inner_error(c, rap, t, quad) == pytest.approx(0.0, abs=1e-12)

    def test_early_time_prior_variance(self, rap, quad):
        c = Coupling(np.array([[0.5, 0.5]]), np.array([0.0]), np.array([-1.0, 1.0]))
        assert inner_error(c, rap, 1e-9, quad) == pytest.approx(1.0, abs=1e-4)

    def test_matches_direct_monte_carlo(self, rap, quad, forced_2x2):
        # oracle: plain-density posterior + noise sampling, no shared code path
        _, _, coupling = forced_2x2
        t = 0.5
        g0, g1, v = float(rap.g0(t)), float(rap.g1(t)), float(rap.v(t))
        p, x, y = coupling.p, coupling.row_support, coupling.col_support
        rng = np.random.default_rng(41)
        idx = rng.choice(p.size, size=400_000, p=p.ravel())
        iu, jv = idx // p.shape[1], idx % p.shape[1]
        a = rng.normal(scale=math.sqrt(v), size=idx.size)
        info = g0 * x[iu] + g1 * y[jv] + a
        dens = np.exp(
            -0.5 * (info[:, None] - g0 * x[iu][:, None] - g1 * y[None, :]) ** 2 / v
        )
        wgt = dens * p[iu]
        m_vals = (wgt @ y) / wgt.sum(axis=1)
        sq = (y[jv] - m_vals) ** 2
        se = sq.std(ddof=1) / math.sqrt(sq.size)
        assert inner_error(coupling, rap, t, quad) == pytest.approx(sq.mean(), abs=3 * se)

    def test_rejects_endpoints_and_zero_rows(self, rap, quad, forced_2x2):
        _, _, coupling = forced_2x2
        with pytest.raises(ValueError):
            inner_error(coupling, rap, 0.0, quad)
        zero_row = Coupling(
            np.array([[0.5, 0.5], [0.0, 0.0]]), coupling.row_support, coupling.col_support
        )
        with pytest.raises(ValueError):
            inner_error(zero_row, rap, 0.5, quad)


class TestObjective:
    def test_identity_coupling_zero(self, rap, quad):
        m = make_measure([-1.0, 1.0])
        c = Coupling(np.diag(m.weights), m.atoms, m.atoms)
        assert k_objective(c, rap, quad) == pytest.approx(0.0, abs=1e-12)

    def test_matches_variance_form_on_ci_instances(self, rap, quad, ci_instances):
        for name, _, _, coupling in ci_instances:
            ko = k_objective(coupling, rap, quad)
            kv = k_variance_form(coupling, rap, quad)
            assert kv == pytest.approx(ko, rel=1e-8), name

    def test_upper_bound_on_ci_instances(self, rap, quad, ci_instances):
        for name, mu, nu, coupling in ci_instances:
            bound = k_upper_bound(mu, nu, rap)
            assert k_objective(coupling, rap, quad) <= bound + 1e-6, name

    def test_translation_invariance(self, rap, quad, forced_2x2):
        _, _, coupling = forced_2x2
        base = k_objective(coupling, rap, quad)
        shifted = Coupling(
            coupling.p, coupling.row_support + 7.5, coupling.col_support + 7.5
        )
        assert k_objective(shifted, rap, quad) == pytest.approx(base, rel=1e-10)

    def test_quadrature_plateau(self, rap, forced_2x2):
        _, _, coupling = forced_2x2
        base = k_objective(coupling, rap, QuadratureSpec.build(rap))
        fine = k_objective(
            coupling, rap, QuadratureSpec.build(rap, n_hermite=1024, n_time=96)
        )
        assert abs(base - fine) / abs(fine) < 1e-6

    def test_euler_identity(self, rap, quad, ci_instances):
        # the objective is 1-homogeneous in the entries
        for name, _, _, coupling in ci_instances:
            value, grad = k_value_and_gradient(coupling, rap, quad)
            assert value == pytest.approx(float((grad * coupling.p).sum()), rel=1e-14), name

    def test_discretized_gaussian_brownian_value(self, rap):
        # 30-point midpoint discretization of N(0,1) -> N(0,2), conditional-normal coupling
        from scipy.stats import norm

        n = 30
        x = norm.ppf((np.arange(n) + 0.5) / n)
        y = math.sqrt(2.0) * x
        edges = math.sqrt(2.0) * norm.ppf(np.clip(np.arange(n + 1) / n, 0.0, 1.0))
        p = (norm.cdf(edges[None, 1:] - x[:, None]) - norm.cdf(edges[None, :-1] - x[:, None])) / n
        c = Coupling(p, x, y)
        value = k_objective(c, rap, QuadratureSpec.build(rap, n_hermite=128))
        assert value == pytest.approx(1.0, rel=0.05)

    def test_positive_unless_degenerate(self, rap, quad, ci_instances):
        for name, _, _, coupling in ci_instances:
            if coupling.p.shape[1] > 1 and np.any((coupling.p > 0).sum(axis=1) > 1):
                assert k_objective(coupling, rap, quad) > 0, name


class TestGradient:
    def test_single_column_zero(self, rap, quad):
        c = Coupling(np.array([[0.6], [0.4]]), np.array([-1.0, 1.0]), np.array([0.0]))
        grad = k_gradient(c, rap, quad)
        assert np.abs(grad).max() <= 1e-12

    def test_matches_finite_differences_2x3(self, rap):
        quad = QuadratureSpec.build(rap, n_hermite=128)
        rng = np.random.default_rng(42)
        x = np.array([-1.0, 1.0])
        y = np.array([-2.0, 0.3, 2.0])
        p = rng.uniform(0.05, 0.4, size=(2, 3))
        evaluator = Evaluator(brownian_rap(), quad, y, cache=True)
        value, grad = evaluator.value_and_gradient(p)
        step = 1e-5
        for u in range(2):
            for h in range(3):
                bumped, dipped = p.copy(), p.copy()
                bumped[u, h] += step
                dipped[u, h] -= step
                fd = (evaluator.value(bumped) - evaluator.value(dipped)) / (2 * step)
                assert abs(fd - grad[u, h]) / max(abs(fd), 1e-12) <= 1e-4

    def test_mirror_symmetry(self, rap, quad):
        # flipping both supports and reversing the matrix leaves the gradient mirrored
        p = np.array([[0.3, 0.15, 0.05], [0.05, 0.15, 0.3]])
        x = np.array([-1.0, 1.0])
        y = np.array([-2.0, 0.0, 2.0])
        grad = k_gradient(Coupling(p, x, y), rap, quad)
        assert np.allclose(grad, grad[::-1, ::-1], atol=1e-12)

    def test_entries_nonnegative(self, rap, quad, ci_instances):
        for name, _, _, coupling in ci_instances:
            assert k_gradient(coupling, rap, quad).min() >= 0.0, name


class TestEvaluatorBatch:
    def test_batch_matches_scalar(self, rap, quad_fast):
        rng = np.random.default_rng(43)
        mu, nu, witness = random_ordered_pair(rng, 2, 4)
        evaluator = Evaluator(rap, quad_fast, nu.atoms, cache=True)
        batch = np.stack([witness * s for s in (1.0, 0.7, 1.3)])
        got = evaluator.values(batch)
        want = [evaluator.value(b) for b in batch]
        assert np.allclose(got, want, rtol=1e-13)

    def test_collapsed_posterior_fallback(self, rap):
        # a zero entry with a far-away anchor exercises the 0/0 repair path
        quad = QuadratureSpec.build(rap, n_hermite=64, n_time=96)
        p = np.array([[0.5, 0.0, 0.5]])
        y = np.array([-60.0, 0.0, 60.0])
        c = Coupling(p, np.array([0.0]), y)
        value = k_objective(c, rap, quad)
        assert np.isfinite(value)
        grad = k_gradient(c, rap, quad)
        assert np.all(np.isfinite(grad))
