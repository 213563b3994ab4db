import math

import numpy as np
import pytest

from ibmot import (
    Coupling,
    RapConfig,
    brownian_rap,
    dM_dp,
    make_measure,
    noise_std,
    posterior_at,
    rap_from_driver_kernel,
    weight_fn,
)


def center_split_coupling():
    # mu = delta_0, nu = (delta_-1 + delta_1)/2
    return Coupling(np.array([[0.5, 0.5]]), np.array([0.0]), np.array([-1.0, 1.0]))


class TestRapConfig:
    def test_brownian_validates(self):
        brownian_rap().validate()
        brownian_rap(0.5, 3.0).validate()

    def test_rejects_bad_interval(self):
        with pytest.raises(ValueError):
            brownian_rap(1.0, 1.0)

    def test_validate_catches_broken_signal(self):
        rap = brownian_rap()
        broken = RapConfig(
            t0=0.0, t1=1.0, g0=lambda t: 0.5 * rap.g0(t), g1=rap.g1, v=rap.v, w=rap.w
        )
        with pytest.raises(ValueError):
            broken.validate()

    def test_kernel_handles_reproduce_brownian_weight(self):
        rap = brownian_rap(0.0, 2.0)
        built = rap_from_driver_kernel(
            h1=lambda t: np.asarray(t, dtype=float),
            h2=lambda t: np.ones_like(np.asarray(t, dtype=float)),
            dh1=lambda t: np.ones_like(np.asarray(t, dtype=float)),
            dh2=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
            g0=rap.g0, g1=rap.g1, v=rap.v, t0=0.0, t1=2.0,
        )
        ts = np.linspace(0.05, 1.95, 31)
        assert np.allclose(built.w(ts), rap.w(ts), rtol=1e-13)


class TestNoiseStd:
    def test_midpoint(self):
        assert noise_std(brownian_rap(), 0.5) == pytest.approx(0.5)

    def test_left_endpoint(self):
        assert noise_std(brownian_rap(), 0.0) == 0.0

    def test_wide_interval(self):
        assert noise_std(brownian_rap(0.0, 2.0), 0.5) == pytest.approx(math.sqrt(0.375))

    def test_outside_interval(self):
        with pytest.raises(ValueError):
            noise_std(brownian_rap(), 1.5)


class TestWeightFn:
    def test_midpoint(self):
        assert weight_fn(brownian_rap(), 0.5) == pytest.approx(2.0)

    def test_near_endpoint(self):
        assert weight_fn(brownian_rap(), 0.9) == pytest.approx(10.0)

    def test_pole_rejected(self):
        with pytest.raises(ValueError):
            weight_fn(brownian_rap(), 1.0)


class TestPosterior:
    def test_degenerate_row(self):
        c = Coupling(np.array([[0.0, 1.0]]), np.array([0.5]), np.array([-1.0, 2.0]))
        for a, t in [(0.0, 0.5), (-0.7, 0.2), (2.0, 0.9)]:
            post = posterior_at(c, brownian_rap(), 0, 0, a, t)
            assert post.M == pytest.approx(2.0)
            assert post.Var == pytest.approx(0.0, abs=1e-30)

    def test_two_atom_log_odds(self):
        # information 0.2 at t=0.5: posterior mean tanh(I g1 / v) = tanh(0.4)
        post = posterior_at(center_split_coupling(), brownian_rap(), 0, 1, -0.3, 0.5)
        assert post.M == pytest.approx(math.tanh(0.4), abs=1e-12)

    def test_symmetric_information(self):
        post = posterior_at(center_split_coupling(), brownian_rap(), 0, 1, -0.5, 0.5)
        assert post.M == pytest.approx(0.0, abs=1e-14)
        assert post.Var == pytest.approx(1.0, abs=1e-14)

    def test_weights_sum_to_one_far_out(self):
        rng = np.random.default_rng(31)
        c = Coupling(
            rng.uniform(0.01, 0.4, size=(2, 3)), np.array([-1.0, 1.0]),
            np.array([-2.0, 0.0, 2.0]),
        )
        rap = brownian_rap()
        for t in (0.01, 0.3, 0.99):
            sd = noise_std(rap, t)
            for mult in (-10.0, -2.0, 0.0, 2.0, 10.0):
                post = posterior_at(c, rap, 1, 2, mult * sd, t)
                assert post.post_weights.sum() == pytest.approx(1.0, abs=1e-12)
                assert np.all(post.post_weights >= 0)
                assert c.col_support.min() <= post.M <= c.col_support.max()

    def test_monotone_in_noise(self):
        rng = np.random.default_rng(32)
        c = Coupling(
            rng.uniform(0.05, 0.5, size=(2, 4)), np.array([-1.0, 1.0]),
            np.array([-3.0, -1.0, 1.0, 3.0]),
        )
        rap = brownian_rap()
        for t in (0.2, 0.5, 0.8):
            a_grid = np.linspace(-3 * noise_std(rap, t), 3 * noise_std(rap, t), 41)
            means = [posterior_at(c, rap, 0, 1, a, t).M for a in a_grid]
            assert np.all(np.diff(means) >= -1e-12)

    def test_concentrates_at_late_times(self):
        c = center_split_coupling()
        rap = brownian_rap()
        post = posterior_at(c, rap, 0, 1, 0.0, 1.0 - 1e-6)
        assert post.Var <= 1e-6
        assert post.M == pytest.approx(1.0, abs=1e-6)

    def test_early_time_recovers_row_mean(self):
        # averaging the anchor by row mass at a=0, t->t0 gives the conditional mean
        p = np.array([[0.25, 0.35, 0.40]])
        y = np.array([-1.5, 0.2, 2.0])
        row_mean = float(p[0] @ y)
        c = Coupling(p, np.array([row_mean]), y)
        rap = brownian_rap()
        t = 1e-8
        mixed = sum(
            p[0, q] * posterior_at(c, rap, 0, q, 0.0, t).M for q in range(3)
        )
        assert mixed == pytest.approx(row_mean, abs=1e-3)

    def test_rejects_bad_input(self):
        c = center_split_coupling()
        rap = brownian_rap()
        with pytest.raises(ValueError):
            posterior_at(c, rap, 0, 0, 0.0, 0.0)  # endpoint
        with pytest.raises(ValueError):
            posterior_at(c, rap, 0, 0, np.nan, 0.5)
        zero_row = Coupling(np.array([[0.0, 0.0]]), np.array([0.0]), np.array([-1.0, 1.0]))
        with pytest.raises(ValueError):
            posterior_at(zero_row, rap, 0, 0, 0.0, 0.5)


class TestPosteriorDerivative:
    def test_single_atom_row(self):
        c = Coupling(np.array([[1.0]]), np.array([0.3]), np.array([0.3]))
        assert dM_dp(c, brownian_rap(), 0, 0, 0.4, 0.5) == 0.0

    def test_sign_at_symmetric_information(self):
        c = center_split_coupling()
        rap = brownian_rap()
        # a chosen so the information value is 0: numerator sign = sign(y_q)
        assert dM_dp(c, rap, 0, 1, -0.5, 0.5) > 0
        assert dM_dp(c, rap, 0, 0, 0.5, 0.5) < 0

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(33)
        x = np.array([-0.8, 1.1])
        y = np.array([-2.0, 0.3, 1.7])
        rap = brownian_rap()
        for _ in range(10):
            p = rng.uniform(0.05, 0.45, size=(2, 3))
            u, q = rng.integers(2), rng.integers(3)
            a = rng.normal() * 0.4
            t = rng.uniform(0.1, 0.9)
            step = 1e-6
            bumped, dipped = p.copy(), p.copy()
            bumped[u, q] += step
            dipped[u, q] -= step
            fd = (
                posterior_at(Coupling(bumped, x, y), rap, u, q, a, t).M
                - posterior_at(Coupling(dipped, x, y), rap, u, q, a, t).M
            ) / (2 * step)
            analytic = dM_dp(Coupling(p, x, y), rap, u, q, a, t)
            assert analytic == pytest.approx(fd, rel=1e-5, abs=1e-10)
