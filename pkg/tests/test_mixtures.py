import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from consistency_lab import GaussianMixture, Schedule, ScoreProbe, SubstreamRng
from consistency_lab.errors import ShapeError
from consistency_lab.mixtures import (
    denoiser,
    log_qt,
    perturb_forward,
    sample_data,
    score,
    score_derivatives,
)

SQRT3 = np.sqrt(3.0)  # linear schedule: t = sqrt(3) gives sigma^2 = 3


class TestLogQt:
    def test_single_gaussian_at_origin(self, gm_single, sched):
        # N(0, 1) data at sigma^2 = 3 is N(0, 4)
        assert log_qt(gm_single, sched, [0.0], SQRT3) == pytest.approx(
            -1.612085713764618, abs=1e-14
        )

    def test_single_gaussian_off_origin(self, gm_single, sched):
        assert log_qt(gm_single, sched, [2.0], SQRT3) == pytest.approx(
            -2.112085713764618, abs=1e-14
        )

    def test_two_component_brute_force(self):
        # oracle: direct summation of the two component densities
        w, mu, v = [0.5, 0.5], [-2.0, 2.0], [0.25, 0.25]
        t_small = 1e-9  # sigma^2 = 1e-18, negligible against v
        dens = sum(
            wi * np.exp(-((0.0 - m) ** 2) / (2.0 * vi)) / np.sqrt(2.0 * np.pi * vi)
            for wi, m, vi in zip(w, mu, v)
        )
        gm = GaussianMixture(weights=w, means=[[m] for m in mu], variances=[[vi] for vi in v])
        sched = Schedule(t0=1e-9, T=5.0)
        assert log_qt(gm, sched, [0.0], t_small) == pytest.approx(np.log(dens), rel=1e-12)

    def test_dimension_mismatch_raises(self, gm_2d, sched):
        with pytest.raises(ShapeError):
            log_qt(gm_2d, sched, [0.0], 1.0)

    def test_far_field_does_not_underflow(self, gm_bimodal, sched):
        val = log_qt(gm_bimodal, sched, [200.0], 0.05)
        assert np.isfinite(val) and val < -1e4


class TestScore:
    def test_single_gaussian_linear_score(self, gm_single, sched):
        s = score(gm_single, sched, [2.0], SQRT3)
        assert s == pytest.approx([-0.5], abs=1e-15)

    def test_symmetric_mixture_zero_at_center(self, gm_bimodal, sched):
        s = score(gm_bimodal, sched, [0.0], 1.0)
        assert abs(s[0]) < 1e-15

    def test_matches_fd_of_log_qt(self, gm_bimodal, sched):
        x, t = np.array([1.0]), 1.0
        h = 1e-4 * (1.0 + np.max(np.abs(x)))
        fd = (log_qt(gm_bimodal, sched, x + h, t) - log_qt(gm_bimodal, sched, x - h, t)) / (2 * h)
        s = score(gm_bimodal, sched, x, t)
        assert abs(s[0] - fd) / abs(fd) <= 1e-6


class TestScoreDerivatives:
    def test_single_gaussian_constant_jacobian(self, gm_single, sched):
        jac, div, sq = score_derivatives(gm_single, sched, [1.7], SQRT3)
        assert jac == pytest.approx(np.array([[-0.25]]), abs=1e-15)
        assert div == pytest.approx(-0.25, abs=1e-14)

    def test_divergence_is_trace(self, gm_2d, sched):
        jac, div, _ = score_derivatives(gm_2d, sched, [0.3, -0.8], 0.9)
        assert abs(div - np.trace(jac)) <= 1e-12

    def test_jacobian_matches_fd_of_score(self, gm_2d, sched):
        x, t = np.array([0.7, 0.1]), np.sqrt(0.5)
        h = 1e-4 * (1.0 + np.max(np.abs(x)))
        jac, _, _ = score_derivatives(gm_2d, sched, x, t)
        fd = np.stack(
            [
                (score(gm_2d, sched, x + h * e, t) - score(gm_2d, sched, x - h * e, t)) / (2 * h)
                for e in np.eye(2)
            ],
            axis=-1,
        )
        assert np.max(np.abs(jac - fd)) / np.max(np.abs(fd)) <= 1e-5

    def test_jacobian_symmetry_at_random_points(self, gm_2d, sched):
        rng = SubstreamRng(77, 0)
        pts = rng.normal((100, 2)) * 2.0
        ts = 0.02 + rng.uniform((100,)) * 4.5
        for i in range(100):
            jac, _, _ = score_derivatives(gm_2d, sched, pts[i], float(ts[i]))
            assert np.max(np.abs(jac - jac.T)) <= 1e-10

    def test_heat_identity_against_fd(self, gm_2d, sched):
        # lap(q)/q == div(s) + |s|^2, with the left side from second
        # differences of log q
        x, t = np.array([0.4, -0.6]), 1.2
        h = 1e-4 * (1.0 + np.max(np.abs(x)))
        _, div, sq = score_derivatives(gm_2d, sched, x, t)
        lap_over_q = 0.0
        for e in np.eye(2):
            lp = log_qt(gm_2d, sched, x + h * e, t)
            lm = log_qt(gm_2d, sched, x - h * e, t)
            l0 = log_qt(gm_2d, sched, x, t)
            lap_over_q += (lp + lm - 2 * l0) / h**2 + ((lp - lm) / (2 * h)) ** 2
        assert abs(lap_over_q - (div + sq)) / abs(div + sq) <= 1e-4


class TestDenoiser:
    def test_single_gaussian_shrinkage(self, gm_single, sched):
        assert denoiser(gm_single, sched, [4.0], SQRT3) == pytest.approx([1.0], abs=1e-14)

    def test_symmetric_center_fixed(self, gm_bimodal, sched):
        assert abs(denoiser(gm_bimodal, sched, [0.0], 1.0)[0]) < 1e-15

    def test_tweedie_composition_with_fd_score(self, gm_bimodal, sched):
        x, t = np.array([1.0]), 1.0
        h = 1e-4 * 2.0
        fd = (log_qt(gm_bimodal, sched, x + h, t) - log_qt(gm_bimodal, sched, x - h, t)) / (2 * h)
        expect = x[0] + sched.sigma2(t) * fd
        assert denoiser(gm_bimodal, sched, x, t)[0] == pytest.approx(expect, rel=1e-7)

    @settings(max_examples=25, deadline=None)
    @given(
        xv=st.floats(min_value=-4.0, max_value=4.0),
        t=st.floats(min_value=0.02, max_value=4.9),
    )
    def test_tweedie_identity_everywhere(self, xv, t):
        gm = GaussianMixture(
            weights=[0.5, 0.5], means=[[-1.0], [1.0]], variances=[[0.25], [0.25]]
        )
        sched = Schedule()
        x = np.array([xv])
        h = denoiser(gm, sched, x, t)
        s = score(gm, sched, x, t)
        lhs = np.linalg.norm(h - x - sched.sigma2(t) * s)
        assert lhs <= 1e-12 * (1.0 + np.linalg.norm(x))


class TestSampling:
    def test_law_of_large_numbers(self, gm_single):
        n = 100_000
        x = sample_data(gm_single, n, SubstreamRng(0, 0))
        assert abs(x.mean()) <= 3.0 / np.sqrt(n)
        assert abs(x.var() - 1.0) <= 0.05

    def test_deterministic_given_seed(self, gm_bimodal):
        a = sample_data(gm_bimodal, 50, SubstreamRng(4, 9))
        b = sample_data(gm_bimodal, 50, SubstreamRng(4, 9))
        assert np.array_equal(a, b)

    def test_degenerate_component(self):
        gm = GaussianMixture(weights=[1.0], means=[[7.0]], variances=[[1e-18]])
        x = sample_data(gm, 100, SubstreamRng(1, 0))
        assert np.max(np.abs(x - 7.0)) <= 1e-8

    def test_mixture_proportions(self, gm_bimodal):
        x = sample_data(gm_bimodal, 40_000, SubstreamRng(3, 0))
        frac_right = np.mean(x > 0.0)
        assert abs(frac_right - 0.5) < 0.01

    def test_rejects_zero_count(self, gm_single):
        with pytest.raises(ValueError):
            sample_data(gm_single, 0, SubstreamRng(0, 0))


class TestPerturbForward:
    def test_small_noise_limit(self, sched):
        x0 = np.array([1.0])
        out = perturb_forward(x0, sched, sched.t0, SubstreamRng(0, 1))
        assert np.abs(out - x0).max() <= 5.0 * sched.sigma(sched.t0)

    def test_empirical_variance(self, sched):
        t = 1.5
        x0 = np.zeros((100_000, 1))
        out = perturb_forward(x0, sched, t, SubstreamRng(0, 2))
        assert abs(out.var() - sched.sigma2(t)) / sched.sigma2(t) <= 0.05

    def test_deterministic(self, sched):
        a = perturb_forward(np.ones((5, 2)), sched, 0.7, SubstreamRng(12, 0))
        b = perturb_forward(np.ones((5, 2)), sched, 0.7, SubstreamRng(12, 0))
        assert np.array_equal(a, b)


class TestValidation:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            GaussianMixture(weights=[0.5, 0.4], means=[[0.0], [1.0]], variances=[[1.0], [1.0]])

    def test_positive_weights_and_variances(self):
        with pytest.raises(ValueError):
            GaussianMixture(weights=[1.5, -0.5], means=[[0.0], [1.0]], variances=[[1.0], [1.0]])
        with pytest.raises(ValueError):
            GaussianMixture(weights=[1.0], means=[[0.0]], variances=[[0.0]])

    def test_component_shape_consistency(self):
        with pytest.raises(ShapeError):
            GaussianMixture(weights=[1.0], means=[[0.0], [1.0]], variances=[[1.0]])


class TestScoreProbe:
    def test_probe_is_callable_field(self, probe_2d, gm_2d, sched):
        x = np.array([0.2, 0.4])
        assert np.array_equal(probe_2d(x, 1.0), score(gm_2d, sched, x, 1.0))
        assert probe_2d.dim == 2
        assert probe_2d.has_analytic_jacobian

    def test_probe_denoiser(self, probe_bimodal, gm_bimodal, sched):
        x = np.array([0.3])
        assert np.array_equal(
            probe_bimodal.denoiser(x, 0.8), denoiser(gm_bimodal, sched, x, 0.8)
        )
