import numpy as np
import pytest

from consistency_lab import GaussianMixture, Schedule, ScoreProbe
from consistency_lab.consistency import (
    GapResult,
    McEstimate,
    coarsen_noise,
    drift_test,
    martingale_gap,
    measure_gap_bias,
    ode_consistency_gap,
    sde_denoised_mean,
    theorem41_check,
    theorem42_check,
)
from consistency_lab.errors import DomainError
from consistency_lab.fields import (
    GaussianConsistencyField,
    PerturbedScoreField,
    TweedieDenoiserField,
    ZeroField,
)
from consistency_lab.rng import SubstreamRng, path_noise


@pytest.fixture
def h_truth(probe_bimodal, sched):
    return TweedieDenoiserField(probe_bimodal, sched)


class IdentityDenoiser:
    dim = 1
    has_analytic_jacobian = False

    def __call__(self, x, t):
        return np.asarray(x, dtype=float).copy()


class TestMcEstimate:
    def test_rejects_negative_stderr(self):
        with pytest.raises(ValueError):
            McEstimate(mean=[0.0], stderr=[-1.0], n_paths=2, n_steps=4, lam=1.0)

    def test_rejects_zero_paths(self):
        with pytest.raises(ValueError):
            McEstimate(mean=[0.0], stderr=[0.0], n_paths=0, n_steps=4, lam=1.0)


class TestSdeDenoisedMean:
    def test_lambda_zero_is_deterministic(self, h_truth, sched):
        est = sde_denoised_mean(h_truth, sched, np.array([0.8]), 1.0, 0.0, 16, 64, seed=0)
        assert np.all(est.stderr == 0.0)
        est2 = sde_denoised_mean(h_truth, sched, np.array([0.8]), 1.0, 0.0, 16, 64, seed=77)
        assert np.array_equal(est.mean, est2.mean)

    def test_truth_denoiser_is_consistent(self, h_truth, sched):
        # the true denoiser predicts the mean endpoint of its own dynamics
        x, t = np.array([0.8]), 1.0
        est = sde_denoised_mean(h_truth, sched, x, t, 1.0, 4000, 200, seed=11)
        bias = 0.015  # step-halving allowance at this resolution, see acceptance
        gap = np.linalg.norm(est.mean - h_truth(x, t))
        assert gap <= 3.0 * float(np.max(est.stderr)) + bias

    def test_identity_denoiser_is_a_martingale(self, sched):
        # identity denoiser induces driftless dynamics, so the endpoint
        # mean stays at the start
        x = np.array([0.8])
        est = sde_denoised_mean(IdentityDenoiser(), sched, x, 1.0, 1.0, 4000, 200, seed=13)
        assert np.linalg.norm(est.mean - x) <= 3.0 * float(np.max(est.stderr))

    def test_domain_check(self, h_truth, sched):
        with pytest.raises(DomainError):
            sde_denoised_mean(h_truth, sched, np.array([0.0]), sched.t0, 0.0, 1, 8)


class TestMartingaleGap:
    def test_lambda_zero_gap_is_plain_difference(self, h_truth, probe_bimodal, sched):
        from consistency_lab.dynamics import pf_ode_solve

        x, t, tp = np.array([0.9]), 1.0, 0.5
        res = martingale_gap(h_truth, sched, x, t, tp, 0.0, 1, 64, seed=0)
        x_later = pf_ode_solve(
            __import__("consistency_lab.fields", fromlist=["InducedScoreField"]).InducedScoreField(h_truth, sched),
            sched, x, t, tp, 64, method="euler",
        )
        direct = h_truth(x, t) - h_truth(x_later, tp)
        assert np.array_equal(res.gap, direct)
        assert np.all(res.estimate.stderr == 0.0)

    def test_truth_gap_within_tolerance(self, h_truth, sched):
        x = np.array([0.8])
        res = martingale_gap(h_truth, sched, x, 1.0, 0.5, 1.0, 4000, 200, seed=9)
        bias = measure_gap_bias(h_truth, sched, x, 1.0, 0.5, 1.0, 4000, 200, seed=9)
        assert np.linalg.norm(res.gap) <= 3.0 * float(np.max(res.estimate.stderr)) + max(bias, 0.02)

    def test_perturbed_denoiser_fails_loudly(self, probe_bimodal, sched):
        # a 20% linear perturbation must blow the gap up well past the
        # ground-truth value at the same seed (shared noise realizations)
        x = np.array([0.8])
        h0 = TweedieDenoiserField(probe_bimodal, sched)
        base = martingale_gap(h0, sched, x, 1.0, 0.5, 1.0, 8000, 160, seed=21,
                              score_field=probe_bimodal)
        pert_score = PerturbedScoreField(probe_bimodal, 0.2)
        h_pert = TweedieDenoiserField(pert_score, sched)
        pert = martingale_gap(h_pert, sched, x, 1.0, 0.5, 1.0, 8000, 160, seed=21,
                              score_field=pert_score)
        assert np.linalg.norm(pert.gap) >= 5.0 * np.linalg.norm(base.gap)

    def test_lambda_zero_bitwise_across_seeds(self, h_truth, sched):
        a = martingale_gap(h_truth, sched, np.array([0.7]), 1.0, 0.5, 0.0, 1, 64, seed=1)
        b = martingale_gap(h_truth, sched, np.array([0.7]), 1.0, 0.5, 0.0, 1, 64, seed=2)
        assert np.array_equal(a.gap, b.gap)

    def test_stderr_scaling_with_paths(self, h_truth, sched):
        x = np.array([0.8])
        small = martingale_gap(h_truth, sched, x, 1.0, 0.5, 1.0, 2000, 100, seed=5)
        large = martingale_gap(h_truth, sched, x, 1.0, 0.5, 1.0, 8000, 100, seed=5)
        ratio = float(np.max(small.estimate.stderr) / np.max(large.estimate.stderr))
        assert 2.0 * 0.8 <= ratio <= 2.0 * 1.2

    def test_time_order_validation(self, h_truth, sched):
        with pytest.raises(DomainError):
            martingale_gap(h_truth, sched, np.array([0.0]), 0.5, 1.0, 0.0, 1, 8)


class TestOdeConsistencyGap:
    def test_exact_consistency_function_scores_zero(self, sched):
        gm1 = GaussianMixture([1.0], [[0.0]], [[1.0]])
        probe1 = ScoreProbe(gm1, sched)
        f = GaussianConsistencyField(sched, 0.0, 1.0, 1)
        gap = ode_consistency_gap(f, probe1, sched, np.array([1.3]), 2.0, 0.5, 1024)
        assert gap <= 1e-6

    def test_constant_map_scores_zero(self, probe_bimodal, sched):
        class Const:
            dim = 1
            def __call__(self, x, t):
                x = np.asarray(x, dtype=float)
                return np.broadcast_to(0.37, x.shape).copy()

        gap = ode_consistency_gap(Const(), probe_bimodal, sched, np.array([0.4]), 1.5, 0.3, 64)
        assert gap == 0.0

    def test_identity_map_scores_positive(self, probe_bimodal, sched):
        class Identity:
            dim = 1
            def __call__(self, x, t):
                return np.asarray(x, dtype=float).copy()

        gap = ode_consistency_gap(Identity(), probe_bimodal, sched, np.array([0.9]), 1.5, 0.3, 64)
        assert gap > 0.0


class TestDriftTest:
    def test_driftless_case_centered(self, sched):
        eff, se = drift_test(0.0, lambda t: sched.g(t), sched, 0.0, 1.0, 0.5, 4000, 100, seed=19)
        assert np.all(np.abs(eff) <= 3.0 * se)

    def test_constant_drift_integrates(self, sched):
        eff, se = drift_test(0.5, lambda t: sched.g(t), sched, 0.0, 1.0, 0.5, 10_000, 200, seed=23)
        assert np.all(np.abs(eff - 0.25) <= 3.0 * se)

    def test_constant_diffusion_accepted(self, sched):
        eff, se = drift_test(np.array([0.3, -0.3]), 0.5, sched, np.zeros(2), 1.0, 0.5,
                             4000, 100, seed=29)
        assert np.all(np.abs(eff - np.array([0.15, -0.15])) <= 3.0 * se)


class TestTheorem41:
    def test_truth_collapse(self, h_truth, sched):
        rep = theorem41_check(h_truth, sched, np.array([0.8]), 1.0, 0.5, 64, seed=3)
        assert rep["equality_discrepancy"] <= 1e-12
        assert rep["seed_variance_lambda0"] == 0.0
        assert rep["variance_decreasing_to_zero"]

    def test_collapse_holds_for_arbitrary_smooth_h(self, sched):
        # the identity of the two computations is structural; it does not
        # require h to be a good denoiser
        class TanhH:
            dim = 1
            has_analytic_jacobian = False
            def __call__(self, x, t):
                return np.tanh(np.asarray(x, dtype=float)) * (1.0 + 0.05 * t)

        rep = theorem41_check(TanhH(), sched, np.array([0.4]), 1.2, 0.6, 48, seed=5)
        assert rep["equality_discrepancy"] <= 1e-12

    def test_variance_strictly_increasing_in_lambda(self, h_truth, sched):
        rep = theorem41_check(h_truth, sched, np.array([0.8]), 1.0, 0.5, 64, seed=7)
        sweep = sorted(rep["lambda_sweep"], key=lambda r: r["lambda"])
        variances = [r["variance"] for r in sweep]
        assert variances[0] == 0.0
        assert all(a < b for a, b in zip(variances, variances[1:]))


class TestTheorem42:
    def test_perturbation_monotonicity_small(self, probe_bimodal):
        eps = [0.0, 0.05, 0.1, 0.2, 0.3]
        rep = theorem42_check(
            eps, probe_bimodal,
            n_probe_points=4, n_paths=1500, n_steps=100,
            residual_ts=(0.5, 1.0), n_residual_points=40, seed=2,
        )
        assert rep["spearman_residual"] >= 0.95
        assert rep["spearman_gap"] >= 0.9
        assert rep["zero_eps_residual"] <= 1e-4
        assert rep["zero_eps_gap"] <= rep["gap_noise_floor"]

    def test_zero_perturbation_field_collapses_rows(self, probe_bimodal):
        rep = theorem42_check(
            [0.0, 0.1, 0.3], probe_bimodal,
            n_probe_points=2, n_paths=400, n_steps=50,
            residual_ts=(1.0,), n_residual_points=10,
            perturbation=ZeroField(1), seed=0,
        )
        rows = rep["rows"]
        for row in rows[1:]:
            assert row["mean_fpe_residual"] == rows[0]["mean_fpe_residual"]
            assert row["mean_gap_norm"] == rows[0]["mean_gap_norm"]

    def test_requires_zero_in_grid(self, probe_bimodal):
        with pytest.raises(ValueError):
            theorem42_check([0.1, 0.2], probe_bimodal, n_probe_points=1,
                            n_paths=10, n_steps=5, n_residual_points=2)


class TestCoarsening:
    def test_coarsened_noise_preserves_brownian_sums(self):
        fine = path_noise(0, 3, 10, 2)
        coarse = coarsen_noise(fine)
        assert coarse.shape == (3, 5, 2)
        # increments over a coarse interval agree after sqrt(dt) scaling:
        # sqrt(2 dt) * coarse == sqrt(dt) * (fine_a + fine_b)
        lhs = np.sqrt(2.0) * coarse[:, 0, :]
        rhs = fine[:, 0, :] + fine[:, 1, :]
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-15)
