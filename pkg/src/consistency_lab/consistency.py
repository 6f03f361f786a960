"""Monte-Carlo and deterministic checkers for denoiser consistency.

A denoiser h is *self-consistent under the reverse dynamics it induces*
when its prediction at (x, t) equals the conditional mean of its own
later predictions along paths started at (x, t).  The checkers here
estimate that conditional mean by plain Monte Carlo over per-path
substreams, measure the gap, and exercise the limiting cases:

* at lambda = 0 the dynamics are deterministic and the gap collapses to
  a plain squared difference along the flow (checked to round-off);
* driftless dynamics keep the conditional mean fixed, and an injected
  constant drift shifts it by drift times elapsed reverse time;
* perturbing the ground-truth score makes both the PDE residual and the
  martingale gap grow from their noise floors together.

Expectations are exact-SDE objects while the simulator is first order,
so stochastic tolerances take the form 3*stderr + bias with the bias
measured by step halving and reported alongside the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import pf_ode_solve, simulate_endpoints
from .errors import DomainError
from .fields import InducedScoreField, PerturbedScoreField, TweedieDenoiserField
from .residuals import FieldProbe, normalized_residual_norms
from .rng import SubstreamRng, derive_seed, path_noise
from .schedule import Schedule


@dataclass
class McEstimate:
    """Monte-Carlo mean with per-coordinate standard error."""

    mean: np.ndarray
    stderr: np.ndarray
    n_paths: int
    n_steps: int
    lam: float

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.stderr = np.atleast_1d(np.asarray(self.stderr, dtype=float))
        if np.any(self.stderr < 0.0):
            raise ValueError("stderr entries must be nonnegative")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")


@dataclass
class GapResult:
    """Martingale-gap measurement: gap vector, its MC context, and the
    scalar regularizer value 0.5 * |gap|^2."""

    gap: np.ndarray
    estimate: McEstimate
    reg_value: float


def _mc_estimate(values: np.ndarray, n_steps: int, lam: float) -> McEstimate:
    # values: (n_paths, D); fixed-order reduction keeps means reproducible
    n = values.shape[0]
    mean = values.mean(axis=0)
    if n > 1:
        stderr = values.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        stderr = np.zeros_like(mean)
    return McEstimate(mean=mean, stderr=stderr, n_paths=n, n_steps=n_steps, lam=lam)


def _endpoint_cloud(field, sched, x, t, t_prime, lam, n_paths, n_steps, seed, noise=None):
    """Endpoints x(t') of n_paths reverse-time paths from (x, t)."""
    x = np.asarray(x, dtype=float)
    if lam == 0.0:
        return simulate_endpoints(field, sched, x[None, :], t, t_prime, 0.0, n_steps)
    if noise is None:
        noise = path_noise(seed, n_paths, n_steps, x.shape[-1])
    starts = np.broadcast_to(x, (n_paths, x.shape[-1])).copy()
    return simulate_endpoints(field, sched, starts, t, t_prime, lam, n_steps, noise=noise)


def sde_denoised_mean(
    h_field,
    sched: Schedule,
    x,
    t: float,
    lam: float,
    n_paths: int,
    n_steps: int,
    seed: int = 0,
) -> McEstimate:
    """Estimate the mean endpoint at t0 of the dynamics induced by h.

    The driving score is (h(x, t) - x) / sigma^2(t).  At lambda = 0 the
    endpoint is deterministic and stderr is exactly zero.
    """
    if not sched.t0 < t <= sched.T:
        raise DomainError(f"t={t} outside ({sched.t0}, {sched.T}]")
    score = InducedScoreField(h_field, sched)
    ends = _endpoint_cloud(score, sched, x, t, sched.t0, lam, n_paths, n_steps, seed)
    est = _mc_estimate(ends, n_steps, lam)
    if lam == 0.0:
        est.n_paths = n_paths
    return est


def martingale_gap(
    h_field,
    sched: Schedule,
    x,
    t: float,
    t_prime: float,
    lam: float,
    n_paths: int,
    n_steps: int,
    seed: int = 0,
    score_field=None,
    noise=None,
) -> GapResult:
    """Gap h(x, t) minus the MC mean of h(x(t'), t') along induced paths.

    ``score_field`` overrides the driving field (default: induced from
    h).  ``noise`` optionally supplies the per-path normals, for callers
    running common-random-number sweeps.  The returned reg_value,
    0.5 * |gap|^2, is the sample value of the martingale regularizer.
    """
    if not sched.t0 <= t_prime < t <= sched.T:
        raise DomainError(
            f"need t0 <= t_prime < t <= T, got t_prime={t_prime}, t={t}"
        )
    x = np.asarray(x, dtype=float)
    driver = score_field if score_field is not None else InducedScoreField(h_field, sched)
    ends = _endpoint_cloud(driver, sched, x, t, t_prime, lam, n_paths, n_steps, seed, noise=noise)
    h_later = np.atleast_2d(h_field(ends, t_prime))
    est = _mc_estimate(h_later, n_steps, lam)
    if lam == 0.0:
        est.n_paths = n_paths
    gap = h_field(x, t) - est.mean
    reg_value = 0.5 * float(np.sum(gap * gap))
    return GapResult(gap=gap, estimate=est, reg_value=reg_value)


def ode_consistency_gap(
    f_field,
    score_field,
    sched: Schedule,
    x,
    t: float,
    t_prime: float,
    n_steps: int,
    method: str = "heun",
) -> float:
    """Half squared distance between f at (x, t) and f at the flowed point.

    x(t') comes from the deterministic flow under ``score_field``; a map
    that is constant along flow trajectories scores zero.
    """
    if not sched.t0 <= t_prime < t <= sched.T:
        raise DomainError(
            f"need t0 <= t_prime < t <= T, got t_prime={t_prime}, t={t}"
        )
    x = np.asarray(x, dtype=float)
    x_later = pf_ode_solve(score_field, sched, x, t, t_prime, n_steps, method=method)
    diff = f_field(x, t) - f_field(x_later, t_prime)
    return 0.5 * float(np.sum(diff * diff))


def drift_test(
    drift_const,
    diffusion,
    sched: Schedule,
    x,
    t: float,
    t_prime: float,
    n_paths: int,
    n_steps: int,
    seed: int = 0,
):
    """Measure the mean displacement of dX = F dt + G dw over [t', t].

    Per reverse step of size dt > 0 the update is
    x <- x + F dt + G(t) sqrt(dt) eps, so a constant drift F shifts the
    endpoint mean by F * (t - t_prime) while F = 0 leaves it centered on
    the start (the martingale case).  ``diffusion`` is a constant or a
    callable of t.  Returns (estimated_effect, stderr), both (D,).
    """
    if not sched.t0 <= t_prime < t <= sched.T:
        raise DomainError(
            f"need t0 <= t_prime < t <= T, got t_prime={t_prime}, t={t}"
        )
    drift = np.atleast_1d(np.asarray(drift_const, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x, drift = (a.astype(float).copy() for a in np.broadcast_arrays(x, drift))
    dim = x.shape[-1]
    g_of = diffusion if callable(diffusion) else (lambda _t: float(diffusion))
    times = np.linspace(t, t_prime, n_steps + 1)
    noise = path_noise(seed, n_paths, n_steps, dim)
    states = np.broadcast_to(x, (n_paths, dim)).copy()
    for k in range(n_steps):
        dt = float(times[k]) - float(times[k + 1])
        states = states + drift * dt + (g_of(float(times[k])) * np.sqrt(dt)) * noise[:, k, :]
    effect = states.mean(axis=0) - x
    stderr = states.std(axis=0, ddof=1) / np.sqrt(n_paths)
    return effect, stderr


def theorem41_check(
    h_field,
    sched: Schedule,
    x,
    t: float,
    t_prime: float,
    n_steps: int,
    seed: int = 0,
    lambdas=(0.0, 0.25, 0.5, 1.0),
    n_paths_sweep: int = 256,
    n_seeds: int = 4,
    score_field=None,
) -> dict:
    """Deterministic collapse of the martingale gap onto flow consistency.

    At lambda = 0 the induced dynamics are the deterministic flow, so
    the martingale regularizer value must equal the half-MSE flow
    consistency value computed on the identical Euler grid, and the
    endpoint must not depend on the seed.  A lambda sweep records how
    the path variance of h(x(t'), t') shrinks to exactly zero.
    """
    x = np.asarray(x, dtype=float)
    driver = score_field if score_field is not None else InducedScoreField(h_field, sched)

    det = martingale_gap(
        h_field, sched, x, t, t_prime, 0.0, 1, n_steps, seed=seed, score_field=driver
    )
    ode_value = ode_consistency_gap(
        h_field, driver, sched, x, t, t_prime, n_steps, method="euler"
    )
    discrepancy = abs(det.reg_value - ode_value)

    # endpoint across distinct seeds; deterministic dynamics ignore them
    endpoints = []
    for k in range(n_seeds):
        res = martingale_gap(
            h_field, sched, x, t, t_prime, 0.0, 1, n_steps,
            seed=derive_seed(seed, "sweep-seed", k), score_field=driver,
        )
        endpoints.append(res.estimate.mean)
    endpoints = np.stack(endpoints)
    seed_variance = float(np.max(endpoints.var(axis=0)))

    sweep = []
    for lam in lambdas:
        if lam == 0.0:
            sweep.append({"lambda": 0.0, "variance": 0.0, "reg_value": det.reg_value})
            continue
        res = martingale_gap(
            h_field, sched, x, t, t_prime, float(lam), n_paths_sweep, n_steps,
            seed=derive_seed(seed, "sweep"), score_field=driver,
        )
        var = float(np.mean(res.estimate.stderr ** 2) * res.estimate.n_paths)
        sweep.append({"lambda": float(lam), "variance": var, "reg_value": res.reg_value})

    variances = [row["variance"] for row in sweep]
    order = np.argsort([row["lambda"] for row in sweep])
    ordered = [variances[i] for i in order]
    decreasing_to_zero = all(
        ordered[i] < ordered[i + 1] for i in range(len(ordered) - 1)
    ) and ordered[0] == 0.0

    return {
        "reg_value_sde": det.reg_value,
        "reg_value_ode": ode_value,
        "equality_discrepancy": discrepancy,
        "seed_variance_lambda0": seed_variance,
        "lambda_sweep": sweep,
        "variance_decreasing_to_zero": bool(decreasing_to_zero),
    }


def coarsen_noise(fine: np.ndarray) -> np.ndarray:
    """Halve the time resolution of a noise block on a shared Brownian path.

    Adjacent fine increments sum (normalized) to the coarse increment,
    so an n-step run with the result and a 2n-step run with ``fine``
    discretize the same driving path.
    """
    return (fine[..., 0::2, :] + fine[..., 1::2, :]) / np.sqrt(2.0)


def measure_gap_bias(
    h_field, sched, x, t, t_prime, lam, n_paths, n_steps, seed, score_field=None
) -> float:
    """Discretization bias of the gap estimate via coupled step halving."""
    x = np.asarray(x, dtype=float)
    fine = path_noise(derive_seed(seed, "bias-halving"), n_paths, 2 * n_steps, x.shape[-1])
    a = martingale_gap(
        h_field, sched, x, t, t_prime, lam, n_paths, n_steps, seed=seed,
        score_field=score_field, noise=coarsen_noise(fine),
    )
    b = martingale_gap(
        h_field, sched, x, t, t_prime, lam, n_paths, 2 * n_steps, seed=seed,
        score_field=score_field, noise=fine,
    )
    return float(np.linalg.norm(a.estimate.mean - b.estimate.mean))


def theorem42_check(
    eps_grid,
    base_probe,
    *,
    t: float = 1.0,
    t_prime: float = 0.5,
    lam: float = 1.0,
    n_probe_points: int = 8,
    n_paths: int = 4000,
    n_steps: int = 200,
    residual_ts=(0.1, 0.5, 1.0, 2.0),
    n_residual_points: int = 100,
    perturbation=None,
    seed: int = 0,
) -> dict:
    """Couple the PDE residual and the martingale gap under perturbation.

    For each eps the base score is shifted by eps times a smooth
    perturbation field (default p(x, t) = x), the matching denoiser is
    rebuilt, and two diagnostics are recorded: the mean normalized PDE
    residual over noised-sample grids, and the mean martingale-gap norm
    of the rebuilt denoiser under its own dynamics.  Common random
    numbers across eps keep the sweeps comparable.  Returns rows plus
    Spearman rank correlations of each metric against eps.
    """
    from scipy.stats import spearmanr

    from .mixtures import perturb_forward, sample_data

    eps_grid = [float(e) for e in eps_grid]
    if 0.0 not in eps_grid:
        raise ValueError("eps_grid must include 0.0")
    sched = base_probe.schedule
    gm = base_probe.mixture

    res_points = {}
    for i, tt in enumerate(residual_ts):
        rng = SubstreamRng(derive_seed(seed, "res-points", i), 0)
        x0 = sample_data(gm, n_residual_points, rng)
        res_points[tt] = perturb_forward(x0, sched, tt, rng)

    rng_probe = SubstreamRng(derive_seed(seed, "gap-points"), 0)
    x0 = sample_data(gm, n_probe_points, rng_probe)
    gap_points = perturb_forward(x0, sched, t, rng_probe)

    dim = gm.dim
    # common random numbers: one per-path noise block shared by every
    # (eps, probe point) pair so sweep differences are not washed out
    noise = path_noise(derive_seed(seed, "gap-noise"), n_paths, n_steps, dim)
    noise_tiled = np.tile(noise, (n_probe_points, 1, 1))
    starts = np.repeat(gap_points, n_paths, axis=0)

    def gap_sweep(field, h_field, steps, noise_block):
        ends = simulate_endpoints(
            field, sched, starts, t, t_prime, lam, steps, noise=noise_block
        )
        h_later = h_field(ends, t_prime).reshape(n_probe_points, n_paths, dim)
        means = h_later.mean(axis=1)
        stderr = h_later.std(axis=1, ddof=1) / np.sqrt(n_paths)
        gaps = h_field(gap_points, t) - means
        return gaps, means, stderr

    rows = []
    for eps in eps_grid:
        field = PerturbedScoreField(base_probe, eps, perturbation)
        probe = FieldProbe(field, sched, mode="analytic")
        res_norms = [
            float(np.mean(normalized_residual_norms(probe, pts, float(tt))))
            for tt, pts in res_points.items()
        ]
        mean_residual = float(np.mean(res_norms))

        h_field = TweedieDenoiserField(field, sched)
        gaps, _, stderr = gap_sweep(field, h_field, n_steps, noise_tiled)
        rows.append(
            {
                "eps": eps,
                "mean_fpe_residual": mean_residual,
                "mean_gap_norm": float(np.mean(np.linalg.norm(gaps, axis=-1))),
                "max_gap_stderr": float(np.max(stderr)),
            }
        )

    zero_row = rows[eps_grid.index(0.0)]
    # discretization bias at eps = 0 via step halving on a shared Brownian path
    h0 = TweedieDenoiserField(base_probe, sched)
    fine = path_noise(derive_seed(seed, "gap-noise-half"), n_paths, 2 * n_steps, dim)
    fine_tiled = np.tile(fine, (n_probe_points, 1, 1))
    _, means_a, _ = gap_sweep(base_probe, h0, n_steps, coarsen_noise(fine_tiled))
    _, means_b, _ = gap_sweep(base_probe, h0, 2 * n_steps, fine_tiled)
    bias = float(np.max(np.linalg.norm(means_a - means_b, axis=-1)))
    def _spearman(xs, ys):
        if np.max(ys) == np.min(ys):  # degenerate sweep, correlation undefined
            return float("nan")
        return float(spearmanr(xs, ys).statistic)

    eps_vals = [row["eps"] for row in rows]
    rho_res = _spearman(eps_vals, [row["mean_fpe_residual"] for row in rows])
    rho_gap = _spearman(eps_vals, [row["mean_gap_norm"] for row in rows])
    return {
        "rows": rows,
        "spearman_residual": rho_res,
        "spearman_gap": rho_gap,
        "zero_eps_residual": zero_row["mean_fpe_residual"],
        "zero_eps_gap": zero_row["mean_gap_norm"],
        "gap_bias_estimate": bias,
        "gap_noise_floor": 3.0 * zero_row["max_gap_stderr"] + bias,
    }
