"""Integrators for the lambda-interpolated reverse dynamics.

The one-parameter family

    dx = -((1 + lambda)/2) g^2(t) s(x, t) dt + lambda g(t) dw

interpolates between the deterministic flow (lambda = 0) and the full
reverse-time diffusion (lambda = 1).  Stepping is reverse-time
Euler-Maruyama with coefficients frozen at the left (current-time)
endpoint; a Heun (explicit trapezoidal) solver is provided for the
deterministic flow.  Grids are uniform so that runs with equal inputs
are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IntegrationError
from .rng import SubstreamRng
from .schedule import Schedule

DIVERGENCE_GUARD = 1e6


@dataclass
class Trajectory:
    """A discretized path: strictly decreasing times and one state per node."""

    times: np.ndarray
    states: np.ndarray
    lam: float
    solver: str
    seed: int | None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if np.any(np.diff(self.times) >= 0.0):
            raise ValueError("trajectory times must be strictly decreasing")
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError(
                f"{self.states.shape[0]} states for {self.times.shape[0]} times"
            )

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]


def _check_reverse_times(sched: Schedule, t_start: float, t_end: float):
    if not sched.t0 <= t_end:
        raise DomainError(f"t_end={t_end} below lower bound t0={sched.t0}")
    if not t_start <= sched.T:
        raise DomainError(f"t_start={t_start} above upper bound T={sched.T}")
    if not t_end < t_start:
        raise DomainError(f"need t_end < t_start, got {t_end} >= {t_start}")


def _guard(x, step, path=None):
    with np.errstate(invalid="ignore"):
        ok = np.isfinite(x) & (np.abs(x) <= DIVERGENCE_GUARD)
    if not ok.all():
        if x.ndim == 2 and path is None:
            bad = np.where(~ok.all(axis=-1))[0]
            path = int(bad[0]) if bad.size else None
        msg = f"state diverged at step {step}"
        if path is not None:
            msg += f" (path {path})"
        raise IntegrationError(msg, step=step, path=path)


def _euler_steps(field, sched, x, times, lam, noise, record=None):
    """Shared reverse-time Euler-Maruyama core.

    x: (..., D) current states, advanced in place across the grid.
    noise: None (lam == 0) or array (..., n_steps, D) of standard normals.
    record: optional list collecting a copy of the state after each step.
    """
    for k in range(len(times) - 1):
        t = float(times[k])
        dt = float(times[k]) - float(times[k + 1])  # > 0, reverse time
        drift = (0.5 * (1.0 + lam)) * sched.g2(t) * field(x, t)
        x = x + drift * dt
        if lam > 0.0:
            x = x + (lam * sched.g(t) * np.sqrt(dt)) * noise[..., k, :]
        _guard(x, k)
        if record is not None:
            record.append(x.copy())
    return x


def simulate_lambda_sde(
    field,
    sched: Schedule,
    x_start,
    t_start: float,
    t_end: float,
    lam: float,
    n_steps: int,
    rng: SubstreamRng | None = None,
) -> Trajectory:
    """Integrate one reverse-time path from (x_start, t_start) down to t_end.

    At lambda = 0 the noise term is skipped entirely and no random
    variates are consumed; otherwise exactly ``n_steps * D`` normals are
    drawn from ``rng`` in one block before stepping.
    """
    _check_reverse_times(sched, t_start, t_end)
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if lam < 0.0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    x = np.asarray(x_start, dtype=float).copy()
    times = np.linspace(t_start, t_end, n_steps + 1)
    noise = None
    seed = None
    if lam > 0.0:
        if rng is None:
            raise ValueError("lambda > 0 requires an rng")
        noise = rng.normal((n_steps, x.shape[-1]))
        seed = rng.seed
    record = [x.copy()]
    _euler_steps(field, sched, x, times, lam, noise, record=record)
    return Trajectory(
        times=times,
        states=np.stack(record),
        lam=lam,
        solver="euler-maruyama",
        seed=seed,
    )


def simulate_endpoints(
    field,
    sched: Schedule,
    x_start,
    t_start: float,
    t_end: float,
    lam: float,
    n_steps: int,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Endpoints of a batch of reverse-time paths, shape (n_paths, D).

    ``noise`` holds pre-drawn standard normals (n_paths, n_steps, D),
    one slab per path substream; paths therefore do not depend on batch
    size or evaluation order.  Required when lambda > 0.
    """
    _check_reverse_times(sched, t_start, t_end)
    x = np.atleast_2d(np.asarray(x_start, dtype=float)).copy()
    times = np.linspace(t_start, t_end, n_steps + 1)
    if lam > 0.0:
        if noise is None:
            raise ValueError("lambda > 0 requires pre-drawn path noise")
        if noise.shape != (x.shape[0], n_steps, x.shape[-1]):
            raise ValueError(
                f"noise shape {noise.shape} != {(x.shape[0], n_steps, x.shape[-1])}"
            )
    return _euler_steps(field, sched, x, times, lam, noise)


def pf_ode_solve(
    field,
    sched: Schedule,
    x_start,
    t_start: float,
    t_end: float,
    n_steps: int,
    method: str = "heun",
) -> np.ndarray:
    """Solve the deterministic flow dx/dt = -g^2(t) s(x, t) / 2.

    Works in either time direction.  ``heun`` is second order; ``euler``
    reuses the reverse-time stepper so its paths match a lambda = 0
    simulation on the same grid bitwise.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    x = np.asarray(x_start, dtype=float).copy()
    times = np.linspace(t_start, t_end, n_steps + 1)
    if method == "euler":
        return _euler_steps(field, sched, x, times, 0.0, None)
    if method != "heun":
        raise ValueError(f"unknown method {method!r}; expected 'heun' or 'euler'")
    for k in range(n_steps):
        t_cur = float(times[k])
        t_next = float(times[k + 1])
        dt = t_next - t_cur  # signed
        k1 = -0.5 * sched.g2(t_cur) * field(x, t_cur)
        x_pred = x + dt * k1
        k2 = -0.5 * sched.g2(t_next) * field(x_pred, t_next)
        x = x + (0.5 * dt) * (k1 + k2)
        _guard(x, k)
    return x


def heun_step(field, sched: Schedule, x, t_cur, t_next) -> np.ndarray:
    """One Heun step with per-sample times; used by distillation training.

    x: (N, D); t_cur, t_next: scalars or (N,) arrays with t_next != t_cur.
    """
    x = np.asarray(x, dtype=float)
    t_cur = np.asarray(t_cur, dtype=float)
    t_next = np.asarray(t_next, dtype=float)
    dt = (t_next - t_cur)[..., None]
    g2_cur = np.asarray(sched.g2(t_cur), dtype=float)[..., None]
    g2_next = np.asarray(sched.g2(t_next), dtype=float)[..., None]
    k1 = -0.5 * g2_cur * field(x, t_cur)
    x_pred = x + dt * k1
    k2 = -0.5 * g2_next * field(x_pred, t_next)
    return x + (0.5 * dt) * (k1 + k2)


def convergence_probe(sched: Schedule, case: str, step_counts, **kwargs):
    """Errors against a closed-form reference for solver-order fits.

    Cases (all on single-Gaussian N(0, 1) data, where the flow map and
    the path mean are known exactly):

    * ``heun-gaussian``: endpoint error of the Heun flow solver.
    * ``euler-ode-gaussian``: endpoint error of the Euler flow solver.
    * ``euler-maruyama-weak``: error of the endpoint mean at lambda = 1,
      estimated over antithetic path pairs (exact for this linear drift,
      so the weak discretization error is isolated).

    Returns a list of (dt, error) pairs, one per step count.
    """
    from .mixtures import GaussianMixture, ScoreProbe

    x_start = kwargs.get("x_start", 1.5)
    t_start = kwargs.get("t_start", 2.0)
    t_end = kwargs.get("t_end", 0.5)
    gm = GaussianMixture(weights=[1.0], means=[[0.0] ], variances=[[1.0]])
    probe = ScoreProbe(gm, sched)
    span = t_start - t_end

    results = []
    if case in ("heun-gaussian", "euler-ode-gaussian"):
        ratio = (1.0 + sched.sigma2(t_end)) / (1.0 + sched.sigma2(t_start))
        exact = x_start * np.sqrt(ratio)
        method = "heun" if case == "heun-gaussian" else "euler"
        for n in step_counts:
            got = pf_ode_solve(probe, sched, np.array([x_start]), t_start, t_end, int(n), method=method)
            results.append((span / int(n), float(abs(got[0] - exact))))
        return results
    if case == "euler-maruyama-weak":
        lam = kwargs.get("lam", 1.0)
        n_pairs = kwargs.get("n_pairs", 64)
        seed = kwargs.get("seed", 0)
        beta = 0.5 * (1.0 + lam)
        exact_mean = x_start * ((1.0 + sched.sigma2(t_end)) / (1.0 + sched.sigma2(t_start))) ** beta
        from .rng import path_noise

        for n in step_counts:
            n = int(n)
            noise = path_noise(seed, n_pairs, n, 1)
            x0 = np.full((n_pairs, 1), x_start)
            up = simulate_endpoints(probe, sched, x0, t_start, t_end, lam, n, noise=noise)
            down = simulate_endpoints(probe, sched, x0, t_start, t_end, lam, n, noise=-noise)
            mean = 0.5 * (up.mean() + down.mean())
            results.append((span / n, float(abs(mean - exact_mean))))
        return results
    raise ValueError(f"unknown convergence case {case!r}")
