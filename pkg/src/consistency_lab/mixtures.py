"""Closed-form ground truth: Gaussian mixtures and their noised marginals.

A diagonal-covariance mixture convolved with isotropic noise of variance
sigma^2(t) is again a diagonal mixture with per-component variances
``v_k + sigma^2(t)``, so the noised density, its score, the score's
spatial derivatives, and the posterior-mean denoiser are all available
in closed form.  These exact quantities are the reference every other
module is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .rng import SubstreamRng
from .schedule import Schedule


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of axis-aligned Gaussians.

    Attributes:
        weights: Component weights, shape ``(K,)``, positive, summing to 1.
        means: Component means, shape ``(K, D)``.
        variances: Per-dimension component variances, shape ``(K, D)``.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.atleast_2d(np.asarray(self.means, dtype=float))
        v = np.atleast_2d(np.asarray(self.variances, dtype=float))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)
        if w.ndim != 1 or m.ndim != 2 or v.ndim != 2:
            raise ShapeError("weights must be (K,), means and variances (K, D)")
        if not (w.shape[0] == m.shape[0] == v.shape[0] >= 1):
            raise ShapeError(
                f"component counts disagree: {w.shape[0]}, {m.shape[0]}, {v.shape[0]}"
            )
        if m.shape[1] != v.shape[1] or m.shape[1] < 1:
            raise ShapeError(f"means {m.shape} and variances {v.shape} disagree on D")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1 within 1e-12")
        if np.any(w <= 0.0):
            raise ValueError("all weights must be positive")
        if np.any(v <= 0.0):
            raise ValueError("all variance entries must be positive")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _check_x(gm: GaussianMixture, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim < 1 or x.shape[-1] != gm.dim:
        raise ShapeError(f"x has trailing dimension {x.shape}, expected (..., {gm.dim})")
    return x


def _noised_parts(gm: GaussianMixture, sched: Schedule, x, t):
    """Responsibilities and per-component score directions at noise level t.

    Supports a scalar t or an array t broadcasting against the leading
    dimensions of x.  Returns (r, u, log_qt) with shapes
    (..., K), (..., K, D), (...,).
    """
    x = _check_x(gm, x)
    s2 = np.asarray(sched.sigma2(t), dtype=float)
    v_eff = gm.variances + s2[..., None, None]            # (..., K, D)
    diff = x[..., None, :] - gm.means                     # (..., K, D)
    log_comp = (
        np.log(gm.weights)
        - 0.5 * np.sum(np.log(2.0 * np.pi * v_eff) + diff * diff / v_eff, axis=-1)
    )                                                     # (..., K)
    m = np.max(log_comp, axis=-1, keepdims=True)
    log_qt = np.squeeze(m, axis=-1) + np.log(
        np.sum(np.exp(log_comp - m), axis=-1)
    )
    r = np.exp(log_comp - m)
    r = r / np.sum(r, axis=-1, keepdims=True)             # responsibilities
    u = -diff / v_eff                                     # per-component scores
    return r, u, v_eff, log_qt


def log_qt(gm: GaussianMixture, sched: Schedule, x, t):
    """Log density of the noised mixture at (x, t), log-sum-exp stabilized."""
    _, _, _, lq = _noised_parts(gm, sched, x, t)
    return lq if np.ndim(lq) else float(lq)


def score(gm: GaussianMixture, sched: Schedule, x, t) -> np.ndarray:
    """Gradient of log_qt with respect to x, shape (..., D)."""
    r, u, _, _ = _noised_parts(gm, sched, x, t)
    return np.sum(r[..., None] * u, axis=-2)


def score_derivatives(gm: GaussianMixture, sched: Schedule, x, t):
    """Spatial derivatives of the score.

    Returns:
        jacobian: (..., D, D), symmetric since the score is a gradient field.
        divergence: (...,), the Jacobian trace.
        score_sq: (...,), squared Euclidean norm of the score.
    """
    r, u, v_eff, _ = _noised_parts(gm, sched, x, t)
    s = np.sum(r[..., None] * u, axis=-2)                          # (..., D)
    inv_diag = np.sum(r[..., None] / v_eff, axis=-2)               # (..., D)
    second = np.einsum("...k,...ki,...kj->...ij", r, u, u)         # (..., D, D)
    jac = second - s[..., :, None] * s[..., None, :]
    idx = np.arange(gm.dim)
    jac[..., idx, idx] -= inv_diag
    score_sq = np.sum(s * s, axis=-1)
    divergence = (
        -np.sum(inv_diag, axis=-1)
        + np.sum(r * np.sum(u * u, axis=-1), axis=-1)
        - score_sq
    )
    if np.ndim(divergence) == 0:
        return jac, float(divergence), float(score_sq)
    return jac, divergence, score_sq


def denoiser(gm: GaussianMixture, sched: Schedule, x, t) -> np.ndarray:
    """Posterior mean of the clean signal: x + sigma^2(t) * score(x, t)."""
    x = _check_x(gm, x)
    s2 = np.asarray(sched.sigma2(t), dtype=float)
    return x + s2[..., None] * score(gm, sched, x, t)


def sample_data(gm: GaussianMixture, n: int, rng: SubstreamRng) -> np.ndarray:
    """Draw n i.i.d. samples from the clean mixture, shape (n, D)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cum = np.cumsum(gm.weights)
    u = np.atleast_1d(rng.uniform((n,)))
    idx = np.minimum(np.searchsorted(cum, u, side="right"), gm.n_components - 1)
    eps = rng.normal((n, gm.dim))
    return gm.means[idx] + np.sqrt(gm.variances[idx]) * eps


def perturb_forward(x0, sched: Schedule, t, rng: SubstreamRng) -> np.ndarray:
    """Exact forward noising: x0 + sigma(t) * eps with eps standard normal.

    x0 may be a single point (D,) or a batch (N, D); t a scalar or (N,).
    """
    x0 = np.asarray(x0, dtype=float)
    sig = np.asarray(sched.sigma(t), dtype=float)
    eps = rng.normal(x0.shape)
    return x0 + sig[..., None] * eps


@dataclass(frozen=True)
class ScoreProbe:
    """The ground-truth score as a time-dependent vector field.

    Callable as ``probe(x, t)``; exposes analytic spatial derivatives so
    differential-operator checks can avoid finite differences wherever
    an exact value exists.
    """

    mixture: GaussianMixture
    schedule: Schedule
    has_analytic_jacobian: bool = field(default=True, init=False)

    @property
    def dim(self) -> int:
        return self.mixture.dim

    def __call__(self, x, t) -> np.ndarray:
        return score(self.mixture, self.schedule, x, t)

    def jacobian(self, x, t) -> np.ndarray:
        jac, _, _ = score_derivatives(self.mixture, self.schedule, x, t)
        return jac

    def div_and_sq(self, x, t):
        _, div, sq = score_derivatives(self.mixture, self.schedule, x, t)
        return div, sq

    def denoiser(self, x, t) -> np.ndarray:
        return denoiser(self.mixture, self.schedule, x, t)
