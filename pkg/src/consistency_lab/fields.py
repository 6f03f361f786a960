"""Time-dependent vector fields and adapters between score and denoiser form.

A field is any callable ``(x, t) -> (..., D)`` with a ``dim`` attribute.
Fields that can also report an exact spatial Jacobian set
``has_analytic_jacobian`` and provide ``jacobian(x, t)``; probes fall
back to finite differences otherwise.
"""

from __future__ import annotations

import numpy as np

from .schedule import Schedule


class FuncField:
    """Wrap a plain callable as a field, optionally with its Jacobian."""

    def __init__(self, fn, dim, jacobian_fn=None):
        self._fn = fn
        self.dim = dim
        self._jacobian_fn = jacobian_fn
        self.has_analytic_jacobian = jacobian_fn is not None

    def __call__(self, x, t):
        return self._fn(np.asarray(x, dtype=float), t)

    def jacobian(self, x, t):
        if self._jacobian_fn is None:
            raise AttributeError("field has no analytic jacobian")
        return self._jacobian_fn(np.asarray(x, dtype=float), t)


class TweedieDenoiserField:
    """Denoiser induced by a score field: h(x, t) = x + sigma^2(t) s(x, t)."""

    def __init__(self, score_field, schedule: Schedule):
        self.score_field = score_field
        self.schedule = schedule
        self.dim = score_field.dim
        self.has_analytic_jacobian = getattr(score_field, "has_analytic_jacobian", False)

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        s2 = np.asarray(self.schedule.sigma2(t), dtype=float)
        return x + s2[..., None] * self.score_field(x, t)

    def jacobian(self, x, t):
        x = np.asarray(x, dtype=float)
        s2 = np.asarray(self.schedule.sigma2(t), dtype=float)
        jac = s2[..., None, None] * self.score_field.jacobian(x, t)
        idx = np.arange(self.dim)
        jac[..., idx, idx] += 1.0
        return jac


class InducedScoreField:
    """Score induced by a denoiser field: s(x, t) = (h(x, t) - x) / sigma^2(t)."""

    def __init__(self, h_field, schedule: Schedule):
        self.h_field = h_field
        self.schedule = schedule
        self.dim = h_field.dim
        self.has_analytic_jacobian = getattr(h_field, "has_analytic_jacobian", False)

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        s2 = np.asarray(self.schedule.sigma2(t), dtype=float)
        return (self.h_field(x, t) - x) / s2[..., None]

    def jacobian(self, x, t):
        x = np.asarray(x, dtype=float)
        s2 = np.asarray(self.schedule.sigma2(t), dtype=float)
        jac = self.h_field.jacobian(x, t).copy()
        idx = np.arange(self.dim)
        jac[..., idx, idx] -= 1.0
        return jac / s2[..., None, None]


class PerturbedScoreField:
    """Base score plus eps times a perturbation field (default p(x, t) = x)."""

    def __init__(self, base, eps, perturbation=None):
        self.base = base
        self.eps = float(eps)
        self.perturbation = perturbation
        self.dim = base.dim
        base_ok = getattr(base, "has_analytic_jacobian", False)
        pert_ok = perturbation is None or getattr(perturbation, "has_analytic_jacobian", False)
        self.has_analytic_jacobian = base_ok and pert_ok

    def _p(self, x, t):
        if self.perturbation is None:
            return x
        return self.perturbation(x, t)

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        return self.base(x, t) + self.eps * self._p(x, t)

    def jacobian(self, x, t):
        x = np.asarray(x, dtype=float)
        jac = self.base.jacobian(x, t).copy()
        if self.perturbation is None:
            idx = np.arange(self.dim)
            jac[..., idx, idx] += self.eps
            return jac
        return jac + self.eps * self.perturbation.jacobian(x, t)


class LinearField:
    """s(x, t) = A x for a constant matrix A; exact Jacobian is A."""

    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.dim = self.matrix.shape[0]
        self.has_analytic_jacobian = True

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        return x @ self.matrix.T

    def jacobian(self, x, t):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.matrix, x.shape[:-1] + self.matrix.shape).copy()


class ZeroField:
    """The zero vector field."""

    def __init__(self, dim):
        self.dim = dim
        self.has_analytic_jacobian = True

    def __call__(self, x, t):
        return np.zeros_like(np.asarray(x, dtype=float))

    def jacobian(self, x, t):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim, self.dim))


def gaussian_flow_factor(sched: Schedule, base_var: float, t_start, t_end) -> float:
    """Closed-form contraction of the deterministic flow for N(0, base_var) data.

    For a single zero-mean Gaussian the flow map is linear:
    x(t_end) = x(t_start) * sqrt((base_var + sigma^2(t_end)) /
    (base_var + sigma^2(t_start))).
    """
    return float(
        np.sqrt(
            (base_var + sched.sigma2(t_end)) / (base_var + sched.sigma2(t_start))
        )
    )


class GaussianConsistencyField:
    """Exact trajectory-endpoint map for single-Gaussian N(mean, var) data.

    f(x, t) carries x along the deterministic flow down to the schedule
    start t0, where generated samples live.
    """

    def __init__(self, sched: Schedule, mean: float = 0.0, var: float = 1.0, dim: int = 1):
        self.schedule = sched
        self.mean = float(mean)
        self.var = float(var)
        self.dim = dim
        self.has_analytic_jacobian = False

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        factor = np.sqrt(
            (self.var + self.schedule.sigma2(self.schedule.t0))
            / (self.var + np.asarray(self.schedule.sigma2(t), dtype=float))
        )
        return self.mean + factor[..., None] * (x - self.mean)
