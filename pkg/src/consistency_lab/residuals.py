"""Differential-operator probes and PDE residuals for vector fields.

Two residuals are evaluated for a score field s and diffusion scale g:

* gradient form:   dt(s) - g^2/2 * grad(div(s) + |s|^2)
* jacobian form:   dt(s) - g^2/2 * lap(s) - g^2 * J_s s

The two coincide exactly when s is a gradient field (symmetric
Jacobian); for a general field they differ, and both are exposed.  The
matching residual for a denoiser field h is

    dt(h) - g^2/2 * lap(h) - g^2 * J_h s

which equals sigma^2(t) times the score residual whenever h and s are
related by h = x + sigma^2 s.

Time derivatives are always taken by finite differences, even for
fields with analytic spatial derivatives, so that the check never
borrows the identity it is trying to verify.  Third-order spatial terms
(the gradient of div(s) + |s|^2, and the vector Laplacian in analytic
mode) are built from exact first/second derivatives plus one outer
central-difference layer with step ``outer_step * (1 + |x|_inf)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .rng import SubstreamRng, derive_seed
from .schedule import Schedule

MODES = ("analytic", "finite-difference")
FORMS = ("gradient-form", "jacobian-form")


@dataclass
class FieldProbe:
    """Derivative probe for a field, analytic where declared, FD otherwise.

    spatial_step and outer_step are scaled per point by (1 + |x|_inf);
    time_step is absolute.  Central time stencils fall back to one-sided
    second-order formulas at the schedule boundaries.
    """

    field: object
    schedule: Schedule
    mode: str = "analytic"
    spatial_step: float = 1e-4
    time_step: float = 1e-4
    outer_step: float = 1e-3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown probe mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "analytic" and not getattr(self.field, "has_analytic_jacobian", False):
            raise ValueError("analytic mode requires a field with an analytic jacobian")
        if self.spatial_step <= 0 or self.time_step <= 0 or self.outer_step <= 0:
            raise ValueError("stencil steps must be positive")

    # -- basic evaluations -------------------------------------------------

    def value(self, x, t):
        return self.field(np.asarray(x, dtype=float), t)

    def _hx(self, x):
        x = np.asarray(x, dtype=float)
        return self.spatial_step * (1.0 + np.max(np.abs(x), axis=-1))

    def _houter(self, x):
        x = np.asarray(x, dtype=float)
        return self.outer_step * (1.0 + np.max(np.abs(x), axis=-1))

    def dt(self, x, t):
        """Time derivative by central differences, one-sided at boundaries."""
        h = self.time_step
        lo, hi = self.schedule.t0, self.schedule.T
        if t - h >= lo and t + h <= hi:
            return (self.value(x, t + h) - self.value(x, t - h)) / (2.0 * h)
        if t + 2.0 * h <= hi:  # forward one-sided, order 2
            return (
                -3.0 * self.value(x, t)
                + 4.0 * self.value(x, t + h)
                - self.value(x, t + 2.0 * h)
            ) / (2.0 * h)
        if t - 2.0 * h >= lo:  # backward one-sided, order 2
            return (
                3.0 * self.value(x, t)
                - 4.0 * self.value(x, t - h)
                + self.value(x, t - 2.0 * h)
            ) / (2.0 * h)
        raise DomainError(
            f"time stencil of width {2 * h} does not fit inside [{lo}, {hi}] at t={t}"
        )

    def jacobian(self, x, t):
        if self.mode == "analytic":
            return self.field.jacobian(x, t)
        x = np.asarray(x, dtype=float)
        h = np.asarray(self._hx(x))[..., None]  # (..., 1)
        dim = x.shape[-1]
        cols = []
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = 1.0
            step = h * e
            cols.append((self.value(x + step, t) - self.value(x - step, t)) / (2.0 * h))
        return np.stack(cols, axis=-1)  # (..., i, j)

    def div_and_sq(self, x, t):
        """(div s, |s|^2), analytic when the field provides them."""
        if self.mode == "analytic" and hasattr(self.field, "div_and_sq"):
            return self.field.div_and_sq(x, t)
        jac = self.jacobian(x, t)
        val = self.value(x, t)
        div = np.trace(jac, axis1=-2, axis2=-1)
        return div, np.sum(val * val, axis=-1)

    def laplacian(self, x, t):
        """Vector Laplacian (lap f)_i = sum_j d^2 f_i / dx_j^2.

        Analytic mode differentiates the exact Jacobian with one outer FD
        layer; FD mode uses second central differences of the field.
        """
        x = np.asarray(x, dtype=float)
        dim = x.shape[-1]
        if self.mode == "analytic":
            h = np.asarray(self._houter(x))[..., None]
            acc = 0.0
            for j in range(dim):
                e = np.zeros(dim)
                e[j] = 1.0
                step = h * e
                jp = self.field.jacobian(x + step, t)[..., :, j]
                jm = self.field.jacobian(x - step, t)[..., :, j]
                acc = acc + (jp - jm) / (2.0 * h)
            return acc
        h = np.asarray(self._hx(x))[..., None]
        center = self.value(x, t)
        acc = 0.0
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = 1.0
            step = h * e
            acc = acc + (self.value(x + step, t) + self.value(x - step, t) - 2.0 * center) / (h * h)
        return acc

    def grad_scalar(self, x, t, scalar_fn):
        """Outer central-difference gradient of a scalar function of x."""
        x = np.asarray(x, dtype=float)
        dim = x.shape[-1]
        h = np.asarray(self._houter(x))[..., None]
        h_flat = h[..., 0]
        parts = []
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = 1.0
            step = h * e
            parts.append(
                (scalar_fn(x + step, t) - scalar_fn(x - step, t)) / (2.0 * h_flat)
            )
        return np.stack(parts, axis=-1)


def score_fpe_residual(probe: FieldProbe, x, t, form: str = "gradient-form"):
    """Residual of the score evolution PDE at (x, t), shape (..., D)."""
    if form not in FORMS:
        raise ValueError(f"unknown residual form {form!r}; expected one of {FORMS}")
    g2 = probe.schedule.g2(t)
    dts = probe.dt(x, t)
    if form == "gradient-form":
        def phi(y, tt):
            div, sq = probe.div_and_sq(y, tt)
            return div + sq

        grad = probe.grad_scalar(x, t, phi)
        return dts - 0.5 * g2 * grad
    lap = probe.laplacian(x, t)
    jac = probe.jacobian(x, t)
    val = probe.value(x, t)
    advect = np.einsum("...ij,...j->...i", jac, val)
    return dts - 0.5 * g2 * lap - g2 * advect


def denoiser_pde_residual(probe: FieldProbe, score_field, x, t):
    """Residual dt(h) - g^2/2 lap(h) - g^2 J_h s for a denoiser field h.

    ``score_field`` supplies s; pass None to derive it from the probe's
    own field via (h(x, t) - x) / sigma^2(t).
    """
    x = np.asarray(x, dtype=float)
    g2 = probe.schedule.g2(t)
    dts = probe.dt(x, t)
    lap = probe.laplacian(x, t)
    jac = probe.jacobian(x, t)
    if score_field is None:
        s = (probe.value(x, t) - x) / probe.schedule.sigma2(t)
    else:
        s = score_field(x, t)
    advect = np.einsum("...ij,...j->...i", jac, s)
    return dts - 0.5 * g2 * lap - g2 * advect


def fpe_form_agreement(probe: FieldProbe, x, t) -> float:
    """Max absolute discrepancy between the two residual forms.

    The forms agree (up to stencil error) exactly when the field is a
    gradient field; a rotational component makes them differ.
    """
    r_grad = score_fpe_residual(probe, x, t, form="gradient-form")
    r_jac = score_fpe_residual(probe, x, t, form="jacobian-form")
    return float(np.max(np.abs(r_grad - r_jac)))


def normalized_residual_norms(probe: FieldProbe, x, t, form: str = "gradient-form"):
    """Per-point |r| / (1 + |dt s|), shape (...,)."""
    r = score_fpe_residual(probe, x, t, form=form)
    dts = probe.dt(x, t)
    return np.linalg.norm(r, axis=-1) / (1.0 + np.linalg.norm(dts, axis=-1))


def residual_grid_report(
    probe: FieldProbe,
    gm,
    sampler: str,
    n_points: int,
    t_list,
    seed: int = 0,
    form: str = "gradient-form",
    box_halfwidth: float = 4.0,
):
    """Aggregate normalized residual norms over sampled points per time.

    sampler ``qt-samples`` draws from the noised mixture at each t;
    ``uniform-box`` draws uniformly from a centered box.  Returns a list
    of row dicts with keys
    ``t, n, mean_res, max_res, stencil_dx, stencil_dt``.
    """
    from .mixtures import perturb_forward, sample_data

    if sampler not in ("qt-samples", "uniform-box"):
        raise ValueError(f"unknown sampler {sampler!r}")
    rows = []
    for i, t in enumerate(t_list):
        if n_points == 0:
            continue
        rng = SubstreamRng(derive_seed(seed, "residual-grid", i), 0)
        if sampler == "qt-samples":
            x0 = sample_data(gm, n_points, rng)
            pts = perturb_forward(x0, probe.schedule, t, rng)
        else:
            pts = (rng.uniform((n_points, gm.dim)) * 2.0 - 1.0) * box_halfwidth
        norms = normalized_residual_norms(probe, pts, float(t), form=form)
        rows.append(
            {
                "t": float(t),
                "n": int(n_points),
                "mean_res": float(np.mean(norms)),
                "max_res": float(np.max(norms)),
                "stencil_dx": float(probe.spatial_step if probe.mode == "finite-difference" else probe.outer_step),
                "stencil_dt": float(probe.time_step),
            }
        )
    return rows
