"""Variance-exploding noise schedules.

The forward process adds Gaussian noise with standard deviation sigma(t)
on a working interval [t0, T]; the squared diffusion coefficient is the
time derivative of sigma^2.  Two forms are supported:

* ``linear-sigma``:    sigma(t) = t
* ``geometric-sigma``: sigma(t) = sigma_min * (sigma_max / sigma_min)**t
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

FORMS = ("linear-sigma", "geometric-sigma")


@dataclass(frozen=True)
class Schedule:
    form: str = "linear-sigma"
    t0: float = 0.01
    T: float = 5.0
    sigma_min: float = 0.01  # geometric form only
    sigma_max: float = 5.0   # geometric form only

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown schedule form {self.form!r}; expected one of {FORMS}")
        if not self.t0 > 0.0:
            raise ValueError(f"t0 must be positive, got {self.t0}")
        if not self.T > self.t0:
            raise ValueError(f"T={self.T} must exceed t0={self.t0}")
        if self.form == "geometric-sigma" and not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError(
                f"geometric form needs 0 < sigma_min < sigma_max, got "
                f"({self.sigma_min}, {self.sigma_max})"
            )

    def _check_t(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t0):
            bad = float(np.min(t))
            raise DomainError(f"t={bad} below lower bound t0={self.t0}")
        if np.any(t > self.T):
            bad = float(np.max(t))
            raise DomainError(f"t={bad} above upper bound T={self.T}")
        return t

    def sigma(self, t):
        t = self._check_t(t)
        if self.form == "linear-sigma":
            out = t
        else:
            out = self.sigma_min * (self.sigma_max / self.sigma_min) ** t
        return out if out.ndim else float(out)

    def sigma2(self, t):
        t = self._check_t(t)
        if self.form == "linear-sigma":
            out = t * t
        else:
            out = self.sigma_min ** 2 * (self.sigma_max / self.sigma_min) ** (2.0 * t)
        return out if out.ndim else float(out)

    def g2(self, t):
        """Analytic d(sigma^2)/dt."""
        t = self._check_t(t)
        if self.form == "linear-sigma":
            out = 2.0 * t
        else:
            log_ratio = math.log(self.sigma_max / self.sigma_min)
            out = (
                self.sigma_min ** 2
                * (self.sigma_max / self.sigma_min) ** (2.0 * t)
                * (2.0 * log_ratio)
            )
        return out if out.ndim else float(out)

    def g(self, t):
        out = np.sqrt(self.g2(t))
        return out if np.ndim(out) else float(out)
