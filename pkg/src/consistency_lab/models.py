"""Network parametrizations and checkpoint serialization.

One MLP backbone serves three output parametrizations:

* ``score``:       s(x, t) = net(x, t)
* ``denoiser``:    h(x, t) = x + sigma^2(t) net(x, t)
* ``consistency``: f(x, t) = c_skip(t) x + c_out(t) net(x, t)

The consistency coefficients satisfy c_skip(t0) = 1 and c_out(t0) = 0
exactly, so f(x, t0) = x for any weights; that pins the boundary where
generated samples live.  Score and denoiser forms interconvert through
the posterior-mean identity h = x + sigma^2 s.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .schedule import Schedule

KINDS = ("score", "denoiser", "consistency")
TIME_FEATURES = ("raw-t", "log-sigma")

CHECKPOINT_VERSION = 1


def consistency_coeffs(sched: Schedule, t, v: float = 0.5):
    """Skip/out coefficients for the consistency parametrization."""
    sig = np.asarray(sched.sigma(t), dtype=float)
    sig0 = sched.sigma(sched.t0)
    d = sig - sig0
    c_skip = v * v / (v * v + d * d)
    c_out = v * d / np.sqrt(v * v + sig * sig)
    return c_skip, c_out


@dataclass
class DiffusionModel:
    """MLP backbone plus parametrization, schedule, and time features."""

    params: list
    kind: str
    schedule: Schedule
    hidden: tuple = (64, 64)
    dim: int = 1
    time_features: str = "log-sigma"
    coeff_v: float = 0.5
    has_analytic_jacobian: bool = field(default=False, init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown parametrization {self.kind!r}; expected {KINDS}")
        if self.time_features not in TIME_FEATURES:
            raise ValueError(
                f"unknown time features {self.time_features!r}; expected {TIME_FEATURES}"
            )

    @classmethod
    def create(cls, kind, schedule, dim=1, hidden=(64, 64), time_features="log-sigma",
               coeff_v=0.5, seed=0):
        n_in = dim + (2 if time_features == "log-sigma" else 1)
        params = mlp.init_params([n_in, *hidden, dim], seed)
        return cls(params=params, kind=kind, schedule=schedule, hidden=tuple(hidden),
                   dim=dim, time_features=time_features, coeff_v=coeff_v)

    @property
    def layer_dims(self):
        dims = [self.params[0][0].shape[0]]
        dims += [w.shape[1] for w, _ in self.params]
        return dims

    # -- evaluation ---------------------------------------------------------

    def features(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t_arr = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1]).reshape(-1, 1)
        if self.time_features == "raw-t":
            return np.concatenate([x, t_arr], axis=-1)
        log_sig = np.log(np.asarray(self.schedule.sigma(t_arr[:, 0]), dtype=float))
        return np.concatenate([x, t_arr, log_sig.reshape(-1, 1)], axis=-1)

    def raw_with_cache(self, x, t):
        out, cache = mlp.forward(self.params, self.features(x, t))
        return out, cache

    def raw(self, x, t):
        return self.raw_with_cache(x, t)[0]

    def score(self, x, t):
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        out = self.raw(x2, t)
        if self.kind in ("score", "denoiser"):
            s = out
        else:
            s2 = np.asarray(self.schedule.sigma2(t), dtype=float)
            f = self.consistency(x2, t)
            s = (f - x2) / np.reshape(s2, (-1, 1) if np.ndim(s2) else (1,))
        return s if np.asarray(x).ndim > 1 else s[0]

    def denoiser(self, x, t):
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        s2 = np.asarray(self.schedule.sigma2(t), dtype=float)
        h = x2 + np.reshape(s2, (-1, 1) if np.ndim(s2) else (1,)) * self.score(x2, t)
        return h if np.asarray(x).ndim > 1 else h[0]

    def consistency(self, x, t):
        if self.kind != "consistency":
            raise ValueError(f"consistency output undefined for kind {self.kind!r}")
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        c_skip, c_out = consistency_coeffs(self.schedule, t, self.coeff_v)
        c_skip = np.reshape(c_skip, (-1, 1) if np.ndim(c_skip) else (1,))
        c_out = np.reshape(c_out, (-1, 1) if np.ndim(c_out) else (1,))
        f = c_skip * x2 + c_out * self.raw(x2, t)
        return f if np.asarray(x).ndim > 1 else f[0]

    def __call__(self, x, t):
        """Primary output for the declared kind, usable as a vector field."""
        if self.kind == "score":
            return self.score(x, t)
        if self.kind == "denoiser":
            return self.denoiser(x, t)
        return self.consistency(x, t)

    def score_chain_coef(self, t, n):
        """d(score)/d(net output), shape (n, 1); chain factor for losses."""
        if self.kind in ("score", "denoiser"):
            return np.ones((n, 1))
        s2 = np.asarray(self.schedule.sigma2(t), dtype=float)
        _, c_out = consistency_coeffs(self.schedule, t, self.coeff_v)
        return (np.broadcast_to(c_out / s2, (n,))).reshape(n, 1)

    def as_score_field(self):
        """Adapter exposing the induced score as a plain vector field."""
        model = self

        class _ScoreField:
            dim = model.dim
            has_analytic_jacobian = False

            def __call__(self, x, t):
                return model.score(x, t)

        return _ScoreField()

    def clone(self):
        return DiffusionModel(
            params=mlp.clone_params(self.params), kind=self.kind,
            schedule=self.schedule, hidden=self.hidden, dim=self.dim,
            time_features=self.time_features, coeff_v=self.coeff_v,
        )


def checkpoint_dict(model: DiffusionModel, config_hash: str = "") -> dict:
    sched = model.schedule
    return {
        "version": CHECKPOINT_VERSION,
        "parametrization": model.kind,
        "layer_dims": model.layer_dims,
        "time_features": model.time_features,
        "activation": "tanh",
        "coeff_v": model.coeff_v,
        "schedule": {
            "form": sched.form,
            "t0": sched.t0,
            "T": sched.T,
            "sigma_min": sched.sigma_min,
            "sigma_max": sched.sigma_max,
        },
        "config_hash": config_hash,
        "weights": [w.tolist() for w, _ in model.params],   # row-major per layer
        "biases": [b.tolist() for _, b in model.params],
    }


def save_checkpoint(model: DiffusionModel, path, config_hash: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_dict(model, config_hash), fh, indent=2)
        fh.write("\n")


def load_checkpoint(path) -> DiffusionModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    sched = Schedule(**doc["schedule"])
    params = [
        (np.asarray(w, dtype=float), np.asarray(b, dtype=float))
        for w, b in zip(doc["weights"], doc["biases"])
    ]
    dims = doc["layer_dims"]
    return DiffusionModel(
        params=params,
        kind=doc["parametrization"],
        schedule=sched,
        hidden=tuple(dims[1:-1]),
        dim=dims[-1],
        time_features=doc["time_features"],
        coeff_v=doc["coeff_v"],
    )
