"""Run configuration: strict TOML parsing into typed settings.

A run is a pure function of (config, seed).  Parsing is strict: any key
not in the schema is rejected with its full path so typos cannot
silently change an experiment.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .mixtures import GaussianMixture
from .schedule import Schedule
from .training import TrainSettings

EXPERIMENTS = (
    "verify-fpe",
    "verify-martingale",
    "verify-thm41",
    "verify-thm42",
    "verify-lemma-a4",
    "verify-drift",
    "train",
    "sample",
    "eval",
)


@dataclass
class SolverConfig:
    n_steps: int = 400
    method: str = "heun"
    lam: float = 1.0


@dataclass
class ModelConfig:
    hidden: tuple = (64, 64)
    parametrization: str = ""
    time_features: str = "log-sigma"
    coeff_v: float = 0.5


@dataclass
class VerifyConfig:
    t: float = 1.0
    t_prime: float = 0.5
    n_paths: int = 20000
    n_points: int = 100
    t_list: tuple = (0.1, 0.5, 1.0, 2.0)
    form: str = "gradient-form"
    drift: float = 0.5
    drift_n_paths: int = 10000
    eps_max: float = 0.3
    eps_step: float = 0.02
    sweep_n_paths: int = 4000
    sweep_n_steps: int = 200
    n_probe_points: int = 8
    gap_threshold: float = 0.02


@dataclass
class EvalConfig:
    n_eval: int = 4096
    ts: tuple = (0.5, 1.0, 2.0)
    n_residual_points: int = 100
    sw_projections: int = 64
    gen_steps: int = 128


@dataclass
class RunConfig:
    experiment: str = ""
    seed: int = 0
    output_dir: str = "out"
    checkpoint_path: str = "checkpoint.json"
    schedule: Schedule = field(default_factory=Schedule)
    mixture: GaussianMixture = field(default_factory=lambda: GaussianMixture(
        weights=[0.5, 0.5], means=[[-1.0], [1.0]], variances=[[0.25], [0.25]]
    ))
    solver: SolverConfig = field(default_factory=SolverConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainSettings = field(default_factory=TrainSettings)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def eps_grid(self):
        v = self.verify
        n = int(round(v.eps_max / v.eps_step)) + 1
        return [round(k * v.eps_step, 10) for k in range(n)]


_SCHEMA = {
    "": {"experiment", "seed", "output_dir", "checkpoint_path"},
    "schedule": {"form", "t0", "T", "sigma_min", "sigma_max"},
    "mixture": {"weights", "means", "variances"},
    "solver": {"n_steps", "method", "lambda"},
    "model": {"hidden", "parametrization", "time_features", "coeff_v"},
    "training": {
        "method", "steps", "lr", "lr_schedule", "lr_final", "batch_size",
        "optimizer", "dsm_weight", "reg_weight", "lambda", "n_paths",
        "inner_steps", "reg_batch", "t_grid_size", "ema_mu",
        "fp_spatial_step", "fp_time_step",
    },
    "verify": {
        "t", "t_prime", "n_paths", "n_points", "t_list", "form", "drift",
        "drift_n_paths", "eps_max", "eps_step", "sweep_n_paths",
        "sweep_n_steps", "n_probe_points", "gap_threshold",
    },
    "eval": {"n_eval", "ts", "n_residual_points", "sw_projections", "gen_steps"},
}


def _check_keys(doc: dict) -> None:
    for key, value in doc.items():
        if key in _SCHEMA and key != "" and isinstance(value, dict):
            for sub in value:
                if sub not in _SCHEMA[key]:
                    raise ConfigError(f"unknown config key {key}.{sub}")
        elif key in _SCHEMA[""]:
            continue
        else:
            raise ConfigError(f"unknown config key {key}")


def _nested(doc, section, key, default):
    return doc.get(section, {}).get(key, default)


def config_from_dict(doc: dict) -> RunConfig:
    """Build a RunConfig from a parsed TOML document, strictly."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a table")
    _check_keys(doc)

    cfg = RunConfig()
    experiment = doc.get("experiment", "")
    if experiment and experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
    cfg.experiment = experiment
    cfg.seed = int(doc.get("seed", 0))
    cfg.output_dir = str(doc.get("output_dir", "out"))
    cfg.checkpoint_path = str(doc.get("checkpoint_path", "checkpoint.json"))

    try:
        sd = doc.get("schedule", {})
        cfg.schedule = Schedule(
            form=sd.get("form", "linear-sigma"),
            t0=float(sd.get("t0", 0.01)),
            T=float(sd.get("T", 5.0)),
            sigma_min=float(sd.get("sigma_min", 0.01)),
            sigma_max=float(sd.get("sigma_max", 5.0)),
        )
        if "mixture" in doc:
            md = doc["mixture"]
            cfg.mixture = GaussianMixture(
                weights=np.asarray(md["weights"], dtype=float),
                means=np.asarray(md["means"], dtype=float),
                variances=np.asarray(md["variances"], dtype=float),
            )
        cfg.solver = SolverConfig(
            n_steps=int(_nested(doc, "solver", "n_steps", 400)),
            method=str(_nested(doc, "solver", "method", "heun")),
            lam=float(_nested(doc, "solver", "lambda", 1.0)),
        )
        cfg.model = ModelConfig(
            hidden=tuple(int(h) for h in _nested(doc, "model", "hidden", (64, 64))),
            parametrization=str(_nested(doc, "model", "parametrization", "")),
            time_features=str(_nested(doc, "model", "time_features", "log-sigma")),
            coeff_v=float(_nested(doc, "model", "coeff_v", 0.5)),
        )
        td = doc.get("training", {})
        cfg.training = TrainSettings(
            method=td.get("method", "dsm"),
            steps=int(td.get("steps", 5000)),
            lr=float(td.get("lr", 1e-3)),
            lr_schedule=td.get("lr_schedule", "constant"),
            lr_final=float(td.get("lr_final", 1e-5)),
            batch_size=int(td.get("batch_size", 256)),
            hidden=tuple(int(h) for h in _nested(doc, "model", "hidden", (64, 64))),
            time_features=str(_nested(doc, "model", "time_features", "log-sigma")),
            parametrization=str(_nested(doc, "model", "parametrization", "")),
            optimizer=td.get("optimizer", "adam"),
            dsm_weight=float(td.get("dsm_weight", 1.0)),
            reg_weight=float(td.get("reg_weight", 1.0)),
            lam=float(td.get("lambda", 1.0)),
            n_paths=int(td.get("n_paths", 8)),
            inner_steps=int(td.get("inner_steps", 8)),
            reg_batch=int(td.get("reg_batch", 32)),
            t_grid_size=int(td.get("t_grid_size", 32)),
            ema_mu=float(td.get("ema_mu", 0.99)),
            fp_spatial_step=float(td.get("fp_spatial_step", 1e-2)),
            fp_time_step=float(td.get("fp_time_step", 1e-3)),
        )
        vd = doc.get("verify", {})
        cfg.verify = VerifyConfig(
            t=float(vd.get("t", 1.0)),
            t_prime=float(vd.get("t_prime", 0.5)),
            n_paths=int(vd.get("n_paths", 20000)),
            n_points=int(vd.get("n_points", 100)),
            t_list=tuple(float(t) for t in vd.get("t_list", (0.1, 0.5, 1.0, 2.0))),
            form=str(vd.get("form", "gradient-form")),
            drift=float(vd.get("drift", 0.5)),
            drift_n_paths=int(vd.get("drift_n_paths", 10000)),
            eps_max=float(vd.get("eps_max", 0.3)),
            eps_step=float(vd.get("eps_step", 0.02)),
            sweep_n_paths=int(vd.get("sweep_n_paths", 4000)),
            sweep_n_steps=int(vd.get("sweep_n_steps", 200)),
            n_probe_points=int(vd.get("n_probe_points", 8)),
            gap_threshold=float(vd.get("gap_threshold", 0.02)),
        )
        ed = doc.get("eval", {})
        cfg.eval = EvalConfig(
            n_eval=int(ed.get("n_eval", 4096)),
            ts=tuple(float(t) for t in ed.get("ts", (0.5, 1.0, 2.0))),
            n_residual_points=int(ed.get("n_residual_points", 100)),
            sw_projections=int(ed.get("sw_projections", 64)),
            gen_steps=int(ed.get("gen_steps", 128)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    return cfg


def load_config(path=None) -> RunConfig:
    """Parse a TOML file (or defaults when path is None)."""
    if path is None:
        return RunConfig()
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"TOML parse failure in {path}: {exc}") from exc
    return config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    """Full resolved-config echo for the run manifest."""
    return {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "checkpoint_path": cfg.checkpoint_path,
        "schedule": {
            "form": cfg.schedule.form,
            "t0": cfg.schedule.t0,
            "T": cfg.schedule.T,
            "sigma_min": cfg.schedule.sigma_min,
            "sigma_max": cfg.schedule.sigma_max,
        },
        "mixture": {
            "weights": cfg.mixture.weights.tolist(),
            "means": cfg.mixture.means.tolist(),
            "variances": cfg.mixture.variances.tolist(),
        },
        "solver": {
            "n_steps": cfg.solver.n_steps,
            "method": cfg.solver.method,
            "lambda": cfg.solver.lam,
        },
        "model": {
            "hidden": list(cfg.model.hidden),
            "parametrization": cfg.model.parametrization,
            "time_features": cfg.model.time_features,
            "coeff_v": cfg.model.coeff_v,
        },
        "training": {
            "method": cfg.training.method,
            "steps": cfg.training.steps,
            "lr": cfg.training.lr,
            "lr_schedule": cfg.training.lr_schedule,
            "lr_final": cfg.training.lr_final,
            "batch_size": cfg.training.batch_size,
            "optimizer": cfg.training.optimizer,
            "dsm_weight": cfg.training.dsm_weight,
            "reg_weight": cfg.training.reg_weight,
            "lambda": cfg.training.lam,
            "n_paths": cfg.training.n_paths,
            "inner_steps": cfg.training.inner_steps,
            "reg_batch": cfg.training.reg_batch,
            "t_grid_size": cfg.training.t_grid_size,
            "ema_mu": cfg.training.ema_mu,
            "fp_spatial_step": cfg.training.fp_spatial_step,
            "fp_time_step": cfg.training.fp_time_step,
        },
        "verify": {
            "t": cfg.verify.t,
            "t_prime": cfg.verify.t_prime,
            "n_paths": cfg.verify.n_paths,
            "n_points": cfg.verify.n_points,
            "t_list": list(cfg.verify.t_list),
            "form": cfg.verify.form,
            "drift": cfg.verify.drift,
            "drift_n_paths": cfg.verify.drift_n_paths,
            "eps_max": cfg.verify.eps_max,
            "eps_step": cfg.verify.eps_step,
            "sweep_n_paths": cfg.verify.sweep_n_paths,
            "sweep_n_steps": cfg.verify.sweep_n_steps,
            "n_probe_points": cfg.verify.n_probe_points,
            "gap_threshold": cfg.verify.gap_threshold,
        },
        "eval": {
            "n_eval": cfg.eval.n_eval,
            "ts": list(cfg.eval.ts),
            "n_residual_points": cfg.eval.n_residual_points,
            "sw_projections": cfg.eval.sw_projections,
            "gen_steps": cfg.eval.gen_steps,
        },
    }


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
