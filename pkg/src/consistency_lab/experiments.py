"""Experiment drivers binding the numerical modules into reproducible runs.

Each driver maps a RunConfig to a report dict with a ``passed`` flag and
optional table rows and plot series.  ``run`` handles the filesystem
side: every run writes ``manifest.json`` (config echo, version, wall
clock), ``report.json`` and ``metrics.csv`` (fully deterministic given
config and seed), and any SVG plots with CSV sidecars.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, config_hash, config_to_dict
from .consistency import (
    drift_test,
    martingale_gap,
    measure_gap_bias,
    theorem41_check,
    theorem42_check,
)
from .errors import ConfigError, TrainingError
from .fields import TweedieDenoiserField
from .mixtures import ScoreProbe, perturb_forward, sample_data
from .models import load_checkpoint, save_checkpoint
from .residuals import (
    FieldProbe,
    denoiser_pde_residual,
    residual_grid_report,
    score_fpe_residual,
)
from .rng import SubstreamRng, derive_seed
from .runtime import parallel_map
from .svgplot import emit_plot
from .training import OracleScoreModel, evaluate_model, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_THRESHOLD = 3
EXIT_ERROR = 1

FPE_MAX_NORMALIZED = 1e-4
LEMMA_MAX_REL = 1e-6
THM41_EQUALITY = 1e-12
SPEARMAN_RESIDUAL_MIN = 0.95
SPEARMAN_GAP_MIN = 0.9


def _probe_state(cfg: RunConfig, t: float) -> np.ndarray:
    """One deterministic noised-data probe point for pointwise checks."""
    rng = SubstreamRng(derive_seed(cfg.seed, "probe-state"), 0)
    x0 = sample_data(cfg.mixture, 1, rng)
    return perturb_forward(x0, cfg.schedule, t, rng)[0]


def run_verify_fpe(cfg: RunConfig) -> dict:
    probe = FieldProbe(ScoreProbe(cfg.mixture, cfg.schedule), cfg.schedule, mode="analytic")
    rows = residual_grid_report(
        probe, cfg.mixture, "qt-samples", cfg.verify.n_points, cfg.verify.t_list,
        seed=cfg.seed, form=cfg.verify.form,
    )
    worst = max((row["max_res"] for row in rows), default=0.0)
    report = {
        "experiment": "verify-fpe",
        "max_normalized_residual": worst,
        "threshold": FPE_MAX_NORMALIZED,
        "passed": bool(worst <= FPE_MAX_NORMALIZED),
    }
    series = [
        {"label": "mean", "x": [r["t"] for r in rows], "y": [r["mean_res"] for r in rows]},
        {"label": "max", "x": [r["t"] for r in rows], "y": [r["max_res"] for r in rows]},
    ]
    return {"report": report, "rows": rows, "plots": [("residual_vs_t.svg", series, {
        "title": "score PDE residual of the ground truth",
        "xlabel": "t", "ylabel": "normalized residual", "logy": True})]}


def run_verify_lemma_a4(cfg: RunConfig) -> dict:
    sched = cfg.schedule
    truth = ScoreProbe(cfg.mixture, sched)
    h_field = TweedieDenoiserField(truth, sched)
    probe_s = FieldProbe(truth, sched, mode="analytic")
    probe_h = FieldProbe(h_field, sched, mode="analytic")

    def one_time(item):
        i, t = item
        rng = SubstreamRng(derive_seed(cfg.seed, "lemma-grid", i), 0)
        x0 = sample_data(cfg.mixture, cfg.verify.n_points, rng)
        pts = perturb_forward(x0, sched, t, rng)
        r_s = score_fpe_residual(probe_s, pts, float(t), form="jacobian-form")
        r_h = denoiser_pde_residual(probe_h, truth, pts, float(t))
        rel = np.linalg.norm(r_h - sched.sigma2(float(t)) * r_s, axis=-1) / (
            1.0 + np.linalg.norm(r_s, axis=-1)
        )
        return {"t": float(t), "n": int(cfg.verify.n_points),
                "mean_rel": float(np.mean(rel)), "max_rel": float(np.max(rel))}

    rows = parallel_map(one_time, list(enumerate(cfg.verify.t_list)))
    worst = max((row["max_rel"] for row in rows), default=0.0)
    report = {
        "experiment": "verify-lemma-a4",
        "max_rel_discrepancy": worst,
        "threshold": LEMMA_MAX_REL,
        "passed": bool(worst <= LEMMA_MAX_REL),
    }
    series = [{"label": "max", "x": [r["t"] for r in rows], "y": [r["max_rel"] for r in rows]}]
    return {"report": report, "rows": rows, "plots": [("lemma_identity_vs_t.svg", series, {
        "title": "denoiser-vs-score residual identity",
        "xlabel": "t", "ylabel": "relative discrepancy", "logy": True})]}


def run_verify_thm41(cfg: RunConfig) -> dict:
    sched = cfg.schedule
    truth = ScoreProbe(cfg.mixture, sched)
    h_field = TweedieDenoiserField(truth, sched)
    x = _probe_state(cfg, cfg.verify.t)
    rep = theorem41_check(
        h_field, sched, x, cfg.verify.t, cfg.verify.t_prime, cfg.solver.n_steps,
        seed=cfg.seed,
    )
    passed = (
        rep["equality_discrepancy"] <= THM41_EQUALITY
        and rep["seed_variance_lambda0"] == 0.0
        and rep["variance_decreasing_to_zero"]
    )
    report = {
        "experiment": "verify-thm41",
        "equality_discrepancy": rep["equality_discrepancy"],
        "seed_variance_lambda0": rep["seed_variance_lambda0"],
        "variance_decreasing_to_zero": rep["variance_decreasing_to_zero"],
        "reg_value_sde": rep["reg_value_sde"],
        "reg_value_ode": rep["reg_value_ode"],
        "threshold": THM41_EQUALITY,
        "passed": bool(passed),
    }
    sweep = sorted(rep["lambda_sweep"], key=lambda r: r["lambda"])
    rows = [{"lambda": r["lambda"], "variance": r["variance"], "reg_value": r["reg_value"]}
            for r in sweep]
    series = [{"label": "path variance", "x": [r["lambda"] for r in rows],
               "y": [r["variance"] for r in rows]}]
    return {"report": report, "rows": rows, "plots": [("variance_vs_lambda.svg", series, {
        "title": "prediction variance along the noise interpolation",
        "xlabel": "lambda", "ylabel": "variance"})]}


def run_verify_martingale(cfg: RunConfig) -> dict:
    sched = cfg.schedule
    truth = ScoreProbe(cfg.mixture, sched)
    h_field = TweedieDenoiserField(truth, sched)
    x = _probe_state(cfg, cfg.verify.t)
    v = cfg.verify
    res = martingale_gap(
        h_field, sched, x, v.t, v.t_prime, cfg.solver.lam, v.n_paths,
        cfg.solver.n_steps, seed=derive_seed(cfg.seed, "gap"), score_field=truth,
    )
    bias = measure_gap_bias(
        h_field, sched, x, v.t, v.t_prime, cfg.solver.lam, v.n_paths,
        cfg.solver.n_steps, seed=derive_seed(cfg.seed, "gap"), score_field=truth,
    )
    gap_norm = float(np.linalg.norm(res.gap))
    stderr = float(np.max(res.estimate.stderr))
    tol = 3.0 * stderr + bias
    passed = gap_norm <= tol and gap_norm <= v.gap_threshold
    report = {
        "experiment": "verify-martingale",
        "gap_norm": gap_norm,
        "stderr": stderr,
        "bias_estimate": bias,
        "tolerance": tol,
        "gap_threshold": v.gap_threshold,
        "reg_value": res.reg_value,
        "n_paths": v.n_paths,
        "n_steps": cfg.solver.n_steps,
        "passed": bool(passed),
    }
    return {"report": report, "rows": [report], "plots": []}


def run_verify_thm42(cfg: RunConfig) -> dict:
    truth = ScoreProbe(cfg.mixture, cfg.schedule)
    v = cfg.verify
    rep = theorem42_check(
        cfg.eps_grid(), truth,
        t=v.t, t_prime=v.t_prime, lam=cfg.solver.lam,
        n_probe_points=v.n_probe_points, n_paths=v.sweep_n_paths,
        n_steps=v.sweep_n_steps, residual_ts=v.t_list,
        n_residual_points=v.n_points, seed=cfg.seed,
    )
    passed = (
        rep["spearman_residual"] >= SPEARMAN_RESIDUAL_MIN
        and rep["spearman_gap"] >= SPEARMAN_GAP_MIN
        and rep["zero_eps_residual"] <= FPE_MAX_NORMALIZED
        and rep["zero_eps_gap"] <= rep["gap_noise_floor"]
    )
    report = {
        "experiment": "verify-thm42",
        "spearman_residual": rep["spearman_residual"],
        "spearman_gap": rep["spearman_gap"],
        "zero_eps_residual": rep["zero_eps_residual"],
        "zero_eps_gap": rep["zero_eps_gap"],
        "gap_noise_floor": rep["gap_noise_floor"],
        "gap_bias_estimate": rep["gap_bias_estimate"],
        "passed": bool(passed),
    }
    rows = rep["rows"]
    eps = [r["eps"] for r in rows]
    plots = [
        ("residual_vs_eps.svg",
         [{"label": "mean residual", "x": eps, "y": [r["mean_fpe_residual"] for r in rows]}],
         {"title": "PDE residual under score perturbation", "xlabel": "eps",
          "ylabel": "mean normalized residual"}),
        ("gap_vs_eps.svg",
         [{"label": "mean gap", "x": eps, "y": [r["mean_gap_norm"] for r in rows]}],
         {"title": "martingale gap under score perturbation", "xlabel": "eps",
          "ylabel": "mean gap norm"}),
    ]
    return {"report": report, "rows": rows, "plots": plots}


def run_verify_drift(cfg: RunConfig) -> dict:
    sched = cfg.schedule
    v = cfg.verify
    dim = cfg.mixture.dim
    x0 = np.zeros(dim)
    effect_c, se_c = drift_test(
        np.full(dim, v.drift), lambda t: sched.g(t), sched, x0, v.t, v.t_prime,
        v.drift_n_paths, cfg.solver.n_steps, seed=derive_seed(cfg.seed, "drift-on"),
    )
    effect_0, se_0 = drift_test(
        np.zeros(dim), lambda t: sched.g(t), sched, x0, v.t, v.t_prime,
        v.drift_n_paths, cfg.solver.n_steps, seed=derive_seed(cfg.seed, "drift-null"),
    )
    expected = v.drift * (v.t - v.t_prime)
    ok_c = bool(np.all(np.abs(effect_c - expected) <= 3.0 * se_c))
    ok_0 = bool(np.all(np.abs(effect_0) <= 3.0 * se_0))
    report = {
        "experiment": "verify-drift",
        "expected_effect": expected,
        "estimated_effect": effect_c.tolist(),
        "stderr": se_c.tolist(),
        "driftless_effect": effect_0.tolist(),
        "driftless_stderr": se_0.tolist(),
        "drift_case_ok": ok_c,
        "driftless_case_ok": ok_0,
        "passed": bool(ok_c and ok_0),
    }
    return {"report": report, "rows": [report], "plots": []}


def run_train(cfg: RunConfig, out_dir: Path) -> dict:
    try:
        model, metrics, aux = train(cfg.mixture, cfg.schedule, cfg.training, seed=cfg.seed)
    except TrainingError as exc:
        if exc.last_good is not None:
            save_checkpoint(exc.last_good, out_dir / "checkpoint.json",
                            config_hash=config_hash(cfg))
        return {
            "report": {"experiment": "train", "passed": False, "error": str(exc)},
            "rows": exc.metrics or [],
            "plots": [],
        }
    save_checkpoint(model, out_dir / "checkpoint.json", config_hash=config_hash(cfg))
    if "ema_model" in aux:
        save_checkpoint(aux["ema_model"], out_dir / "checkpoint_ema.json",
                        config_hash=config_hash(cfg))
    steps = [m["step"] for m in metrics]
    series = [{"label": "loss", "x": steps, "y": [max(m["loss"], 1e-12) for m in metrics]}]
    report = {
        "experiment": "train",
        "method": cfg.training.method,
        "steps": cfg.training.steps,
        "final_loss": metrics[-1]["loss"] if metrics else None,
        "passed": True,
    }
    return {"report": report, "rows": metrics, "plots": [("loss.svg", series, {
        "title": f"{cfg.training.method} training loss", "xlabel": "step",
        "ylabel": "loss", "logy": True})]}


def _load_model(cfg: RunConfig, out_dir: Path):
    path = Path(cfg.checkpoint_path)
    if not path.is_absolute() and not path.exists():
        candidate = out_dir / path
        if candidate.exists():
            path = candidate
    return load_checkpoint(path)


def run_sample(cfg: RunConfig, out_dir: Path) -> dict:
    model = _load_model(cfg, out_dir)
    sched = model.schedule
    rng = SubstreamRng(derive_seed(cfg.seed, "sample"), 0)
    x0 = sample_data(cfg.mixture, cfg.eval.n_eval, rng)
    x_T = perturb_forward(x0, sched, sched.T, rng)
    if model.kind == "consistency":
        samples = model.consistency(x_T, sched.T)
    else:
        from .dynamics import pf_ode_solve

        samples = pf_ode_solve(model.as_score_field(), sched, x_T, sched.T, sched.t0,
                               cfg.eval.gen_steps, method=cfg.solver.method)
    np.savetxt(out_dir / "samples.csv", samples, delimiter=",",
               header=",".join(f"x{i}" for i in range(samples.shape[1])), comments="")
    report = {
        "experiment": "sample",
        "n_samples": int(samples.shape[0]),
        "sample_mean": samples.mean(axis=0).tolist(),
        "sample_var": samples.var(axis=0).tolist(),
        "passed": True,
    }
    return {"report": report, "rows": [report], "plots": []}


def run_eval(cfg: RunConfig, out_dir: Path) -> dict:
    model = _load_model(cfg, out_dir)
    ev = evaluate_model(
        model, cfg.mixture, cfg.schedule, n_eval=cfg.eval.n_eval,
        seed=derive_seed(cfg.seed, "eval"), eval_ts=cfg.eval.ts,
        n_residual_points=cfg.eval.n_residual_points,
        sw_projections=cfg.eval.sw_projections, gen_steps=cfg.eval.gen_steps,
    )
    report = {"experiment": "eval", "passed": True, **ev,
              "score_mse_per_t": {str(k): v for k, v in ev["score_mse_per_t"].items()}}
    rows = [{"t": t, "score_mse": v} for t, v in ev["score_mse_per_t"].items()]
    return {"report": report, "rows": rows, "plots": []}


_DRIVERS = {
    "verify-fpe": run_verify_fpe,
    "verify-lemma-a4": run_verify_lemma_a4,
    "verify-thm41": run_verify_thm41,
    "verify-martingale": run_verify_martingale,
    "verify-thm42": run_verify_thm42,
    "verify-drift": run_verify_drift,
}


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if not rows:
            fh.write("\n")
            return
        keys = list(rows[0].keys())
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(row.get(k)) for k in keys) + "\n")


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return '"' + ";".join(repr(float(x)) for x in v) + '"'
    return str(v)


def run(cfg: RunConfig) -> int:
    """Execute the configured experiment; returns the process exit code."""
    if cfg.experiment not in set(_DRIVERS) | {"train", "sample", "eval"}:
        raise ConfigError(f"unknown or missing experiment {cfg.experiment!r}")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = {
        "artifact_version": __version__,
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "timestamp_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": config_to_dict(cfg),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")

    if cfg.experiment == "train":
        result = run_train(cfg, out_dir)
    elif cfg.experiment == "sample":
        result = run_sample(cfg, out_dir)
    elif cfg.experiment == "eval":
        result = run_eval(cfg, out_dir)
    else:
        result = _DRIVERS[cfg.experiment](cfg)

    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(result["report"], fh, indent=2)
        fh.write("\n")
    _write_csv(out_dir / "metrics.csv", result["rows"])
    for name, series, style in result["plots"]:
        emit_plot(series, out_dir / name, **style)
    return EXIT_OK if result["report"]["passed"] else EXIT_THRESHOLD
