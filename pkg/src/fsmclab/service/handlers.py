"""Pure handlers shared by the HTTP app and the in-process CLI.

Each takes a typed ExperimentConfig (plus options) and returns plain
JSON-able dicts, so the CLI produces identical output whether it dispatches
locally or posts to a server.
"""

from __future__ import annotations

import math

import numpy as np

from ..alloc import AllocProblem, solve_allocation
from ..analysis import conditional_model, pe_exact, pe_upper_bound
from ..capacity import capacity_continuous_iid, capacity_finite
from ..channel import is_finite, realize
from ..control import gain_grid_scan, measure_growth, mss_verdict, stability_window
from ..errors import UnsupportedDistribution
from ..harness import (
    ExperimentConfig, REFERENCE_TARGETS, build_setup, reference_example_config,
    run_experiment, validate_config,
)
from ..schemes import make_params

_SHARE_SAMPLES = 200_000


def _params_for(cfg: ExperimentConfig):
    return build_setup(cfg, cfg.horizons[0]).params


def handle_validate(cfg: ExperimentConfig) -> dict:
    out = validate_config(cfg)
    out["summary"] = {str(k): v for k, v in out["summary"].items()}
    return out


def handle_capacity(cfg: ExperimentConfig) -> dict:
    if is_finite(cfg.process):
        prob = AllocProblem.from_process(cfg.process, cfg.budget, cfg.delay)
        report = capacity_finite(prob)
    else:
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x5E70B, 0)))
        report = capacity_continuous_iid(cfg.process, cfg.budget, _SHARE_SAMPLES, rng)
    return {
        "bits_per_use": report.bits_per_use,
        "total_growth": report.total_growth,
        "log2_rate_share": [float(v) for v in report.log2_rate_share],
        "rate_share_growth": [float(v) for v in report.rate_share_growth],
        "per_visit_stretch": [float(v) for v in report.per_visit_stretch],
        "powers": [float(v) for v in report.powers],
        "budget": report.budget,
        "delay": report.delay,
        "block_bits": {str(k): report.block_bits(k) for k in cfg.horizons},
        "n_samples": report.n_samples,
        "stderr": report.stderr,
    }


def handle_alloc(cfg: ExperimentConfig) -> dict:
    if not is_finite(cfg.process):
        raise UnsupportedDistribution(
            "continuous iid fading takes the full budget in every use; "
            "there is no per-state allocation to solve")
    prob = AllocProblem.from_process(cfg.process, cfg.budget, cfg.delay)
    alloc = solve_allocation(prob)
    return {
        "powers": [float(v) for v in alloc.powers],
        "dual": alloc.dual,
        "objective_bits": alloc.objective_bits,
        "kkt_residual": alloc.kkt_residual,
        "spent": alloc.spent,
        "method": alloc.method,
    }


def handle_simulate(cfg: ExperimentConfig) -> dict:
    table = run_experiment(cfg)
    return {"meta": table.meta, "columns": table.columns, "rows": table.rows}


def handle_pe_curve(cfg: ExperimentConfig, n_paths: int = 200,
                    mode: str = "uniform", unbiased: bool = False) -> dict:
    points = []
    for K in cfg.horizons:
        setup = build_setup(cfg, K)
        params, cb = setup.params, setup.codebook
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, K, 0xBE)))
        exact = np.empty(n_paths)
        bound = np.empty(n_paths)
        for i in range(n_paths):
            real = realize(cfg.process, K + 1, rng)
            model = conditional_model(params, real.state_idx, real.gains, K)
            exact[i] = pe_exact(model, cb, mode=mode, unbiased=unbiased)
            bound[i] = pe_upper_bound(params, cb, K, state_idx=real.state_idx,
                                      gains=real.gains,
                                      log2_contraction=model.log2_contraction)["total"]
        se = float(exact.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
        points.append({
            "horizon": K,
            "rate_bits_per_use": cb.rate_bits_per_use(),
            "pe_exact_mean": float(exact.mean()),
            "pe_exact_stderr": se,
            "pe_bound_mean": float(bound.mean()),
            "n_paths": n_paths,
        })
    return {"mode": mode, "unbiased": unbiased, "points": points}


def handle_growth(cfg: ExperimentConfig, horizon: int = 100_000, seeds: int = 20) -> dict:
    params = _params_for(cfg)
    rngs = [np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x660, i)))
            for i in range(seeds)]
    report = measure_growth(params, horizon, rngs)
    err = None if report.target is None else abs(report.mean - report.target)
    return {
        "horizon": report.horizon,
        "per_seed": [float(v) for v in report.per_seed],
        "mean": report.mean,
        "target": report.target,
        "abs_error": err,
    }


def handle_mss(cfg: ExperimentConfig, factors: list, horizon: int = 400,
               n_paths: int = 64) -> dict:
    params = _params_for(cfg)
    try:
        lo, hi = stability_window(params)
        window = {"window_lo": lo, "window_hi": None if math.isinf(hi) else hi}
    except UnsupportedDistribution:
        window = {"window_lo": None, "window_hi": None}
    rows = []
    for f in factors:
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x355)))
        v = mss_verdict(params, float(f), horizon=horizon, n_paths=n_paths, rng=rng)
        rows.append({
            "factor": float(f),
            "stable": v.stable,
            "spectral_radius": v.spectral_radius,
            "worst_case_contracting": v.worst_case_contracting,
            "max_abs_closed_loop": v.max_abs_closed_loop,
            "ergodic_rate_bits": (None if v.ergodic_rate_bits is None
                                  or math.isinf(v.ergodic_rate_bits)
                                  else v.ergodic_rate_bits),
            "mean_decay": _finite_or_big(v.mean_decay),
            "m2_tail_ratio": _finite_or_big(v.m2_tail_ratio),
            "diverged": v.diverged,
        })
    return {**window, "rows": rows}


def _finite_or_big(v: float) -> float:
    # JSON has no inf; saturate diverged diagnostics
    return v if math.isfinite(v) else 1e308


def handle_cheap_control(cfg: ExperimentConfig, factors: list, horizon: int = 200,
                         n_paths: int = 256) -> dict:
    params = _params_for(cfg)
    raw = gain_grid_scan(params, [float(f) for f in factors], horizon=horizon,
                         n_paths=n_paths, master_seed=cfg.seed)
    rows = []
    best = None
    for r in raw:
        value = r["value"] if r["stable"] else None
        rows.append({"factor": r["factor"], "stable": r["stable"], "value": value,
                     "stderr": r["stderr"] if r["stable"] else None})
        if value is not None and (best is None or value < best[1]):
            best = (r["factor"], value)
    return {"budget": params.budget, "best_factor": best[0] if best else None,
            "rows": rows}


def handle_reproduce(trials: int | None = None, workers: int = 1) -> dict:
    from dataclasses import replace

    cfg = reference_example_config()
    if trials is not None:
        cfg = replace(cfg, trials=int(trials))
    cfg = replace(cfg, workers=int(workers))
    table = run_experiment(cfg)
    setup = build_setup(cfg, cfg.horizons[0])
    row = dict(zip(table.columns, table.rows[0]))
    checks = []
    for name, target, tol in REFERENCE_TARGETS:
        computed = float(row[name])
        checks.append({
            "name": name,
            "computed": computed,
            "target": target,
            "tolerance": tol,
            "within": abs(computed - target) <= tol,
        })
    return {
        "table": {"meta": table.meta, "columns": table.columns, "rows": table.rows},
        "capacity_bits_per_use": setup.capacity.bits_per_use,
        "counts": list(setup.codebook.counts),
        "checks": checks,
    }
