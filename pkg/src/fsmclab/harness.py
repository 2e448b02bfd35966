"""Experiment harness: TOML configs, seeded batch runs, result tables.

A config names a fading process, a CSI delay, the code parameters, and a run
recipe.  Runs are deterministic: trial t at horizon K draws from
``default_rng(SeedSequence((seed, K, t)))`` with a fixed draw order (message,
then gains, then noises), and reductions use fixed-order compensated sums, so
results are bit-identical for any worker count or chunking.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

try:
    import tomllib  # python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .alloc import AllocProblem, PowerAllocation, solve_allocation
from .analysis import wilson_halfwidth
from .capacity import CapacityReport, capacity_continuous_iid, capacity_finite
from .channel import (
    CONTINUOUS_FAMILIES, ConstantGain, ContinuousIid, FadingProcess, FiniteIid,
    FiniteMarkov, UnitGain, is_finite, realize,
)
from .codec import Codebook, batch_decode, batch_matched_bits, build_codebook, encode, random_message
from .errors import ConfigError, FsmclabError, IoFailure
from .markov import MarkovChain, validate_chain
from .schemes import KINDS, SchemeParams, make_params, run_trials_batch

__all__ = [
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "config_dict",
    "config_digest",
    "validate_config",
    "derive_rng",
    "Setup",
    "build_setup",
    "run_experiment",
    "ResultTable",
    "load_table",
    "REFERENCE_EXAMPLE_TOML",
    "reference_example_config",
]

ALL_METRICS = (
    "capacity_bits_per_use",
    "block_capacity_bits",
    "rate_bits_per_use",
    "width_bits",
    "errors",
    "pe_mc",
    "pe_stderr",
    "mean_correct_bits",
    "mean_power_per_use",
    "residual_max",
)

_SHARE_SAMPLES = 200_000  # Monte Carlo size for continuous-fading rate shares


@dataclass(frozen=True)
class ExperimentConfig:
    process: FadingProcess
    delay: int
    budget: float
    epsilon: float
    horizons: tuple
    scheme: str
    trials: int
    seed: int
    workers: int = 1
    unbiased: bool = False
    metrics: tuple | None = None   # None: keep every column
    out_path: str | None = None
    out_format: str | None = None  # "csv" | "json"; None: infer from path


def _default_delay(scheme: str) -> int:
    return {"sk_awgn": 0, "sk_constant": 0, "tcsi_mux": 0,
            "iid_scalar": 1, "dtcsi_mux": 1, "multi_delay": 1}.get(scheme, 0)


def _process_from_section(sec: dict) -> FadingProcess:
    kind = sec.get("kind")
    if kind in ("unit", "awgn"):
        return UnitGain()
    if kind == "constant":
        return ConstantGain(gain=float(sec.get("gain", 1.0)))
    if kind == "finite_iid":
        if "gains" not in sec or "pmf" not in sec:
            raise ConfigError("finite_iid fading needs 'gains' and 'pmf'")
        return FiniteIid(gains=np.asarray(sec["gains"], dtype=float),
                         pmf=np.asarray(sec["pmf"], dtype=float))
    if kind in ("finite_markov", "markov"):
        if "gains" not in sec or "transition" not in sec:
            raise ConfigError("finite_markov fading needs 'gains' and 'transition'")
        chain = MarkovChain(gains=np.asarray(sec["gains"], dtype=float),
                            transition=np.asarray(sec["transition"], dtype=float))
        return FiniteMarkov(chain=chain)
    if kind == "continuous_iid":
        fam = sec.get("family")
        if fam not in CONTINUOUS_FAMILIES:
            raise ConfigError(f"continuous_iid fading needs family in {CONTINUOUS_FAMILIES}")
        params = sec.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("fading.params must be a table of name = value pairs")
        return ContinuousIid(family=fam, params=tuple(sorted(params.items())))
    raise ConfigError(f"unknown fading kind {kind!r}")


def _process_to_section(process: FadingProcess) -> dict:
    if isinstance(process, UnitGain):
        return {"kind": "unit"}
    if isinstance(process, ConstantGain):
        return {"kind": "constant", "gain": float(process.gain)}
    if isinstance(process, FiniteIid):
        return {"kind": "finite_iid", "gains": list(map(float, process.gains)),
                "pmf": list(map(float, process.pmf))}
    if isinstance(process, FiniteMarkov):
        return {"kind": "finite_markov",
                "gains": list(map(float, process.chain.gains)),
                "transition": [list(map(float, row)) for row in process.chain.transition]}
    return {"kind": "continuous_iid", "family": process.family,
            "params": {k: float(v) for k, v in process.params}}


def parse_config(data: dict) -> ExperimentConfig:
    """Typed config from a parsed TOML document (see REFERENCE_EXAMPLE_TOML)."""
    if "fading" not in data:
        raise ConfigError("config needs a [fading] section")
    process = _process_from_section(data["fading"])

    run = data.get("run", {})
    scheme = run.get("scheme")
    if scheme not in KINDS:
        raise ConfigError(f"run.scheme must be one of {KINDS}, got {scheme!r}")
    delay = int(data.get("csi", {}).get("delay", _default_delay(scheme)))
    if delay < 0:
        raise ConfigError(f"csi.delay must be >= 0, got {delay}")

    code = data.get("code", {})
    if "power" not in code:
        raise ConfigError("config needs code.power (the average power budget)")
    budget = float(code["power"])
    if budget < 0 or not math.isfinite(budget):
        raise ConfigError(f"code.power must be finite and >= 0, got {budget}")
    epsilon = float(code.get("epsilon", 0.2))
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError(f"code.epsilon must be in [0, 1), got {epsilon}")
    if "horizons" in code:
        horizons = tuple(int(k) for k in code["horizons"])
    elif "horizon" in code:
        horizons = (int(code["horizon"]),)
    else:
        raise ConfigError("config needs code.horizons (a list of K values)")
    if not horizons or any(k < 0 for k in horizons):
        raise ConfigError(f"horizons must be nonnegative, got {list(horizons)}")

    trials = int(run.get("trials", 1000))
    if trials <= 0:
        raise ConfigError(f"run.trials must be positive, got {trials}")
    seed = int(run.get("seed", 0))
    if seed < 0:
        raise ConfigError(f"run.seed must be >= 0, got {seed}")
    workers = int(run.get("workers", 1))
    if workers <= 0:
        raise ConfigError(f"run.workers must be positive, got {workers}")
    metrics = run.get("metrics")
    if metrics is not None:
        metrics = tuple(metrics)
        unknown = [m for m in metrics if m not in ALL_METRICS]
        if unknown:
            raise ConfigError(f"unknown metrics {unknown}; choose from {list(ALL_METRICS)}")

    out = data.get("output", {})
    fmt = out.get("format")
    if fmt not in (None, "csv", "json"):
        raise ConfigError(f"output.format must be csv or json, got {fmt!r}")

    return ExperimentConfig(
        process=process, delay=delay, budget=budget, epsilon=epsilon,
        horizons=horizons, scheme=scheme, trials=trials, seed=seed,
        workers=workers, unbiased=bool(run.get("unbiased", False)),
        metrics=metrics, out_path=out.get("path"), out_format=fmt)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "rb") as fp:
            data = tomllib.load(fp)
    except OSError as e:
        raise IoFailure(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config {path} is not valid TOML: {e}") from e
    return parse_config(data)


def config_dict(cfg: ExperimentConfig) -> dict:
    """Canonical nested form of the experiment identity.

    Excludes workers, metric selection and output routing: those change how
    results are computed or written, never what they are.
    """
    return {
        "fading": _process_to_section(cfg.process),
        "csi": {"delay": cfg.delay},
        "code": {"power": cfg.budget, "epsilon": cfg.epsilon,
                 "horizons": list(cfg.horizons)},
        "run": {"scheme": cfg.scheme, "trials": cfg.trials, "seed": cfg.seed,
                "unbiased": cfg.unbiased},
    }


def config_digest(cfg: ExperimentConfig) -> str:
    text = json.dumps(config_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def derive_rng(master_seed: int, horizon: int, trial: int) -> np.random.Generator:
    """The one generator for trial ``trial`` at horizon ``horizon``."""
    return np.random.default_rng(np.random.SeedSequence((master_seed, horizon, trial)))


def _aux_rng(master_seed: int, tag: int) -> np.random.Generator:
    # setup-level randomness (rate-share estimation), disjoint from trial streams
    return np.random.default_rng(np.random.SeedSequence((master_seed, 0x5E70B, tag)))


@dataclass(frozen=True)
class Setup:
    process: FadingProcess
    params: SchemeParams
    allocation: PowerAllocation | None
    capacity: CapacityReport
    codebook: Codebook


def build_setup(cfg: ExperimentConfig, horizon: int) -> Setup:
    """Solve the allocation, size the codebook, and assemble scheme tables."""
    process = cfg.process
    state_kinds = ("tcsi_mux", "dtcsi_mux", "multi_delay")
    if is_finite(process):
        prob = AllocProblem.from_process(process, cfg.budget, cfg.delay)
        alloc = solve_allocation(prob)
        cap = capacity_finite(prob, alloc)
        params = make_params(cfg.scheme, process, cfg.budget, delay=cfg.delay,
                             powers=alloc.powers if cfg.scheme in state_kinds else None)
    else:
        alloc = None
        cap = capacity_continuous_iid(process, cfg.budget, _SHARE_SAMPLES,
                                      _aux_rng(cfg.seed, 0))
        params = make_params(cfg.scheme, process, cfg.budget, delay=cfg.delay,
                             iid_log2_share=cap.bits_per_use)
    codebook = build_codebook(params.cell_log2_share, params.cell_power,
                              horizon, cfg.epsilon)
    return Setup(process=process, params=params, allocation=alloc,
                 capacity=cap, codebook=codebook)


def validate_config(cfg: ExperimentConfig) -> dict:
    """Collect every problem the config has; never raises for bad physics.

    Checks, in order: chain ergodicity and gain distinctness, scheme/delay
    compatibility, allocation solvability, and codebook sizes at every
    horizon.  Returns {"ok", "problems", "summary"}.
    """
    problems = []
    summary = {}
    if isinstance(cfg.process, FiniteMarkov):
        report = validate_chain(cfg.process.chain)
        problems += [msg for _, msg in report.problems]
    if not problems:
        for K in cfg.horizons:
            try:
                setup = build_setup(cfg, K)
            except FsmclabError as e:
                problems.append(f"horizon {K}: {e}")
                continue
            summary[K] = {
                "capacity_bits_per_use": setup.capacity.bits_per_use,
                "counts": list(setup.codebook.counts),
                "width_bits": setup.codebook.width_bits,
                "rate_bits_per_use": setup.codebook.rate_bits_per_use(),
            }
    return {"ok": not problems, "problems": problems, "summary": summary}


def _ensure_valid(cfg: ExperimentConfig):
    if isinstance(cfg.process, FiniteMarkov):
        validate_chain(cfg.process.chain).raise_if_invalid()


def _run_chunk(cfg: ExperimentConfig, horizon: int, lo: int, hi: int) -> dict:
    """Trials lo..hi-1 at one horizon; returns per-trial arrays in trial order."""
    setup = build_setup(cfg, horizon)
    params, cb = setup.params, setup.codebook
    T = hi - lo
    n = horizon + 1

    sent = np.empty((T, cb.ndim), dtype=np.int64)
    x0 = np.empty((T, params.ncells))
    gains = np.empty((T, n))
    noises = np.empty((T, n))
    idx = np.empty((T, n), dtype=np.int64) if is_finite(cfg.process) else None
    for i, t in enumerate(range(lo, hi)):
        rng = derive_rng(cfg.seed, horizon, t)
        msg = random_message(cb, rng)
        real = realize(cfg.process, n, rng)
        sent[i] = msg
        x0[i] = encode(cb, msg)
        gains[i] = real.gains
        noises[i] = real.noises
        if idx is not None:
            idx[i] = real.state_idx

    batch = run_trials_batch(params, idx, gains, noises, x0, horizon,
                             track_residual=True)
    bias = batch.estimate_bias() if cfg.unbiased else None
    decoded = batch_decode(cb, batch.estimate, bias)
    return {
        "errors": np.any(decoded != sent, axis=1),
        "matched": batch_matched_bits(cb, sent, decoded),
        "power": batch.power_sum,
        "residual": batch.residual_max,
    }


@dataclass
class ResultTable:
    columns: list
    rows: list
    meta: dict

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [row[j] for row in self.rows]

    def to_csv_text(self) -> str:
        lines = [f"# {k}: {v}" for k, v in self.meta.items()]
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
        return "\n".join(lines) + "\n"

    def to_json_text(self) -> str:
        return json.dumps({"meta": self.meta, "columns": self.columns,
                           "rows": self.rows}, indent=2) + "\n"

    def persist(self, path: str, fmt: str | None = None) -> str:
        fmt = fmt or ("json" if path.endswith(".json") else "csv")
        text = self.to_json_text() if fmt == "json" else self.to_csv_text()
        try:
            with open(path, "w") as fp:
                fp.write(text)
        except OSError as e:
            raise IoFailure(f"cannot write {path}: {e}") from e
        return os.path.abspath(path)

    @classmethod
    def from_csv_text(cls, text: str) -> "ResultTable":
        meta, columns, rows = {}, None, []
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
            elif columns is None:
                columns = line.split(",")
            else:
                rows.append([_parse_cell(c) for c in line.split(",")])
        if columns is None:
            raise IoFailure("CSV has no header row")
        return cls(columns=columns, rows=rows, meta=meta)

    @classmethod
    def from_json_text(cls, text: str) -> "ResultTable":
        data = json.loads(text)
        return cls(columns=list(data["columns"]), rows=[list(r) for r in data["rows"]],
                   meta=dict(data["meta"]))


def _parse_cell(cell: str):
    try:
        return int(cell)
    except ValueError:
        try:
            return float(cell)
        except ValueError:
            return cell


def load_table(path: str) -> ResultTable:
    try:
        with open(path) as fp:
            text = fp.read()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if path.endswith(".json") or text.lstrip().startswith("{"):
        return ResultTable.from_json_text(text)
    return ResultTable.from_csv_text(text)


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    """One row per horizon; identical output for any worker count."""
    _ensure_valid(cfg)
    rows = []
    for K in cfg.horizons:
        setup = build_setup(cfg, K)
        chunk_size = max(1, -(-cfg.trials // cfg.workers))
        spans = [(lo, min(lo + chunk_size, cfg.trials))
                 for lo in range(0, cfg.trials, chunk_size)]
        if cfg.workers == 1 or len(spans) == 1:
            parts = [_run_chunk(cfg, K, lo, hi) for lo, hi in spans]
        else:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                parts = list(pool.map(_run_chunk_star, [(cfg, K, lo, hi) for lo, hi in spans]))

        errors = int(np.concatenate([p["errors"] for p in parts]).sum())
        matched = np.concatenate([p["matched"] for p in parts])
        power = np.concatenate([p["power"] for p in parts])
        residual = np.concatenate([p["residual"] for p in parts])
        t = cfg.trials
        rows.append([
            K, t,
            setup.capacity.bits_per_use,
            setup.capacity.block_bits(K),
            setup.codebook.rate_bits_per_use(),
            setup.codebook.width_bits,
            errors,
            errors / t,
            wilson_halfwidth(errors, t),
            math.fsum(matched.tolist()) / t,
            math.fsum(power.tolist()) / (t * (K + 1)),
            float(residual.max()),
        ])

    columns = ["horizon", "trials", *ALL_METRICS]
    if cfg.metrics is not None:
        keep = ["horizon", "trials", *[m for m in ALL_METRICS if m in cfg.metrics]]
        keep_idx = [columns.index(c) for c in keep]
        rows = [[row[j] for j in keep_idx] for row in rows]
        columns = keep
    meta = {"digest": config_digest(cfg), "scheme": cfg.scheme, "seed": cfg.seed,
            "trials": cfg.trials, "format_version": 1}
    return ResultTable(columns=columns, rows=rows, meta=meta)


def _run_chunk_star(args):
    return _run_chunk(*args)


REFERENCE_EXAMPLE_TOML = """\
# Worked two-state example: one-step-delayed transmitter CSI, average power 3.
[fading]
kind = "finite_markov"
gains = [2.0, 1.0]
transition = [[0.65, 0.35], [0.62, 0.38]]

[csi]
delay = 1

[code]
power = 3.0
epsilon = 0.2
horizons = [24]

[run]
scheme = "dtcsi_mux"
trials = 2000
seed = 7
workers = 1
"""


# Targets recorded alongside the bundled example, as (result column, value,
# tolerance).  reproduce reports each check honestly; see README for the two
# that the toolkit's own numbers land outside of.
REFERENCE_TARGETS = (
    ("block_capacity_bits", 35.8, 0.3),
    ("mean_correct_bits", 34.9, 1.0),
)


def reference_example_config() -> ExperimentConfig:
    return parse_config(tomllib.loads(REFERENCE_EXAMPLE_TOML))
