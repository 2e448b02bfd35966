"""Control-theoretic reading of the feedback loop.

The per-cell recursion x' = a x - b y is a Markov-jump linear system: the
open loop multiplies by the scheduled a_k (so the codeword interval grows at
the scheme's rate share), the closed loop by acl_k = a_k - s_k * b_k * f for
feedback factor f.  At f = 1 the closed loop inverts the open loop exactly;
each table entry is mean-square contracting on the window

    f  in  ( a/(a+1),  a/(a-1) )

and the intersection over entries bounds the usable gain range.

What lives here:

* growth rates — log2 of the open-loop product per channel use, measured on
  sampled paths either from the schedule or from realized state products;
* exact conditional moment propagation (mean and second moment per cell,
  given a path) — the basis for power accounting and moment diagnostics;
* the mean-square stability verdict: the second moment evolves linearly
  along the chain, so its kernel-weighted update operator decides stability
  exactly by spectral radius (path sampling cannot — products may contract
  almost surely while the expected square still diverges);
* the cheap-control objective: average transmit power spent keeping the
  loop pinned, minimized by the rate-optimal gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import realize
from .errors import Diverged, GainUnstable, UnsupportedDistribution, ZeroInitialCoordinate
from .schemes import (
    SchemeParams,
    TrialTrace,
    _coerce_scale,
    build_schedule,
    closed_loop_table,
)

__all__ = [
    "growth_rate_from_schedule",
    "growth_rate_from_states",
    "GrowthReport",
    "measure_growth",
    "moment_recursion",
    "MssReport",
    "mss_verdict",
    "stability_window",
    "ergodic_log2_rate",
    "lifted_second_moment_rho",
    "cheap_control_objective",
    "gain_grid_scan",
]

_BLOWUP = 1e100


def growth_rate_from_schedule(params: SchemeParams, state_idx, gains, horizon: int) -> float:
    """Open-loop growth in bits per use along one path: sum of log2 a_k / (K+1)."""
    idx = None if state_idx is None else state_idx[: horizon + 1]
    sched = build_schedule(params, idx, gains[: horizon + 1])
    return float(np.sum(sched.log2_gain)) / (horizon + 1)


def growth_rate_from_states(trace: TrialTrace) -> float:
    """Same quantity measured from realized states: log2 prod |x_final / x0| / (K+1).

    Only defined when every initial coordinate is nonzero.  With the feedback
    off (gain_scale 0) each coordinate multiplies by exactly its scheduled
    a_k whatever the noise does, so this agrees with the schedule estimator;
    closed-loop runs measure the closed-loop rate instead (-C at the optimal
    gain).
    """
    if np.any(trace.x0 == 0.0):
        raise ZeroInitialCoordinate("state-product growth needs nonzero initial coordinates")
    ratio = np.abs(trace.x_final / trace.x0)
    if np.any(ratio == 0.0) or not np.all(np.isfinite(ratio)):
        raise Diverged("state product left the representable range")
    return float(np.sum(np.log2(ratio))) / (trace.horizon + 1)


@dataclass(frozen=True)
class GrowthReport:
    per_seed: np.ndarray
    mean: float
    target: float | None   # the scheme's rate share sum (None when unmeasured)
    horizon: int


def measure_growth(params: SchemeParams, horizon: int,
                   rngs: list[np.random.Generator]) -> GrowthReport:
    """Growth estimates over independently sampled paths, one per generator."""
    vals = np.empty(len(rngs))
    for i, rng in enumerate(rngs):
        real = realize(params.process, horizon + 1, rng)
        vals[i] = growth_rate_from_schedule(params, real.state_idx, real.gains, horizon)
    target = None
    if params.cell_log2_share is not None:
        target = float(np.sum(params.cell_log2_share))
    return GrowthReport(per_seed=vals, mean=float(vals.mean()), target=target, horizon=horizon)


def moment_recursion(params: SchemeParams, state_idx, gains, horizon: int, *,
                     x0_mean: np.ndarray, x0_m2: np.ndarray, gain_scale=1.0) -> dict:
    """Exact conditional first/second moments of every cell along one path.

    Row k of the returned arrays holds the moments before step k (row 0 is
    the initial condition; the input at step k has second moment
    m2[k, cell_k]).  The identities are

        mean' = acl * mean
        m2'   = acl^2 * m2 + b^2

    with acl = a - s*b*f; both are exact for the Gaussian loop, no sampling.
    """
    idx = None if state_idx is None else state_idx[: horizon + 1]
    sched = build_schedule(params, idx, gains[: horizon + 1])
    scale = _coerce_scale(params, gain_scale)
    if isinstance(scale, float):
        fb = sched.fb * scale
    else:
        fb = build_schedule(replace(params, fb_gain=params.fb_gain * scale),
                            idx, gains[: horizon + 1]).fb

    nc = params.ncells
    mean = np.empty((horizon + 2, nc))
    m2 = np.empty((horizon + 2, nc))
    mean[0] = np.asarray(x0_mean, dtype=float)
    m2[0] = np.asarray(x0_m2, dtype=float)
    cells = sched.cell.tolist()
    a_l = sched.gain.tolist()
    s_l = sched.s.tolist()
    b_l = fb.tolist()
    mu = mean[0].tolist()
    q2 = m2[0].tolist()
    for k in range(horizon + 1):
        c = cells[k]
        b = b_l[k]
        acl = a_l[k] - s_l[k] * b
        mu[c] = acl * mu[c]
        q2[c] = acl * acl * q2[c] + b * b
        mean[k + 1] = mu
        m2[k + 1] = q2
        if q2[c] > _BLOWUP:
            raise Diverged(f"second moment exceeded {_BLOWUP:g} at step {k}")
    return {"mean": mean, "m2": m2, "cells": np.asarray(cells)}


def stability_window(params: SchemeParams) -> tuple:
    """Intersection over live table entries of the per-entry stable gain windows.

    Entry a keeps |acl| < 1 exactly for factors in (a/(a+1), a/(a-1)).
    Entries with a == 1 carry zero feedback (dead states) and are inert at
    every factor, so they do not constrain the window.
    """
    if params.step_gain is None:
        raise UnsupportedDistribution("no finite gain table; probe continuous kinds by simulation")
    a = np.atleast_1d(np.asarray(params.step_gain, dtype=float)).ravel()
    a = a[a > 1.0]
    if a.size == 0:
        return 0.0, math.inf
    return float(np.max(a / (a + 1.0))), float(np.min(a / (a - 1.0)))


def ergodic_log2_rate(params: SchemeParams, gain_scale=1.0) -> float:
    """Path-ergodic growth rate of the closed-loop product, bits per use.

    sum over table entries of (pair weight) * log2 |acl|; negative means the
    state product contracts almost surely.  -inf when a reachable entry is
    deadbeat (acl = 0).
    """
    from .alloc import AllocProblem

    acl = np.atleast_1d(np.asarray(closed_loop_table(params, gain_scale), dtype=float))
    if params.kind in ("sk_awgn", "sk_constant"):
        v = abs(float(acl.ravel()[0]))
        return math.log2(v) if v > 0.0 else -math.inf
    prob = AllocProblem.from_process(params.process, params.budget, params.delay)
    if acl.ndim == 1:
        w = prob.weights
    else:
        w = prob.weights[:, None] * prob.reach
    live = w > 0.0
    mag = np.abs(acl)
    if np.any(mag[live] == 0.0):
        return -math.inf
    return float(np.sum(w[live] * np.log2(mag[live])))


def lifted_second_moment_rho(params: SchemeParams, gain_scale=1.0) -> float:
    """Spectral radius of the exact second-moment update operator.

    Between consecutive updates of a cell its selector index moves by the
    kernel R (one chain step for current/one-back selectors, d steps for the
    interleaved scheme), and the updated cell multiplies its square by
    acl(j, l)^2.  E[x_c^2 ; index] therefore evolves by the per-cell block

        B_c[l, j] = R[j, l] * (acl[j, l]^2   if j == c else 1)

    and second moments stay bounded under additive noise iff every live
    block has spectral radius < 1.  Cells whose whole table row is inert
    (a == 1: zero power or dead gain) never move; they are dropped, and an
    all-inert system reports 0.  Continuous iid kinds return a fixed-seed
    sample mean of acl(S)^2, an estimate of the same criterion.
    """
    scale = _coerce_scale(params, gain_scale)
    kind = params.kind
    if kind in ("sk_awgn", "sk_constant"):
        if float(params.step_gain) == 1.0:
            return 0.0  # zero budget: the loop never moves
        return float(closed_loop_table(params, gain_scale)) ** 2
    if params.budget == 0.0:
        return 0.0  # no feedback anywhere: every coordinate is frozen
    if params.step_gain is None:  # continuous iid: Monte Carlo estimate
        from .channel import _sample_continuous

        s = _sample_continuous(params.process, 200_000, np.random.default_rng(0xF5C1AB))
        a = np.sqrt(1.0 + s * s * params.budget)
        acl = a - s * (s * params.budget / a) * scale
        return float(np.mean(acl * acl))

    table = np.atleast_1d(np.asarray(closed_loop_table(params, gain_scale), dtype=float))
    if kind == "iid_scalar":  # one cell, updated on every draw
        return float(params.process.pmf @ (table ** 2))

    from .alloc import AllocProblem

    R = AllocProblem.from_process(params.process, params.budget, max(params.delay, 1)).reach
    m = R.shape[0]
    if table.ndim == 1:  # current-state selector: factor doesn't see the next index
        a_tab = np.tile(np.asarray(params.step_gain, dtype=float)[:, None], (1, m))
        A2 = np.tile((table ** 2)[:, None], (1, m))
    else:
        a_tab = np.asarray(params.step_gain, dtype=float)
        A2 = table ** 2
    rho = 0.0
    for c in np.flatnonzero(~np.all(a_tab == 1.0, axis=1)):
        M = np.ones((m, m))
        M[c] = A2[c]
        rho = max(rho, float(np.max(np.abs(np.linalg.eigvals((R * M).T)))))
    return rho


@dataclass(frozen=True)
class MssReport:
    stable: bool
    spectral_radius: float               # of the second-moment operator; < 1 iff stable
    worst_case_contracting: bool | None  # max |acl| < 1 over live entries (None: no table)
    max_abs_closed_loop: float | None
    ergodic_rate_bits: float | None      # < 0: products contract almost surely
    mean_decay: float                    # max_c |mean_K| / max_c |mean_0|
    m2_tail_ratio: float                 # mean(final tenth) / mean(middle fifth) of total m2
    diverged: bool
    horizon: int
    n_paths: int


def mss_verdict(params: SchemeParams, gain_scale=1.0, *, horizon: int = 400,
                n_paths: int = 64, rng: np.random.Generator | None = None) -> MssReport:
    """Stability verdict for the closed loop at the given feedback factor.

    The verdict itself is the exact spectral-radius test from
    :func:`lifted_second_moment_rho` (estimated from a fixed-seed sample for
    continuous fading).  The rest of the report is diagnostics: worst-case
    entry contraction, the ergodic growth rate of the state products, and a
    short moment simulation over sampled paths.  Those can disagree with the
    verdict in the classic way — near the stability edge the paths contract
    almost surely while the expected square diverges — which is exactly why
    they don't decide it.
    """
    rng = rng or np.random.default_rng(0)
    x0 = np.sqrt(params.cell_power)
    rho = lifted_second_moment_rho(params, gain_scale)
    acl_max = None
    worst_ok = None
    erg = None
    try:
        table = np.atleast_1d(np.asarray(closed_loop_table(params, gain_scale), dtype=float))
        gains_tab = np.atleast_1d(np.asarray(params.step_gain, dtype=float))
        live = gains_tab > 1.0  # entries with feedback; a == 1 entries are inert
        acl_max = float(np.abs(table[live]).max()) if live.any() else 0.0
        worst_ok = acl_max < 1.0
        erg = ergodic_log2_rate(params, gain_scale)
    except UnsupportedDistribution:
        pass

    total_m2 = np.zeros(horizon + 2)
    mean_hi = np.zeros(horizon + 2)
    diverged = False
    for _ in range(n_paths):
        real = realize(params.process, horizon + 1, rng)
        try:
            mom = moment_recursion(params, real.state_idx, real.gains, horizon,
                                   x0_mean=x0, x0_m2=params.cell_power.astype(float),
                                   gain_scale=gain_scale)
        except Diverged:
            diverged = True
            break
        total_m2 += mom["m2"].sum(axis=1)
        mean_hi = np.maximum(mean_hi, np.abs(mom["mean"]).max(axis=1))

    if diverged or not np.all(np.isfinite(total_m2)):
        return MssReport(stable=rho < 1.0, spectral_radius=rho,
                         worst_case_contracting=worst_ok,
                         max_abs_closed_loop=acl_max, ergodic_rate_bits=erg,
                         mean_decay=math.inf, m2_tail_ratio=math.inf,
                         diverged=True, horizon=horizon, n_paths=n_paths)

    total_m2 /= n_paths
    decay = float(mean_hi[-1] / mean_hi[0]) if mean_hi[0] > 0 else 0.0
    n = horizon + 2
    tail = total_m2[-max(2, n // 10):]
    middle = total_m2[int(0.4 * n): max(int(0.4 * n) + 2, int(0.6 * n))]
    ratio = float(tail.mean() / max(middle.mean(), np.finfo(float).tiny))
    return MssReport(stable=rho < 1.0, spectral_radius=rho,
                     worst_case_contracting=worst_ok,
                     max_abs_closed_loop=acl_max, ergodic_rate_bits=erg,
                     mean_decay=decay, m2_tail_ratio=ratio,
                     diverged=False, horizon=horizon, n_paths=n_paths)


def cheap_control_objective(params: SchemeParams, gain_scale=1.0, *, horizon: int = 200,
                            n_paths: int = 256, rng: np.random.Generator | None = None,
                            require_stable: bool = True) -> dict:
    """Average transmit power that keeps the loop pinned at its target moments.

    Starts every cell at full amplitude (m2 = cell power) and accumulates the
    exact conditional input power (1/(K+1)) sum_k m2[k, cell_k] per sampled
    path.  At the rate-optimal gain the fixed point makes this the budget
    exactly; any other stable gain spends more.
    """
    rng = rng or np.random.default_rng(0)
    if require_stable:
        verdict = mss_verdict(params, gain_scale, horizon=min(horizon, 400),
                              n_paths=32, rng=np.random.default_rng(12345))
        if not verdict.stable:
            raise GainUnstable(f"feedback factor {gain_scale!r} is not mean-square stable")
    x0 = np.sqrt(params.cell_power)
    vals = np.empty(n_paths)
    for i in range(n_paths):
        real = realize(params.process, horizon + 1, rng)
        mom = moment_recursion(params, real.state_idx, real.gains, horizon,
                               x0_mean=x0, x0_m2=params.cell_power.astype(float),
                               gain_scale=gain_scale)
        steps = np.arange(horizon + 1)
        vals[i] = float(mom["m2"][steps, mom["cells"]].sum()) / (horizon + 1)
    se = float(vals.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return {"value": float(vals.mean()), "stderr": se, "per_path": vals,
            "budget": params.budget, "n": n_paths}


def gain_grid_scan(params: SchemeParams, factors, *, horizon: int = 200,
                   n_paths: int = 256, master_seed: int = 0) -> list:
    """Cheap-control objective across feedback factors, common random paths.

    Paths are re-drawn from the same seed for every factor, so differences
    between rows are paired; unstable factors come back flagged instead of
    raising.  Rows: {factor, stable, value, stderr, per_path}.
    """
    rows = []
    for f in factors:
        verdict = mss_verdict(params, f, horizon=min(horizon, 400), n_paths=32,
                              rng=np.random.default_rng(12345))
        if not verdict.stable:
            rows.append({"factor": float(f), "stable": False, "value": math.inf,
                         "stderr": math.nan, "per_path": None})
            continue
        res = cheap_control_objective(
            params, f, horizon=horizon, n_paths=n_paths,
            rng=np.random.default_rng(np.random.SeedSequence((master_seed, 0xC057))),
            require_stable=False)
        rows.append({"factor": float(f), "stable": True, "value": res["value"],
                     "stderr": res["stderr"], "per_path": res["per_path"]})
    return rows
