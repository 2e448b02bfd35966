"""Linear feedback transmission schemes, one engine for every variant.

Every scheme here keeps a vector of codeword coordinates ("cells") and, at
each channel use, transmits the current value of one cell chosen by the
visible channel state:

    u_k = x_k[c_k],   y_k = S_k * u_k + N_k,
    x'[c_k] = a_k * x[c_k] - b_k * y_k     (other cells unchanged)

with per-step factors (c_k, a_k, b_k) read off a schedule built from the
gain path.  The six kinds differ only in their schedules:

  sk_awgn      single cell, constant gain 1, a = sqrt(1+P)
  sk_constant  single cell, constant gain s, a = sqrt(1+s^2 P)
  tcsi_mux     cell = current state, a/b tables indexed by it (delay 0)
  dtcsi_mux    cell = previous state, tables indexed by (prev, current)
  iid_scalar   single cell, a = sqrt(1+S_k^2 P) from the current draw
  multi_delay  cell = (state d steps back, k mod d); d interleaved phases

At the optimal feedback gain b = s*g/a the closed loop contracts each cell
by exactly 1/a per visit.  The receiver tracks, per cell, the contraction
phi (kept as log2) and the running estimate, which satisfies

    estimate[c] = x0[c] - 2^{log2phi[c]} * x[c]        (exactly, per step)

for ANY feedback gain — the identity is algebraic, so its floating-point
residual is a pure numerical health check (`residual_max`).

Negative-time states fall back to index 0 (finite processes), matching the
accessor conventions in :mod:`fsmclab.channel`; the first transmission of
every cell is its codeword coordinate untouched.

Indices are receiver time: step k consumes the pair (S_k, y_k).  The real
transmitter state trails the shadow state by ``lag = max(delay, 1)`` steps,
because the encoder folds (S_k, y_k) into the coordinate it transmits at
time k + lag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .alloc import AllocProblem, solve_allocation
from .capacity import capacity_finite
from .channel import (
    ConstantGain,
    ContinuousIid,
    FadingProcess,
    FiniteIid,
    FiniteMarkov,
    Realization,
    UnitGain,
    gain_values,
    is_finite,
    n_states,
    state_index_at,
    gain_at,
)
from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    NonDiagonalClosedLoop,
    UnsupportedDistribution,
    WrongDelay,
)

__all__ = [
    "KINDS",
    "SchemeParams",
    "make_params",
    "Schedule",
    "build_schedule",
    "TrialTrace",
    "run_trial",
    "BatchResult",
    "run_trials_batch",
    "closed_loop_check",
    "closed_loop_table",
]

KINDS = ("sk_awgn", "sk_constant", "tcsi_mux", "iid_scalar", "dtcsi_mux", "multi_delay")

_SCALAR_KINDS = ("sk_awgn", "sk_constant")


@dataclass(frozen=True)
class SchemeParams:
    kind: str
    delay: int                 # transmitter CSI delay the schedule respects
    lag: int                   # max(delay, 1): shadow-to-real state offset
    ncells: int
    budget: float
    process: FadingProcess
    powers: np.ndarray         # solved per-state powers (scalar kinds: [budget])
    state_gains: np.ndarray | None
    step_gain: np.ndarray | None      # a table: (m,) for tcsi/iid-finite, (m,m) for delayed kinds
    fb_gain: np.ndarray | None        # b table, same shape
    log2_step_gain: np.ndarray | None
    cell_power: np.ndarray            # per-cell amplitude^2 for codebooks
    cell_log2_share: np.ndarray | None  # per-cell rate share (None until measured, continuous iid)
    phases: int                # multi_delay: number of interleaved phases (= delay); else 1


def _scalar_coeffs(gain: float, budget: float):
    a = math.sqrt(1.0 + gain * gain * budget)
    return a, gain * budget / a


def make_params(kind: str, process: FadingProcess, budget: float, *,
                delay: int | None = None,
                powers: np.ndarray | None = None,
                iid_log2_share: float | None = None) -> SchemeParams:
    """Assemble tables for one scheme.

    Finite kinds solve the power allocation for their delay unless given
    ``powers`` explicitly.  Continuous iid needs ``iid_log2_share`` (a
    measured rate share) before codebooks can be sized; traces run without it.
    """
    if kind not in KINDS:
        raise UnsupportedDistribution(f"unknown scheme kind {kind!r}")
    if budget < 0:
        raise IndexOutOfRange(f"power budget must be >= 0, got {budget}")

    if kind in _SCALAR_KINDS:
        if delay not in (None, 0):
            raise WrongDelay(f"{kind} ignores channel state; delay must be 0")
        if kind == "sk_awgn":
            if not isinstance(process, UnitGain):
                raise UnsupportedDistribution("sk_awgn runs on the unit-gain channel")
            s = 1.0
        else:
            if not isinstance(process, ConstantGain):
                raise UnsupportedDistribution("sk_constant runs on a constant-gain channel")
            s = float(process.gain)
        a, b = _scalar_coeffs(s, budget)
        return SchemeParams(
            kind=kind, delay=0, lag=1, ncells=1, budget=float(budget), process=process,
            powers=np.array([float(budget)]), state_gains=np.array([s]),
            step_gain=np.array(a), fb_gain=np.array(b), log2_step_gain=np.array(math.log2(a)),
            cell_power=np.array([float(budget)]),
            cell_log2_share=np.array([math.log2(a)]), phases=1)

    if kind == "iid_scalar":
        if delay not in (None, 1):
            raise WrongDelay("iid_scalar is the one-step-delayed scheme; delay must be 1")
        if isinstance(process, (UnitGain, ConstantGain, FiniteMarkov)):
            raise UnsupportedDistribution("iid_scalar needs an iid gain process")
        if isinstance(process, FiniteIid):
            s = process.gains
            a = np.sqrt(1.0 + s * s * budget)
            share = float(process.pmf @ np.log2(a))
            return SchemeParams(
                kind=kind, delay=1, lag=1, ncells=1, budget=float(budget), process=process,
                powers=np.full(s.shape, float(budget)), state_gains=s,
                step_gain=a, fb_gain=s * budget / a, log2_step_gain=np.log2(a),
                cell_power=np.array([float(budget)]),
                cell_log2_share=np.array([share]), phases=1)
        share = None if iid_log2_share is None else np.array([float(iid_log2_share)])
        return SchemeParams(
            kind=kind, delay=1, lag=1, ncells=1, budget=float(budget), process=process,
            powers=np.array([float(budget)]), state_gains=None,
            step_gain=None, fb_gain=None, log2_step_gain=None,
            cell_power=np.array([float(budget)]),
            cell_log2_share=share, phases=1)

    # state-indexed kinds need a finite process
    if not is_finite(process):
        raise UnsupportedDistribution(f"{kind} needs a finite-state process")
    m = n_states(process)
    s = gain_values(process)

    if kind == "tcsi_mux":
        d = 0
        if delay not in (None, 0):
            raise WrongDelay("tcsi_mux uses current-state knowledge; delay must be 0")
    elif kind == "dtcsi_mux":
        d = 1
        if delay not in (None, 1):
            raise WrongDelay("dtcsi_mux uses one-step-delayed knowledge; delay must be 1")
    else:  # multi_delay; iid processes see the same problem at every positive delay
        d = 1 if delay is None else int(delay)
        if d < 1:
            raise WrongDelay("multi_delay needs delay >= 1")

    prob = AllocProblem.from_process(process, budget, d)
    if powers is None:
        powers = solve_allocation(prob).powers
    powers = np.asarray(powers, dtype=float)
    if powers.shape != (m,):
        raise DimensionMismatch(f"powers shape {powers.shape}, expected ({m},)")
    report = capacity_finite(prob, alloc=_FixedAlloc(powers))

    if kind == "tcsi_mux":
        a = np.sqrt(1.0 + s * s * powers)       # a[j] = sqrt(1 + s_j^2 g_j)
        b = s * powers / a
        cell_share = report.log2_rate_share
        cell_power = powers.copy()
        return SchemeParams(
            kind=kind, delay=0, lag=1, ncells=m, budget=float(budget), process=process,
            powers=powers, state_gains=s, step_gain=a, fb_gain=b, log2_step_gain=np.log2(a),
            cell_power=cell_power, cell_log2_share=cell_share, phases=1)

    # delayed table: a[j, l] = sqrt(1 + s_l^2 g_j) — power chosen on the old
    # state j, gain applied by the state l actually in force
    a = np.sqrt(1.0 + s[None, :] ** 2 * powers[:, None])
    b = s[None, :] * powers[:, None] / a

    if kind == "dtcsi_mux":
        return SchemeParams(
            kind=kind, delay=1, lag=1, ncells=m, budget=float(budget), process=process,
            powers=powers, state_gains=s, step_gain=a, fb_gain=b, log2_step_gain=np.log2(a),
            cell_power=powers.copy(), cell_log2_share=report.log2_rate_share, phases=1)

    # multi_delay: d interleaved phases, cells laid out subsystem-major
    cell_power = np.repeat(powers, d)
    cell_share = np.repeat(report.log2_rate_share / d, d)
    return SchemeParams(
        kind="multi_delay", delay=d, lag=d, ncells=m * d, budget=float(budget), process=process,
        powers=powers, state_gains=s, step_gain=a, fb_gain=b, log2_step_gain=np.log2(a),
        cell_power=cell_power, cell_log2_share=cell_share, phases=d)


class _FixedAlloc:
    """Adapter handing pre-solved powers to capacity_finite."""

    def __init__(self, powers):
        self.powers = powers


@dataclass(frozen=True)
class Schedule:
    """Per-step receiver-side factors; arrays share a leading batch shape."""

    cell: np.ndarray
    gain: np.ndarray        # a_k
    log2_gain: np.ndarray
    fb: np.ndarray          # b_k at the optimal gain (callers scale it)
    s: np.ndarray           # channel gain S_k (multiplies the transmitted value)


def _shift_back(arr: np.ndarray, t: int, fill) -> np.ndarray:
    """arr delayed by t along the last axis, front-filled with the convention value."""
    if t == 0:
        return arr
    out = np.empty_like(arr)
    out[..., :t] = fill
    out[..., t:] = arr[..., :-t]
    return out


def build_schedule(params: SchemeParams, state_idx: np.ndarray | None,
                   gains: np.ndarray) -> Schedule:
    """Vectorized schedule construction from a gain path (or batch of paths)."""
    kind = params.kind
    n = gains.shape[-1]
    if kind in _SCALAR_KINDS:
        shape = gains.shape
        a = float(params.step_gain)
        b = float(params.fb_gain)
        return Schedule(cell=np.zeros(shape, dtype=np.int64),
                        gain=np.full(shape, a),
                        log2_gain=np.full(shape, float(params.log2_step_gain)),
                        fb=np.full(shape, b),
                        s=np.full(shape, float(params.state_gains[0])))
    if kind == "iid_scalar":
        if params.step_gain is not None:  # finite gain set: table lookup
            idx = state_idx
            a = params.step_gain[idx]
            return Schedule(cell=np.zeros(gains.shape, dtype=np.int64), gain=a,
                            log2_gain=params.log2_step_gain[idx],
                            fb=params.fb_gain[idx], s=gains)
        a = np.sqrt(1.0 + gains * gains * params.budget)
        return Schedule(cell=np.zeros(gains.shape, dtype=np.int64), gain=a,
                        log2_gain=np.log2(a), fb=gains * params.budget / a, s=gains)
    if state_idx is None:
        raise UnsupportedDistribution(f"{kind} needs state indices")
    if kind == "tcsi_mux":
        return Schedule(cell=state_idx.astype(np.int64),
                        gain=params.step_gain[state_idx],
                        log2_gain=params.log2_step_gain[state_idx],
                        fb=params.fb_gain[state_idx], s=gains)
    if kind == "dtcsi_mux":
        j = _shift_back(state_idx, 1, 0)
        return Schedule(cell=j.astype(np.int64),
                        gain=params.step_gain[j, state_idx],
                        log2_gain=params.log2_step_gain[j, state_idx],
                        fb=params.fb_gain[j, state_idx], s=gains)
    # multi_delay
    d = params.delay
    j = _shift_back(state_idx, d, 0)
    phase = np.broadcast_to(np.arange(n, dtype=np.int64) % d, state_idx.shape)
    return Schedule(cell=j.astype(np.int64) * d + phase,
                    gain=params.step_gain[j, state_idx],
                    log2_gain=params.log2_step_gain[j, state_idx],
                    fb=params.fb_gain[j, state_idx], s=gains)


def _audit_schedule(params: SchemeParams, real: Realization, horizon: int):
    """Re-derive every schedule argument through the delay-enforcing accessors.

    The closed-form builders are fast paths; this walk proves each factor only
    uses state information legal at the time the encoder applies it (selector
    at time k, update factors at time k + lag), raising CsiViolation otherwise.
    """
    d, lag = params.delay, params.lag
    kind = params.kind
    for k in range(horizon + 1):
        if kind in _SCALAR_KINDS:
            continue  # no state-dependent factors
        if kind == "iid_scalar":
            gain_at(real, k, k + lag, 1, side="tx")  # update factors use S_k at time k+1
            continue
        if kind == "tcsi_mux":
            state_index_at(real, k, k, 0, side="tx")        # selector
            state_index_at(real, k, k + lag, 0, side="tx")  # update factors
            continue
        # dtcsi_mux / multi_delay
        state_index_at(real, k - d, k, d, side="tx")
        state_index_at(real, k - d, k + lag, d, side="tx")
        state_index_at(real, k, k + lag, d, side="tx")


@dataclass
class TrialTrace:
    """Full record of one closed-loop run (receiver time k = 0..K)."""

    params: SchemeParams
    x0: np.ndarray
    state_idx: np.ndarray | None
    s: np.ndarray
    noise: np.ndarray
    u: np.ndarray
    y: np.ndarray
    x: np.ndarray                  # (K+1, ncells) real transmitter states
    shadow: np.ndarray             # (K+1, ncells) shadow states after each step
    estimate: np.ndarray           # (K+1, ncells) receiver estimates after each step
    log2_contraction: np.ndarray   # (K+1, ncells)
    x_final: np.ndarray            # terminal coordinates (all pairs folded in)
    residual_max: float
    power_sum: float

    @property
    def horizon(self) -> int:
        return self.u.shape[0] - 1

    def final_estimate(self) -> np.ndarray:
        return self.estimate[-1]

    def estimate_bias(self) -> np.ndarray:
        """1 - phi_K^2 per cell; divides the estimate for unbiased decoding."""
        return -np.expm1(2.0 * math.log(2.0) * self.log2_contraction[-1])


def _coerce_scale(params: SchemeParams, gain_scale):
    """Scalar scale, or a table matching the feedback table's shape."""
    if np.ndim(gain_scale) == 0:
        return float(gain_scale)
    scale = np.asarray(gain_scale, dtype=float)
    if params.fb_gain is None or scale.shape != params.fb_gain.shape:
        raise NonDiagonalClosedLoop(
            "feedback scale must be a scalar or match the per-entry gain table; "
            "cross-coordinate feedback would break the diagonal loop structure")
    return scale


def run_trial(params: SchemeParams, real: Realization, x0: np.ndarray, horizon: int, *,
              gain_scale=1.0, audit: bool = True) -> TrialTrace:
    """Reference single-trial engine with full traces.

    Consumes channel pairs k = 0..horizon; the realization must be at least
    horizon+1 long.  ``gain_scale`` multiplies the feedback coefficient on
    both sides of the loop (1.0 is the rate-optimal gain).
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (params.ncells,):
        raise DimensionMismatch(f"x0 shape {x0.shape}, expected ({params.ncells},)")
    if real.horizon < horizon + 1:
        raise IndexOutOfRange(f"realization holds {real.horizon} steps, need {horizon + 1}")
    if audit:
        _audit_schedule(params, real, horizon)

    idx = real.state_idx[: horizon + 1] if real.state_idx is not None else None
    gains = real.gains[: horizon + 1]
    noises = real.noises[: horizon + 1]
    sched = build_schedule(params, idx, gains)
    scale = _coerce_scale(params, gain_scale)

    cells = sched.cell.tolist()
    a_arr = sched.gain.tolist()
    la_arr = sched.log2_gain.tolist()
    s_arr = sched.s.tolist()
    n_arr = noises.tolist()
    if isinstance(scale, float):
        b_arr = (sched.fb * scale).tolist()
    else:  # per-entry scale: route through a rescaled table lookup
        scaled_params = replace(params, fb_gain=params.fb_gain * scale)
        b_arr = build_schedule(scaled_params, idx, gains).fb.tolist()

    nc = params.ncells
    Xs = x0.tolist()
    logphi = [0.0] * nc
    xhat = [0.0] * nc
    x0l = x0.tolist()

    u_tr = np.empty(horizon + 1)
    y_tr = np.empty(horizon + 1)
    shadow_tr = np.empty((horizon + 1, nc))
    est_tr = np.empty((horizon + 1, nc))
    lphi_tr = np.empty((horizon + 1, nc))
    resid = 0.0
    psum = 0.0

    for k in range(horizon + 1):
        c = cells[k]
        b = b_arr[k]
        u = Xs[c]
        y = s_arr[k] * u + n_arr[k]
        logphi[c] -= la_arr[k]
        xhat[c] += (2.0 ** logphi[c]) * b * y
        Xs[c] = a_arr[k] * u - b * y
        psum += u * u
        u_tr[k] = u
        y_tr[k] = y
        shadow_tr[k] = Xs
        est_tr[k] = xhat
        lphi_tr[k] = logphi
        for j in range(nc):
            r = abs(xhat[j] - (x0l[j] - (2.0 ** logphi[j]) * Xs[j]))
            if r > resid:
                resid = r

    # real transmitter state trails the shadow by lag steps
    lag = params.lag
    x_tr = np.empty((horizon + 1, nc))
    x_tr[:lag] = x0
    if horizon + 1 > lag:
        x_tr[lag:] = shadow_tr[: horizon + 1 - lag]

    return TrialTrace(params=params, x0=x0, state_idx=idx, s=gains, noise=noises,
                      u=u_tr, y=y_tr, x=x_tr, shadow=shadow_tr, estimate=est_tr,
                      log2_contraction=lphi_tr, x_final=np.array(Xs),
                      residual_max=resid, power_sum=psum)


@dataclass
class BatchResult:
    estimate: np.ndarray           # (T, ncells) final estimates
    log2_contraction: np.ndarray   # (T, ncells)
    x_final: np.ndarray            # (T, ncells)
    power_sum: np.ndarray          # (T,) sum of u_k^2
    residual_max: np.ndarray | None

    def estimate_bias(self) -> np.ndarray:
        return -np.expm1(2.0 * math.log(2.0) * self.log2_contraction)


def run_trials_batch(params: SchemeParams, state_idx: np.ndarray | None,
                     gains: np.ndarray, noises: np.ndarray, x0: np.ndarray,
                     horizon: int, *, gain_scale=1.0,
                     track_residual: bool = False) -> BatchResult:
    """Vectorized engine: T independent trials advanced in lockstep.

    Semantics match run_trial step for step; agreement is tested to float
    tolerance (libm scalar vs vector transcendentals may differ in the last
    ulp).
    """
    T = gains.shape[0]
    if gains.shape[1] < horizon + 1:
        raise IndexOutOfRange(f"paths hold {gains.shape[1]} steps, need {horizon + 1}")
    if x0.shape != (T, params.ncells):
        raise DimensionMismatch(f"x0 shape {x0.shape}, expected ({T}, {params.ncells})")
    idx = state_idx[:, : horizon + 1] if state_idx is not None else None
    sched = build_schedule(params, idx, gains[:, : horizon + 1])
    scale = _coerce_scale(params, gain_scale)
    if isinstance(scale, float):
        fb = sched.fb * scale
    else:
        scaled_params = replace(params, fb_gain=params.fb_gain * scale)
        fb = build_schedule(scaled_params, idx, gains[:, : horizon + 1]).fb

    noises = noises[:, : horizon + 1]
    rows = np.arange(T)
    Xs = x0.astype(float).copy()
    logphi = np.zeros((T, params.ncells))
    xhat = np.zeros((T, params.ncells))
    psum = np.zeros(T)
    resid = np.zeros(T) if track_residual else None

    for k in range(horizon + 1):
        c = sched.cell[:, k]
        b = fb[:, k]
        u = Xs[rows, c]
        y = sched.s[:, k] * u + noises[:, k]
        lp = logphi[rows, c] - sched.log2_gain[:, k]
        logphi[rows, c] = lp
        xhat[rows, c] += np.exp2(lp) * b * y
        Xs[rows, c] = sched.gain[:, k] * u - b * y
        psum += u * u
        if track_residual:
            step_res = np.max(np.abs(xhat - (x0 - np.exp2(logphi) * Xs)), axis=1)
            np.maximum(resid, step_res, out=resid)

    return BatchResult(estimate=xhat, log2_contraction=logphi, x_final=Xs,
                       power_sum=psum, residual_max=resid)


def closed_loop_table(params: SchemeParams, gain_scale=1.0) -> np.ndarray:
    """Closed-loop factors a - s_out * b * scale for every table entry.

    Shape matches the step-gain table; at scale 1 every entry equals 1/a.
    Continuous iid has no finite table — use schedules there.
    """
    scale = _coerce_scale(params, gain_scale)
    if params.kind in _SCALAR_KINDS:
        s = float(params.state_gains[0])
        return np.array(float(params.step_gain) - s * float(params.fb_gain) * scale)
    if params.step_gain is None:
        raise UnsupportedDistribution("no finite closed-loop table for continuous fading")
    if params.step_gain.ndim == 1:
        s_out = params.state_gains
    else:
        s_out = params.state_gains[None, :]  # column l carries the in-force gain
    return params.step_gain - s_out * params.fb_gain * scale


def closed_loop_check(params: SchemeParams, probes: int = 257) -> float:
    """Max |a_cl * a - 1| over the table (or a probe grid for continuous iid).

    At the optimal gain the closed loop inverts the open loop exactly;
    the returned residual is floating-point error only.
    """
    if params.step_gain is not None or params.kind in _SCALAR_KINDS:
        acl = closed_loop_table(params, 1.0)
        return float(np.max(np.abs(acl * params.step_gain - 1.0)))
    # continuous: deterministic probe draws plus the endpoints of interest
    rng = np.random.default_rng(0xF5C1AB)
    from .channel import _sample_continuous

    v = np.concatenate([[0.0], _sample_continuous(params.process, probes - 1, rng)])
    a = np.sqrt(1.0 + v * v * params.budget)
    b = v * params.budget / a
    return float(np.max(np.abs((a - v * b) * a - 1.0)))
