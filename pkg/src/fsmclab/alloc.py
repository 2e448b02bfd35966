"""Optimal transmit-power allocation across channel states.

The problem: choose per-state powers g[j] >= 0 with sum_j pi[j] g[j] <= budget
to maximize

    sum_j pi[j] sum_l reach[j,l] * 0.5*log2(1 + s[l]^2 * g[j])

where ``reach[j, :]`` is the distribution of the gain that will actually
multiply the input chosen in state j.  With current state knowledge reach is
the identity and the optimum is classic water-filling; with one-step-delayed
knowledge reach is the transition matrix; for an iid process with delayed
knowledge every row is the marginal pmf and the optimum is uniform.

The objective is strictly concave on the simplex slice wherever some s[l]
is nonzero, so KKT stationarity

    sum_l reach[j,l] * s[l]^2 / (1 + s[l]^2 g[j])  =  dual   (g[j] > 0)
                                                   <= dual   (g[j] = 0)

pins the unique optimum; ``solve_allocation`` bisects the dual and solves
each state's scalar equation by brentq.  ``grid_oracle`` is an independent
check: exhaustive search on the budget slice, refined in stages (valid
because concavity guarantees a single interior optimum).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .channel import (
    FadingProcess,
    FiniteIid,
    FiniteMarkov,
    gain_values,
    is_finite,
    n_states,
    state_pmf,
)
from .errors import Infeasible, NoConvergence, TooManyStates, UnsupportedDistribution, WrongDelay

__all__ = ["AllocProblem", "PowerAllocation", "solve_allocation", "grid_oracle"]

_DEAD = 1e-300  # marginal value below this counts as a dead (zero-gain) state


@dataclass(frozen=True)
class AllocProblem:
    """Weights, gains and reach matrix for one allocation instance."""

    gains: np.ndarray      # s[j], the gain value labelling each state
    weights: np.ndarray    # pi[j], stationary/marginal state probabilities
    reach: np.ndarray      # row j: distribution of the gain multiplying state-j inputs
    budget: float
    delay: int

    def __post_init__(self):
        object.__setattr__(self, "gains", np.asarray(self.gains, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "reach", np.asarray(self.reach, dtype=float))

    @property
    def m(self) -> int:
        return self.gains.shape[0]

    @classmethod
    def from_process(cls, process: FadingProcess, budget: float, delay: int) -> "AllocProblem":
        if not is_finite(process):
            raise UnsupportedDistribution(
                "allocation over continuous fading is uniform by symmetry; solve finite processes here")
        if delay < 0:
            raise WrongDelay(f"delay must be >= 0, got {delay}")
        m = n_states(process)
        s = gain_values(process)
        pi = state_pmf(process)
        if delay == 0 or m == 1:
            reach = np.eye(m)
        elif isinstance(process, FiniteMarkov):
            reach = np.linalg.matrix_power(process.chain.transition, delay)
        else:
            reach = np.tile(pi, (m, 1))  # iid: delayed knowledge says nothing
        return cls(gains=s, weights=pi, reach=reach, budget=float(budget), delay=delay)


@dataclass(frozen=True)
class PowerAllocation:
    powers: np.ndarray        # g[j] >= 0
    dual: float               # water level / KKT multiplier (nan for grid results)
    objective_bits: float     # achieved value of the objective, bits per use
    kkt_residual: float       # max_j |stationarity violation| (nan for grid results)
    spent: float              # sum_j pi[j] g[j]
    method: str


def _marginal(prob: AllocProblem, j: int, g: float) -> float:
    s2 = prob.gains ** 2
    return float(np.sum(prob.reach[j] * s2 / (1.0 + s2 * g)))


def _objective_bits(prob: AllocProblem, powers: np.ndarray) -> float:
    s2 = prob.gains[None, :] ** 2
    val = prob.weights @ np.sum(prob.reach * 0.5 * np.log2(1.0 + s2 * np.asarray(powers)[:, None]), axis=1)
    return float(val)


def _powers_at_dual(prob: AllocProblem, lam: float) -> np.ndarray:
    out = np.zeros(prob.m)
    for j in range(prob.m):
        if _marginal(prob, j, 0.0) <= lam:
            continue  # state stays dark at this water level
        hi = 1.0
        while _marginal(prob, j, hi) > lam:
            hi *= 2.0
            if hi > 1e30:
                raise NoConvergence(f"no bracket for state {j} at dual {lam:.3e}")
        out[j] = brentq(lambda g: _marginal(prob, j, g) - lam, 0.0, hi, xtol=1e-14, rtol=1e-15)
    return out


def solve_allocation(prob: AllocProblem, max_iter: int = 200) -> PowerAllocation:
    if prob.budget < 0:
        raise Infeasible(f"negative power budget {prob.budget}")
    if np.any(prob.weights <= 0) or abs(prob.weights.sum() - 1.0) > 1e-9:
        raise Infeasible("state weights must be a positive probability vector")

    lam_hi = max(_marginal(prob, j, 0.0) for j in range(prob.m))
    if lam_hi <= _DEAD or prob.budget == 0.0:
        powers = np.zeros(prob.m)
        return PowerAllocation(powers=powers, dual=0.0, objective_bits=0.0,
                               kkt_residual=0.0, spent=0.0, method="kkt")

    # bracket the dual: spent(lam) is decreasing, spent(lam_hi) = 0
    lam_lo = lam_hi
    for _ in range(2000):
        lam_lo *= 0.5
        if float(prob.weights @ _powers_at_dual(prob, lam_lo)) >= prob.budget:
            break
    else:
        raise NoConvergence("could not bracket the dual variable")

    for _ in range(max_iter):
        mid = 0.5 * (lam_lo + lam_hi)
        if float(prob.weights @ _powers_at_dual(prob, mid)) >= prob.budget:
            lam_lo = mid
        else:
            lam_hi = mid
    lam = 0.5 * (lam_lo + lam_hi)
    powers = _powers_at_dual(prob, lam)

    spent = float(prob.weights @ powers)
    if abs(spent - prob.budget) > 1e-9 * max(1.0, prob.budget):
        # the budget binds whenever any gain is nonzero (objective strictly
        # increasing in every live state's power), so a gap means failure
        raise NoConvergence(f"budget mismatch after bisection: spent {spent!r} vs {prob.budget!r}")
    # exact feasibility: rescale the last ulps onto the live states
    live = powers > 0
    if spent != prob.budget and live.any():
        powers[live] *= prob.budget / spent
        spent = float(prob.weights @ powers)

    kkt = 0.0
    for j in range(prob.m):
        mj = _marginal(prob, j, float(powers[j]))
        kkt = max(kkt, abs(mj - lam) if powers[j] > 0 else max(0.0, mj - lam))
    return PowerAllocation(powers=powers, dual=lam, objective_bits=_objective_bits(prob, powers),
                           kkt_residual=kkt, spent=spent, method="kkt")


def grid_oracle(prob: AllocProblem, resolution: float = 1e-3) -> PowerAllocation:
    """Exhaustive search over the budget slice at the given power resolution.

    m-1 free coordinates (the last power is determined by spending the whole
    budget); stages of a fixed-size grid shrink the window around the best
    point until the step drops below ``resolution``.  Intended as a test
    oracle, not for production use.
    """
    if prob.budget < 0:
        raise Infeasible(f"negative power budget {prob.budget}")
    m = prob.m
    if m > 4:
        raise TooManyStates(f"grid oracle handles m <= 4, got {m}")
    if np.all(prob.gains == 0.0) or prob.budget == 0.0:
        return PowerAllocation(powers=np.zeros(m), dual=np.nan, objective_bits=0.0,
                               kkt_residual=np.nan, spent=0.0, method="grid")
    if m == 1:
        powers = np.array([prob.budget / prob.weights[0]])
        return PowerAllocation(powers=powers, dual=np.nan,
                               objective_bits=_objective_bits(prob, powers),
                               kkt_residual=np.nan, spent=prob.budget, method="grid")

    pi = prob.weights
    lo = np.zeros(m - 1)
    hi = np.array([prob.budget / pi[j] for j in range(m - 1)])
    npts = 321 if m == 2 else (121 if m == 3 else 41)

    best = None
    step = float(np.max(hi - lo)) / (npts - 1)
    for _stage in range(60):
        axes = [np.linspace(lo[j], hi[j], npts) for j in range(m - 1)]
        mesh = np.meshgrid(*axes, indexing="ij")
        free = np.stack([g.ravel() for g in mesh], axis=1)  # (N, m-1)
        last = (prob.budget - free @ pi[:-1]) / pi[-1]
        ok = last >= -1e-15
        if not ok.any():
            raise NoConvergence("grid oracle found no feasible point")
        free, last = free[ok], np.maximum(last[ok], 0.0)
        cand = np.concatenate([free, last[:, None]], axis=1)  # (N, m)
        # objective, vectorized over candidates
        vals = (0.5 * np.log2(1.0 + prob.gains[None, None, :] ** 2 * cand[:, :, None]) * prob.reach[None, :, :]).sum(axis=2) @ pi
        k = int(np.argmax(vals))  # ties: first index
        best = (float(vals[k]), cand[k].copy())
        step = float(np.max((hi - lo) / (npts - 1)))
        if step <= resolution:
            break
        center = cand[k][: m - 1]
        half = 1.6 * (hi - lo) / (npts - 1)
        lo = np.maximum(center - half, 0.0)
        hi_new = center + half
        hi = np.minimum(hi_new, np.array([prob.budget / pi[j] for j in range(m - 1)]))
    else:
        raise NoConvergence(f"grid refinement stalled at step {step:.3e}")

    val, powers = best
    return PowerAllocation(powers=powers, dual=np.nan, objective_bits=val,
                           kkt_residual=np.nan, spent=float(pi @ powers), method="grid")
