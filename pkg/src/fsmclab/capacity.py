"""Channel capacity under delayed transmitter state knowledge.

For a finite process with optimal powers g[j] the capacity in bits per use is

    C = sum_j pi[j] * sum_l reach[j,l] * 0.5*log2(1 + s[l]^2 * g[j])

which factors into per-state growth exponents: state j contributes
log2_growth[j] = pi[j] * (inner sum), and C = sum_j log2_growth[j].  The
feedback schemes in :mod:`fsmclab.schemes` realize exactly these exponents —
the codeword interval of state j stretches by the factor 2^(log2_growth[j]/pi[j])
on each visit — so the same report drives both rate computation and codebook
sizing.

Continuous iid fading gets a Monte Carlo estimate of E 0.5*log2(1 + S^2 * P)
(power is uniform there; with one-step-delayed knowledge of an iid process
there is nothing to adapt to).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alloc import AllocProblem, PowerAllocation, solve_allocation
from .channel import ContinuousIid, FadingProcess, _sample_continuous, is_finite
from .errors import UnsupportedDistribution

__all__ = ["CapacityReport", "capacity_finite", "capacity_continuous_iid", "idle_state_consistency"]


@dataclass(frozen=True)
class CapacityReport:
    bits_per_use: float
    log2_rate_share: np.ndarray   # state j's share of C: weights[j] * (bits per visit)
    rate_share_growth: np.ndarray  # 2**share — these multiply to total_growth
    per_visit_stretch: np.ndarray  # 2**(bits per visit): interval stretch on one visit
    total_growth: float            # 2**C
    powers: np.ndarray
    budget: float
    delay: int
    n_samples: int = 0             # Monte Carlo sample count (continuous only)
    stderr: float = 0.0            # Monte Carlo standard error of bits_per_use

    def block_bits(self, horizon: int) -> float:
        """(K+1) * C for a horizon of K+1 channel uses (argument is K)."""
        return (horizon + 1) * self.bits_per_use


def capacity_finite(prob: AllocProblem, alloc: PowerAllocation | None = None) -> CapacityReport:
    """Capacity of a finite process; solves the allocation unless given one."""
    if alloc is None:
        alloc = solve_allocation(prob)
    g = np.asarray(alloc.powers, dtype=float)
    s2 = prob.gains[None, :] ** 2
    inner = np.sum(prob.reach * 0.5 * np.log2(1.0 + s2 * g[:, None]), axis=1)  # bits per visit
    share = prob.weights * inner
    C = float(share.sum())
    return CapacityReport(
        bits_per_use=C,
        log2_rate_share=share,
        rate_share_growth=np.exp2(share),
        per_visit_stretch=np.exp2(inner),
        total_growth=float(np.exp2(C)),
        powers=g,
        budget=prob.budget,
        delay=prob.delay,
    )


def capacity_continuous_iid(process: FadingProcess, budget: float,
                            n_samples: int, rng: np.random.Generator) -> CapacityReport:
    if is_finite(process) or not isinstance(process, ContinuousIid):
        raise UnsupportedDistribution("use capacity_finite for finite processes")
    s = _sample_continuous(process, n_samples, rng)
    per = 0.5 * np.log2(1.0 + s * s * budget)
    C = float(per.mean())
    se = float(per.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("nan")
    return CapacityReport(
        bits_per_use=C,
        log2_rate_share=np.array([C]),
        rate_share_growth=np.exp2(np.array([C])),
        per_visit_stretch=np.exp2(np.array([C])),
        total_growth=float(np.exp2(C)),
        powers=np.array([float(budget)]),
        budget=float(budget),
        delay=1,
        n_samples=n_samples,
        stderr=se,
    )


def idle_state_consistency(report: CapacityReport, atol: float = 1e-12) -> dict:
    """Check the biconditional: a state gets zero power iff its stretch factor is 1.

    Returns per-state booleans and an overall flag; the stretch factor
    2^(inner) equals 1 exactly when the inner sum vanishes, which happens
    exactly when the allocated power is zero (all reachable gains dead gains
    contribute nothing either way, and live gains force a positive inner sum).
    """
    zero_power = report.powers <= atol
    unit_growth = np.abs(report.rate_share_growth - 1.0) <= 16 * np.finfo(float).eps * np.maximum(1.0, report.rate_share_growth)
    return {
        "zero_power": zero_power,
        "unit_growth": unit_growth,
        "consistent": bool(np.all(zero_power == unit_growth)),
    }
