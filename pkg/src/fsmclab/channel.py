"""Fading channel model: y = S*u + N with unit-variance white Gaussian noise.

The gain process S comes in three flavors — degenerate (unit or constant
gain), finite-state (iid over a finite gain set, or the Markov chain from
:mod:`fsmclab.markov`), and continuous iid (Rayleigh / Rician / Nakagami /
Weibull amplitude fading).  A :class:`Realization` bundles one sampled gain
path with one noise path; draw order is states first, then noises, which the
reproducibility tests rely on.

Transmitter-side channel knowledge is delayed by ``d`` steps: when producing
the input at time k the encoder may read S only up to time k-d.  The decoder
sees everything up to the current time.  ``gain_at`` is the single accessor
that enforces this window, including the negative-time conventions (finite
processes pin t<0 to state 0; continuous ones to gain 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import CsiViolation, IndexOutOfRange, UnsupportedDistribution
from .markov import MarkovChain, sample_path, stationary_distribution

__all__ = [
    "UnitGain",
    "ConstantGain",
    "FiniteIid",
    "FiniteMarkov",
    "ContinuousIid",
    "FadingProcess",
    "Realization",
    "realize",
    "transmit",
    "gain_at",
    "n_states",
    "gain_values",
    "state_pmf",
    "gain_second_moment",
    "is_finite",
    "CONTINUOUS_FAMILIES",
    "state_index_at",
]

CONTINUOUS_FAMILIES = ("rayleigh", "rician", "nakagami", "weibull")


@dataclass(frozen=True)
class UnitGain:
    """S = 1 identically; the plain AWGN channel."""


@dataclass(frozen=True)
class ConstantGain:
    gain: float = 1.0


@dataclass(frozen=True)
class FiniteIid:
    """Independent draws from a finite gain set with the given pmf."""

    gains: np.ndarray
    pmf: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gains", np.asarray(self.gains, dtype=float))
        object.__setattr__(self, "pmf", np.asarray(self.pmf, dtype=float))
        if self.gains.shape != self.pmf.shape or self.gains.ndim != 1:
            raise UnsupportedDistribution("gains and pmf must be 1-d and the same length")
        if abs(self.pmf.sum() - 1.0) > 1e-12 or np.any(self.pmf < 0):
            raise UnsupportedDistribution("pmf must be nonnegative and sum to 1")


@dataclass(frozen=True)
class FiniteMarkov:
    chain: MarkovChain


@dataclass(frozen=True)
class ContinuousIid:
    """Iid amplitude fading from a named nonnegative family.

    Families and parameters:
      rayleigh: scale         (E S^2 = 2*scale^2)
      rician:   nu, sigma     (E S^2 = nu^2 + 2*sigma^2)
      nakagami: m, omega      (E S^2 = omega)
      weibull:  shape, scale  (E S^2 = scale^2 * Gamma(1 + 2/shape))
    """

    family: str
    params: tuple  # (name, value) pairs; kept hashable

    def __post_init__(self):
        if self.family not in CONTINUOUS_FAMILIES:
            raise UnsupportedDistribution(f"unknown fading family {self.family!r}")
        object.__setattr__(self, "params", tuple(self.params))

    def param(self, name: str) -> float:
        for k, v in self.params:
            if k == name:
                return float(v)
        raise UnsupportedDistribution(f"{self.family} fading needs parameter {name!r}")


FadingProcess = Union[UnitGain, ConstantGain, FiniteIid, FiniteMarkov, ContinuousIid]


def is_finite(process: FadingProcess) -> bool:
    return not isinstance(process, ContinuousIid)


def n_states(process: FadingProcess) -> int:
    if isinstance(process, (UnitGain, ConstantGain)):
        return 1
    if isinstance(process, FiniteIid):
        return process.gains.shape[0]
    if isinstance(process, FiniteMarkov):
        return process.chain.m
    raise UnsupportedDistribution("continuous processes have no finite state set")


def gain_values(process: FadingProcess) -> np.ndarray:
    if isinstance(process, UnitGain):
        return np.array([1.0])
    if isinstance(process, ConstantGain):
        return np.array([float(process.gain)])
    if isinstance(process, FiniteIid):
        return process.gains
    if isinstance(process, FiniteMarkov):
        return process.chain.gains
    raise UnsupportedDistribution("continuous processes have no finite state set")


def state_pmf(process: FadingProcess) -> np.ndarray:
    """Stationary/marginal state distribution of a finite process."""
    if isinstance(process, (UnitGain, ConstantGain)):
        return np.array([1.0])
    if isinstance(process, FiniteIid):
        return process.pmf
    if isinstance(process, FiniteMarkov):
        return stationary_distribution(process.chain)
    raise UnsupportedDistribution("continuous processes have no finite state set")


def gain_second_moment(process: FadingProcess) -> float:
    """E S^2 in closed form (used by power sanity checks and tests)."""
    if is_finite(process):
        return float(state_pmf(process) @ gain_values(process) ** 2)
    fam = process.family
    if fam == "rayleigh":
        return 2.0 * process.param("scale") ** 2
    if fam == "rician":
        return process.param("nu") ** 2 + 2.0 * process.param("sigma") ** 2
    if fam == "nakagami":
        return process.param("omega")
    # weibull
    from scipy.special import gamma as _gamma

    k = process.param("shape")
    return process.param("scale") ** 2 * float(_gamma(1.0 + 2.0 / k))


def _sample_continuous(process: ContinuousIid, n: int, rng: np.random.Generator) -> np.ndarray:
    fam = process.family
    if fam == "rayleigh":
        return rng.rayleigh(scale=process.param("scale"), size=n)
    if fam == "rician":
        nu, sigma = process.param("nu"), process.param("sigma")
        x = nu + sigma * rng.standard_normal(n)
        y = sigma * rng.standard_normal(n)
        return np.hypot(x, y)
    if fam == "nakagami":
        m, omega = process.param("m"), process.param("omega")
        if m < 0.5:
            raise UnsupportedDistribution("nakagami needs m >= 0.5")
        return np.sqrt(rng.gamma(shape=m, scale=omega / m, size=n))
    k = process.param("shape")
    return process.param("scale") * rng.weibull(k, size=n)


@dataclass(frozen=True)
class Realization:
    """One sampled run of the channel: gains, noises, and (if finite) state indices."""

    gains: np.ndarray
    noises: np.ndarray
    state_idx: np.ndarray | None  # None for continuous processes
    process: FadingProcess

    @property
    def horizon(self) -> int:
        return self.gains.shape[0]


def realize(process: FadingProcess, horizon: int, rng: np.random.Generator) -> Realization:
    """Sample gains for times 0..horizon-1, then the matching noises."""
    if horizon <= 0:
        raise IndexOutOfRange(f"horizon must be positive, got {horizon}")
    if isinstance(process, UnitGain):
        idx = np.zeros(horizon, dtype=np.int64)
        gains = np.ones(horizon)
    elif isinstance(process, ConstantGain):
        idx = np.zeros(horizon, dtype=np.int64)
        gains = np.full(horizon, float(process.gain))
    elif isinstance(process, FiniteIid):
        idx = rng.choice(process.gains.shape[0], size=horizon, p=process.pmf)
        gains = process.gains[idx]
    elif isinstance(process, FiniteMarkov):
        idx = sample_path(process.chain, horizon, rng)
        gains = process.chain.gains[idx]
    else:
        idx = None
        gains = _sample_continuous(process, horizon, rng)
    noises = rng.standard_normal(horizon)
    return Realization(gains=gains, noises=noises, state_idx=idx, process=process)


def transmit(u: float, gain: float, noise: float) -> float:
    return gain * u + noise


def gain_at(real: Realization, t: int, now: int, delay: int, side: str = "tx") -> float:
    """Value of S_t as visible at time ``now`` from the given side.

    Transmitter side may read t <= now - delay; receiver side t <= now.
    Negative t falls back to the convention value (state-0 gain for finite
    processes, 0.0 for continuous ones) rather than raising.
    """
    limit = now - delay if side == "tx" else now
    if t > limit:
        raise CsiViolation(f"S_{t} not visible at time {now} ({side}, delay {delay})")
    if t < 0:
        if is_finite(real.process):
            return float(gain_values(real.process)[0])
        return 0.0
    if t >= real.horizon:
        raise IndexOutOfRange(f"time {t} beyond realized horizon {real.horizon}")
    return float(real.gains[t])


def state_index_at(real: Realization, t: int, now: int, delay: int, side: str = "tx") -> int:
    """Like gain_at but returns the state index (finite processes only)."""
    limit = now - delay if side == "tx" else now
    if t > limit:
        raise CsiViolation(f"S_{t} not visible at time {now} ({side}, delay {delay})")
    if real.state_idx is None:
        raise UnsupportedDistribution("continuous process has no state index")
    if t < 0:
        return 0
    if t >= real.horizon:
        raise IndexOutOfRange(f"time {t} beyond realized horizon {real.horizon}")
    return int(real.state_idx[t])
