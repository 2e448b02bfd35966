"""Lattice codebooks on per-state intervals, plus nearest-codeword decoding.

Each codeword coordinate j lives on the interval [-amp_j, +amp_j] with
amp_j = sqrt(power_j), holding M_j equally spaced points at distance
2*D_j, where D_j is the decision radius:

    v_i = -amp + 2*i*D,   D = amp / (M - 1),   i = 0..M-1.

Counts come from per-coordinate growth exponents:
M_j = floor(2^((K+1)*(1-eps)*share_j)).  The floor is evaluated in floating
point; an exponent within one ulp of an integer can land on either side,
which is inherent to sizing by a real-valued rate target.  Counts above
2^52 cannot be enumerated exactly in binary64 — ``build_codebook`` raises
Overflow unless asked for a log-only codebook, which reports log2 counts
and refuses to encode.  A coordinate with exponent below one bit collapses
to the single codeword 0.

Messages are tuples of 0-based per-coordinate indices; the flat integer
form uses mixed radix with coordinate 0 least significant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, IndexOutOfRange, Overflow

__all__ = [
    "Codebook",
    "build_codebook",
    "encode",
    "decode",
    "batch_decode",
    "message_to_flat",
    "flat_to_message",
    "random_message",
    "matched_bits",
    "batch_matched_bits",
]

_EXACT_LIMIT = 2.0 ** 52  # binary64 integers are exact below this


@dataclass(frozen=True)
class Codebook:
    counts: tuple             # M_j as python ints; None entries in log-only books
    log2_targets: np.ndarray  # real-valued exponents (K+1)(1-eps)*share, clipped at 0
    amplitude: np.ndarray    # amp_j = sqrt(power_j)
    decision_radius: np.ndarray  # D_j; 0.0 where M_j == 1
    horizon: int             # K
    epsilon: float
    log_only: bool = False

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def total_count(self):
        if self.log_only:
            return None
        t = 1
        for M in self.counts:
            t *= M
        return t

    @property
    def width_bits(self) -> int:
        """Bits needed to write any flat message index."""
        if self.log_only:
            raise Overflow("log-only codebook has no exact width")
        return max((self.total_count - 1).bit_length(), 0)

    def rate_bits_per_use(self) -> float:
        """Actually carried bits per channel use, sum_j log2 M_j / (K+1)."""
        if self.log_only:
            return float(np.sum(self.log2_targets)) / (self.horizon + 1)
        logs = [math.log2(M) for M in self.counts]
        return math.fsum(logs) / (self.horizon + 1)


def build_codebook(log2_share: np.ndarray, powers: np.ndarray, horizon: int,
                   epsilon: float, log_only: bool = False) -> Codebook:
    """Size one codebook for horizon K and rate backoff epsilon.

    ``log2_share`` holds each coordinate's bits-per-use share; coordinate j
    gets M_j = floor(2^((K+1)(1-eps)*share_j)) codewords on [-sqrt(powers_j), ...].
    """
    log2_share = np.asarray(log2_share, dtype=float)
    powers = np.asarray(powers, dtype=float)
    if log2_share.shape != powers.shape or log2_share.ndim != 1:
        raise DimensionMismatch(f"share/power shapes differ: {log2_share.shape} vs {powers.shape}")
    if not 0.0 <= epsilon < 1.0:
        raise IndexOutOfRange(f"epsilon must be in [0, 1), got {epsilon}")
    if horizon < 0:
        raise IndexOutOfRange(f"horizon must be >= 0, got {horizon}")

    expo = np.maximum((horizon + 1) * (1.0 - epsilon) * log2_share, 0.0)
    amp = np.sqrt(powers)

    counts = []
    radius = np.zeros_like(amp)
    for j, e in enumerate(expo):
        if e > 52 and not log_only:
            raise Overflow(
                f"coordinate {j} wants 2^{e:.1f} codewords, beyond exact integer range; "
                "pass log_only=True for rate-only reporting")
        if log_only and e > 52:
            counts.append(None)
            continue
        M = int(math.floor(math.pow(2.0, float(e))))
        M = max(M, 1)
        counts.append(M)
        if M > 1:
            radius[j] = amp[j] / (M - 1)
    return Codebook(counts=tuple(counts), log2_targets=expo, amplitude=amp,
                    decision_radius=radius, horizon=horizon, epsilon=float(epsilon),
                    log_only=log_only)


def _check_enumerable(cb: Codebook):
    if cb.log_only:
        raise Overflow("log-only codebook cannot enumerate messages")


def encode(cb: Codebook, message: tuple) -> np.ndarray:
    _check_enumerable(cb)
    if len(message) != cb.ndim:
        raise DimensionMismatch(f"message has {len(message)} components, codebook {cb.ndim}")
    out = np.zeros(cb.ndim)
    for j, (i, M) in enumerate(zip(message, cb.counts)):
        if not 0 <= i < M:
            raise IndexOutOfRange(f"component {j}: index {i} not in 0..{M - 1}")
        if M > 1:
            out[j] = -cb.amplitude[j] + 2.0 * i * cb.decision_radius[j]
    return out


def decode(cb: Codebook, estimate: np.ndarray, bias: np.ndarray | None = None) -> tuple:
    """Nearest codeword per coordinate; exact midpoints round to the lower index.

    ``bias`` divides the estimate first (unbiasing by 1 - contraction^2);
    a zero bias entry on a multi-codeword coordinate is rejected.
    """
    _check_enumerable(cb)
    estimate = np.asarray(estimate, dtype=float)
    if estimate.shape != (cb.ndim,):
        raise DimensionMismatch(f"estimate shape {estimate.shape}, expected ({cb.ndim},)")
    out = []
    for j, M in enumerate(cb.counts):
        if M == 1:
            out.append(0)
            continue
        z = estimate[j]
        if bias is not None:
            if bias[j] == 0.0:
                raise ValueError(f"coordinate {j}: zero bias factor, unbiased decode undefined")
            z = z / bias[j]
        t = (z + cb.amplitude[j]) / (2.0 * cb.decision_radius[j])
        i = int(math.ceil(t - 0.5))  # midpoint ties go down
        out.append(min(max(i, 0), M - 1))
    return tuple(out)


def batch_decode(cb: Codebook, estimates: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Vectorized decode: (T, ndim) estimates to (T, ndim) index matrix."""
    _check_enumerable(cb)
    estimates = np.asarray(estimates, dtype=float)
    if estimates.ndim != 2 or estimates.shape[1] != cb.ndim:
        raise DimensionMismatch(f"estimates shape {estimates.shape}, expected (T, {cb.ndim})")
    z = estimates if bias is None else estimates / bias
    out = np.zeros(estimates.shape, dtype=np.int64)
    for j, M in enumerate(cb.counts):
        if M == 1:
            continue
        t = (z[:, j] + cb.amplitude[j]) / (2.0 * cb.decision_radius[j])
        i = np.ceil(t - 0.5)
        out[:, j] = np.clip(i, 0, M - 1).astype(np.int64)
    return out


def message_to_flat(cb: Codebook, message: tuple) -> int:
    _check_enumerable(cb)
    if len(message) != cb.ndim:
        raise DimensionMismatch(f"message has {len(message)} components, codebook {cb.ndim}")
    flat = 0
    base = 1
    for i, M in zip(message, cb.counts):  # coordinate 0 least significant
        if not 0 <= i < M:
            raise IndexOutOfRange(f"index {i} not in 0..{M - 1}")
        flat += int(i) * base
        base *= M
    return flat


def flat_to_message(cb: Codebook, flat: int) -> tuple:
    _check_enumerable(cb)
    if not 0 <= flat < cb.total_count:
        raise IndexOutOfRange(f"flat index {flat} not in 0..{cb.total_count - 1}")
    out = []
    for M in cb.counts:
        out.append(flat % M)
        flat //= M
    return tuple(out)


def random_message(cb: Codebook, rng: np.random.Generator) -> tuple:
    _check_enumerable(cb)
    return tuple(int(rng.integers(M)) for M in cb.counts)


def matched_bits(cb: Codebook, sent: tuple, decoded: tuple) -> int:
    """Bit positions (out of width_bits) where the flat indices agree."""
    w = cb.width_bits
    x = message_to_flat(cb, sent) ^ message_to_flat(cb, decoded)
    return w - bin(x).count("1")


def batch_matched_bits(cb: Codebook, sent: np.ndarray, decoded: np.ndarray) -> np.ndarray:
    """Vectorized matched_bits over (T, ndim) index matrices."""
    w = cb.width_bits
    if w > 63:
        return np.array([matched_bits(cb, tuple(a), tuple(b)) for a, b in zip(sent, decoded)])
    base = 1
    flat_s = np.zeros(sent.shape[0], dtype=np.uint64)
    flat_d = np.zeros(sent.shape[0], dtype=np.uint64)
    for j, M in enumerate(cb.counts):
        flat_s += sent[:, j].astype(np.uint64) * np.uint64(base)
        flat_d += decoded[:, j].astype(np.uint64) * np.uint64(base)
        base *= M
    return w - np.bitwise_count(flat_s ^ flat_d).astype(np.int64)
