"""Finite-state Markov chains over channel gain values.

A chain pairs a vector of real gains ``s[0..m-1]`` (pairwise distinct, so a
gain value identifies its state) with a row-stochastic transition matrix
``P``.  Everything downstream assumes the chain is irreducible and aperiodic;
``validate_chain`` checks exactly that and reports every violation it finds
rather than stopping at the first.

State indices are 0-based everywhere in this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateGain,
    IndexOutOfRange,
    Periodic,
    Reducible,
    RowNotStochastic,
    SolveFailed,
)

__all__ = [
    "MarkovChain",
    "ValidationReport",
    "VisitCounts",
    "validate_chain",
    "stationary_distribution",
    "sample_path",
    "count_statistics",
]

_ROW_ATOL = 1e-12  # rows must sum to 1 within this


@dataclass(frozen=True)
class MarkovChain:
    """Gain values plus transition matrix; construction does not validate."""

    gains: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gains", np.asarray(self.gains, dtype=float))
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))

    @property
    def m(self) -> int:
        return self.gains.shape[0]

    @classmethod
    def checked(cls, gains, transition) -> "MarkovChain":
        """Build and validate in one step; raises the first reported problem."""
        chain = cls(gains, transition)
        report = validate_chain(chain)
        report.raise_if_invalid()
        return chain


@dataclass
class ValidationReport:
    ok: bool
    problems: list = field(default_factory=list)  # (error class, message) pairs

    def raise_if_invalid(self):
        if not self.ok:
            exc, msg = self.problems[0]
            raise exc(msg + (f" (+{len(self.problems) - 1} more)" if len(self.problems) > 1 else ""))


def validate_chain(chain: MarkovChain, atol: float = _ROW_ATOL) -> ValidationReport:
    """Check shape, stochasticity, distinct gains, irreducibility, aperiodicity."""
    problems = []
    s, P = chain.gains, chain.transition

    if s.ndim != 1 or s.shape[0] == 0:
        problems.append((RowNotStochastic, f"gains must be a nonempty vector, got shape {s.shape}"))
        return ValidationReport(False, problems)
    m = s.shape[0]
    if P.shape != (m, m):
        problems.append((RowNotStochastic, f"transition matrix shape {P.shape} does not match {m} states"))
        return ValidationReport(False, problems)

    if not np.all(np.isfinite(P)) or np.any(P < 0.0) or np.any(P > 1.0):
        problems.append((RowNotStochastic, "transition entries must lie in [0, 1]"))
    else:
        bad = np.flatnonzero(np.abs(P.sum(axis=1) - 1.0) > atol)
        for j in bad:
            problems.append((RowNotStochastic, f"row {j} sums to {P[j].sum():.17g}"))

    if not np.all(np.isfinite(s)):
        problems.append((DuplicateGain, "gains must be finite"))
    elif len(set(s.tolist())) != m:
        problems.append((DuplicateGain, f"gain values must be pairwise distinct, got {s.tolist()}"))

    if not problems:
        adj = P > 0.0
        if not (_reaches_all(adj, 0) and _reaches_all(adj.T, 0)):
            problems.append((Reducible, "transition graph is not strongly connected"))
        elif _period(adj) != 1:
            problems.append((Periodic, f"chain period is {_period(adj)}"))

    return ValidationReport(not problems, problems)


def _reaches_all(adj: np.ndarray, start: int) -> bool:
    m = adj.shape[0]
    seen = np.zeros(m, dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        v = stack.pop()
        for w in np.flatnonzero(adj[v]):
            if not seen[w]:
                seen[w] = True
                stack.append(int(w))
    return bool(seen.all())


def _period(adj: np.ndarray) -> int:
    # gcd of (level[u] + 1 - level[v]) over edges u->v, levels from BFS at node 0;
    # standard period computation for an irreducible graph
    m = adj.shape[0]
    level = np.full(m, -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for v in frontier:
            for w in np.flatnonzero(adj[v]):
                if level[w] < 0:
                    level[w] = level[v] + 1
                    nxt.append(int(w))
        frontier = nxt
    g = 0
    for u in range(m):
        for v in np.flatnonzero(adj[u]):
            g = math.gcd(g, int(level[u] + 1 - level[v]))
    return g


def stationary_distribution(chain: MarkovChain) -> np.ndarray:
    """Solve pi P = pi, sum(pi) = 1 by replacing one balance equation.

    Assumes the chain already validated; raises SolveFailed if the linear
    solve comes back degenerate or with a residual above 1e-10.
    """
    P = chain.transition
    m = chain.m
    A = P.T - np.eye(m)
    A[-1, :] = 1.0  # replace last balance equation with normalization
    b = np.zeros(m)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as e:
        raise SolveFailed(f"stationary solve failed: {e}") from e
    pi = pi / pi.sum()
    resid = float(np.max(np.abs(pi @ P - pi)))
    if resid > 1e-10 or np.any(pi <= 0.0):
        raise SolveFailed(f"stationary solution unusable: residual {resid:.3e}, min component {pi.min():.3e}")
    return pi


def sample_path(chain: MarkovChain, length: int, rng: np.random.Generator,
                init: np.ndarray | int | None = None) -> np.ndarray:
    """Sample a state-index path of the given length.

    The first state is drawn from ``init`` (stationary distribution when
    None, or a fixed index); exactly ``length`` uniforms are consumed, one
    per emitted state, so callers can reason about draw budgets.
    """
    if length <= 0:
        return np.empty(0, dtype=np.int64)
    us = rng.random(length)
    if isinstance(init, (int, np.integer)):
        state = int(init)  # us[0] goes unused; draw count stays fixed either way
    else:
        dist = stationary_distribution(chain) if init is None else np.asarray(init, dtype=float)
        state = int(np.searchsorted(np.cumsum(dist), us[0], side="right"))
        state = min(state, chain.m - 1)
    out = np.empty(length, dtype=np.int64)
    out[0] = state
    rows = np.cumsum(chain.transition, axis=1).tolist()  # python lists: tight loop below
    for k in range(1, length):
        u = us[k]
        row = rows[state]
        j = 0
        while j < len(row) - 1 and u > row[j]:
            j += 1
        state = j
        out[k] = j
    return out


@dataclass(frozen=True)
class VisitCounts:
    """Occupation and pair counts along a path.

    ``transitions[j, l]`` counts times t in 0..n-1 with (prev, current) =
    (j, l), where prev at t=0 is state 0 by the negative-time convention —
    both tables therefore sum to the path length.
    """

    visits: np.ndarray
    transitions: np.ndarray

    @property
    def length(self) -> int:
        return int(self.visits.sum())


def count_statistics(path: np.ndarray, m: int) -> VisitCounts:
    path = np.asarray(path, dtype=np.int64)
    if path.size and (path.min() < 0 or path.max() >= m):
        raise IndexOutOfRange(f"path contains indices outside 0..{m - 1}")
    visits = np.bincount(path, minlength=m).astype(np.int64)
    prev = np.concatenate([[0], path[:-1]])  # negative-time state is index 0
    trans = np.bincount(prev * m + path, minlength=m * m).astype(np.int64).reshape(m, m)
    return VisitCounts(visits=visits, transitions=trans)
