"""Finite-state Markov model of the human control lag.

The lag (in discrete slots) taken by the operator to react advances one
chain step per control loop.  This module computes stationary
distributions, the distribution of summed lags across several loops, and
maximum-likelihood estimation of the chain from observed lag sequences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csgraph

from .errors import (DomainError, InsufficientDataError, ReducibleChainError,
                     TruncationError)

log = logging.getLogger(__name__)

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class LagChain:
    """Lag states (positive integers, in slots) and their transition matrix."""

    states: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        matrix = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "matrix", matrix)
        if states.ndim != 1 or len(states) == 0:
            raise DomainError("states must be a non-empty 1-d sequence")
        if np.any(states < 1):
            raise DomainError("lag states must be positive integers")
        if len(np.unique(states)) != len(states):
            raise DomainError("lag states must be distinct")
        if matrix.shape != (len(states), len(states)):
            raise DomainError("transition matrix shape does not match states")
        if np.any(matrix < 0):
            raise DomainError("transition probabilities must be >= 0")
        row_err = np.abs(matrix.sum(axis=1) - 1.0)
        if np.any(row_err > _ROW_SUM_TOL):
            raise DomainError(
                f"rows must sum to 1 within {_ROW_SUM_TOL}; worst error "
                f"{row_err.max():.3e}")

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def tau_max(self) -> int:
        return int(self.states.max())


@dataclass(frozen=True)
class LagSumTable:
    """Joint law of (accumulated lag, terminal state) for 1..m_max loops.

    ``tables[m-1][k, j]`` is the probability that m consecutive loops
    accumulate exactly k slots of lag and end in state index j.
    """

    chain: LagChain
    tables: tuple
    m_max: int
    k_max: int

    def joint(self, m: int) -> np.ndarray:
        return self.tables[m - 1]

    def marginal(self, m: int) -> np.ndarray:
        """pmf of the accumulated lag over m loops, indexed by slot count."""
        return self.tables[m - 1].sum(axis=1)


def stationary(chain: LagChain) -> np.ndarray:
    """Stationary distribution v with v M = v, solved as a linear system.

    Aperiodicity is not required.  Raises if the chain is reducible,
    naming the states outside the largest communicating class.
    """
    m = chain.matrix
    n = chain.n_states
    if n == 1:
        return np.array([1.0])
    n_comp, labels = csgraph.connected_components(m > 0, directed=True,
                                                  connection="strong")
    if n_comp > 1:
        counts = np.bincount(labels)
        main = int(np.argmax(counts))
        outside = [int(s) for s, lab in zip(chain.states, labels)
                   if lab != main]
        raise ReducibleChainError(
            f"chain is reducible; states {outside} do not communicate "
            "with the rest", states=outside)
    a = np.vstack([(m.T - np.eye(n))[:-1], np.ones(n)])
    b = np.zeros(n)
    b[-1] = 1.0
    v, *_ = np.linalg.lstsq(a, b, rcond=None)
    v = np.clip(v, 0.0, None)
    v /= v.sum()
    residual = np.abs(v @ m - v).max()
    if residual > 1e-10:
        raise DomainError(f"stationary solve residual too large: {residual}")
    return v


def lag_sum_table(chain: LagChain, m_max: int, k_max: int | None = None,
                  init_dist: np.ndarray | None = None,
                  eps_tail: float = 1e-9) -> LagSumTable:
    """Dynamic-programming table of lag sums over up to m_max loops.

    The first loop's state is drawn from ``init_dist`` (stationary by
    default); each further loop advances the chain and adds its state's
    lag.  Equivalent to summing over all length-m state paths weighted by
    the initial law and transition probabilities, at cost
    O(m_max * k_max * n_states^2).
    """
    if m_max < 1:
        raise DomainError("m_max must be >= 1")
    states = chain.states
    full_k = int(m_max * states.max())
    if k_max is None:
        k_max = full_k
    if k_max < m_max * states.min():
        raise DomainError("k_max cannot hold even the minimal lag sum")
    if k_max < full_k:
        raise TruncationError(
            f"k_max={k_max} drops lag-sum mass above eps_tail={eps_tail}; "
            f"need k_max >= {full_k}")
    v0 = stationary(chain) if init_dist is None else np.asarray(init_dist,
                                                                dtype=float)
    if v0.shape != (chain.n_states,) or abs(v0.sum() - 1.0) > 1e-9:
        raise DomainError("init_dist must be a distribution over the states")

    tables = []
    first = np.zeros((k_max + 1, chain.n_states))
    for j, s in enumerate(states):
        first[s, j] = v0[j]
    tables.append(first)
    for _ in range(2, m_max + 1):
        prev = tables[-1]
        nxt = np.zeros_like(prev)
        step = prev @ chain.matrix  # mass arriving in each next state
        for j, s in enumerate(states):
            nxt[s:, j] = step[:k_max + 1 - s, j]
        tables.append(nxt)
    for m, tab in enumerate(tables, start=1):
        deficit = abs(tab.sum() - 1.0)
        if deficit > 1e-9:
            raise TruncationError(
                f"lag-sum table for m={m} lost {deficit:.3e} mass")
    return LagSumTable(chain=chain, tables=tuple(tables), m_max=m_max,
                       k_max=k_max)


def estimate_chain(lag_sequence, states=None) -> LagChain:
    """Maximum-likelihood transition matrix from an observed lag sequence.

    Transition counts are normalised row-wise; a state never left in the
    data gets a uniform row (logged) so the chain stays row-stochastic.
    """
    seq = np.asarray(lag_sequence, dtype=np.int64)
    if seq.ndim != 1 or len(seq) < 2:
        raise InsufficientDataError(
            "need at least two observed lags to estimate transitions")
    if states is None:
        states = np.unique(seq)
    states = np.asarray(states, dtype=np.int64)
    index = {int(s): i for i, s in enumerate(states)}
    unknown = set(int(s) for s in seq) - set(index)
    if unknown:
        raise DomainError(f"observed lags {sorted(unknown)} not in the "
                          f"declared state set {states.tolist()}")
    n = len(states)
    counts = np.zeros((n, n))
    for a, b in zip(seq[:-1], seq[1:]):
        counts[index[int(a)], index[int(b)]] += 1.0
    totals = counts.sum(axis=1)
    matrix = np.empty_like(counts)
    for i in range(n):
        if totals[i] == 0:
            log.warning("state %d never left in the data; using uniform row",
                        states[i])
            matrix[i] = 1.0 / n
        else:
            matrix[i] = counts[i] / totals[i]
    return LagChain(states=states, matrix=matrix)


def quantize_lags(raw_lags_s, state_set_s, ts: float) -> list[int]:
    """Map raw lag measurements (seconds) to the nearest quantized state.

    Ties go to the smaller state.  Returns lags in whole slots of length
    ``ts`` seconds.
    """
    levels = sorted(float(s) for s in state_set_s)
    if not levels:
        raise DomainError("state set must be non-empty")
    if len(set(levels)) != len(levels):
        raise DomainError("state set values must be distinct")
    if ts <= 0:
        raise DomainError("ts must be > 0")
    out = []
    for lag in raw_lags_s:
        lag = float(lag)
        if lag <= 0:
            raise DomainError(f"raw lag must be positive, got {lag}")
        # distances rounded so exact midpoints tie despite float error
        best = min(levels, key=lambda s: (round(abs(lag - s), 12), s))
        out.append(int(round(best / ts)))
    return out
