"""Distribution of the interval between consecutive closed human loops.

A cycle spans M back-to-back human control loops: M-1 that fail at the
actuator downlink followed by one that succeeds.  Its length in slots is
the sum of the per-loop uplink delays, the per-loop human lags, and one
downlink slot per loop, so

    L = sum(tau_uplink_i) + sum(tau_lag_i) + M.

The cycle pmf mixes the M-fold convolutions of the uplink-delay pmf and the
Markov lag-sum law over the geometric distribution of M.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import humanmodel
from .errors import DivergenceError, DomainError, TruncationError
from .harq import ShDelayPmf
from .humanmodel import LagChain
from .linkmodel import CodeConfig, LinkBudget, expected_error_prob


@dataclass(frozen=True)
class CycleDistributions:
    """Cycle-length pmf ``z`` plus the conditional tables it was built from.

    ``z[l]`` is the probability of a cycle of l slots (index 0 unused).
    ``sh_sums[m]`` and ``lag_sums[m]`` are the uplink-delay and lag-sum
    pmfs conditioned on M = m loops.  ``tail_mass`` is the probability not
    captured by the truncated arrays.
    """

    z: np.ndarray
    p_open_human: float
    m_max: int
    tail_mass: float
    sh_pmf: ShDelayPmf
    chain: LagChain
    eps_tail: float
    sh_sums: dict
    lag_sums: dict
    lag_init: np.ndarray | None = None
    _refine_cache: dict = field(default_factory=dict, repr=False)

    @property
    def l_max(self) -> int:
        return len(self.z) - 1

    def mean(self) -> float:
        return float(np.arange(len(self.z)) @ self.z)

    def refined(self, eps_tail: float) -> "CycleDistributions":
        """Rebuild with a smaller truncation budget (longer arrays)."""
        if eps_tail not in self._refine_cache:
            self._refine_cache[eps_tail] = interval_pmf(
                self.sh_pmf, self.chain, self.p_open_human,
                eps_tail=eps_tail, lag_init=self.lag_init)
        return self._refine_cache[eps_tail]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["l", "probability"])
            for l, p in enumerate(self.z):
                if l >= 1:
                    writer.writerow([l, repr(float(p))])


def open_human_loop_prob(ha: LinkBudget, code: CodeConfig) -> float:
    """Probability a human loop fails: only its single downlink attempt can."""
    return expected_error_prob(ha, code)


def loop_count_pmf(p_open_human: float, m_max: int | None = None,
                   eps_tail: float = 1e-9) -> np.ndarray:
    """Geometric pmf of the number of loops per cycle, indexed by m.

    ``P[M = m] = (1 - p) p^(m-1)``; entry 0 is unused.  When ``m_max`` is
    omitted it is chosen so the dropped tail p^m_max is below ``eps_tail``.
    """
    if not 0.0 <= p_open_human <= 1.0:
        raise DomainError("p_open_human must be in [0, 1]")
    if p_open_human >= 1.0:
        raise DivergenceError(
            "p_open_human = 1: no human loop ever closes")
    if m_max is None:
        if p_open_human == 0.0:
            m_max = 1
        else:
            m_max = max(1, int(np.ceil(np.log(eps_tail)
                                       / np.log(p_open_human))))
    pmf = np.zeros(m_max + 1)
    m = np.arange(1, m_max + 1)
    pmf[1:] = (1.0 - p_open_human) * p_open_human ** (m - 1)
    return pmf


def sh_sum_conditional(w: ShDelayPmf, m: int,
                       k_max: int | None = None,
                       eps_tail: float = 1e-9) -> np.ndarray:
    """m-fold convolution of the uplink-delay pmf; support starts at k = m."""
    if m < 1:
        raise DomainError("m must be >= 1")
    base = w.probs
    acc = base.copy()
    for _ in range(m - 1):
        acc = np.convolve(acc, base)
    if k_max is not None:
        dropped = acc[k_max + 1:].sum()
        if dropped > eps_tail:
            raise TruncationError(
                f"k_max={k_max} drops {dropped:.3e} of the {m}-fold "
                "uplink-delay mass")
        acc = acc[:k_max + 1]
    return acc


def interval_pmf(w: ShDelayPmf, chain: LagChain, p_open_human: float,
                 eps_tail: float = 1e-9,
                 lag_init: np.ndarray | None = None) -> CycleDistributions:
    """Assemble the cycle-length pmf from its three independent parts.

    Conditioned on M = m, the cycle length is the sum of the m-fold uplink
    delay, the m-loop lag sum (Markov-correlated, started from the
    stationary law unless ``lag_init`` overrides it), and m downlink
    slots.  Truncation budgets are split so the total uncaptured mass
    stays below ``eps_tail``.
    """
    if not 0.0 <= p_open_human < 1.0:
        raise DivergenceError("p_open_human must be in [0, 1) for cycles "
                              "to terminate")
    m_pmf = loop_count_pmf(p_open_human, eps_tail=eps_tail / 4.0)
    m_max = len(m_pmf) - 1
    mean_m = 1.0 / (1.0 - p_open_human)
    w_ext = w.extended(eps_tail / (8.0 * m_max * mean_m))

    lag_table = humanmodel.lag_sum_table(chain, m_max, init_dist=lag_init)
    sh_sums = {}
    lag_sums = {}
    acc = w_ext.probs.copy()
    z_parts = []
    for m in range(1, m_max + 1):
        if m > 1:
            acc = np.convolve(acc, w_ext.probs)
        sh_sums[m] = acc.copy()
        lag_sums[m] = lag_table.marginal(m)
        zm = np.convolve(acc, lag_sums[m])
        shifted = np.zeros(len(zm) + m)
        shifted[m:] = zm  # one downlink slot per loop
        z_parts.append(m_pmf[m] * shifted)
    l_max = max(len(p) for p in z_parts)
    z = np.zeros(l_max)
    for part in z_parts:
        z[:len(part)] += part
    tail = 1.0 - math.fsum(z)
    if tail > eps_tail:
        raise TruncationError(
            f"achieved tail mass {tail:.3e} exceeds eps_tail={eps_tail}")
    return CycleDistributions(z=z, p_open_human=float(p_open_human),
                              m_max=m_max, tail_mass=float(max(tail, 0.0)),
                              sh_pmf=w, chain=chain, eps_tail=eps_tail,
                              sh_sums=sh_sums, lag_sums=lag_sums,
                              lag_init=lag_init)
