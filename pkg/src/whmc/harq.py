"""HARQ retransmission schemes and the sensor-to-human delay distribution.

Covers the accumulated decoding error probability after r attempts for
independent retries (TI), signal combining (CC), and incremental redundancy
(IR), plus the pmf of the uplink delay produced by capped retransmission
rounds that restart after N failed attempts.
"""

from __future__ import annotations

import enum
import math
import threading
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DivergenceError, DomainError
from .linkmodel import (CodeConfig, LinkBudget, decode_error_prob,
                        expected_error_prob, qfunc, shannon_capacity,
                        channel_dispersion)


class HarqScheme(str, enum.Enum):
    TI = "TI"
    CC = "CC"
    IR = "IR"


_SCHEME_IDS = {HarqScheme.TI: 0, HarqScheme.CC: 1, HarqScheme.IR: 2}


@dataclass(frozen=True)
class HarqConfig:
    scheme: HarqScheme
    max_attempts: int
    code: CodeConfig

    def __post_init__(self):
        object.__setattr__(self, "scheme", HarqScheme(self.scheme))
        if self.max_attempts < 1:
            raise DomainError("HarqConfig.max_attempts must be >= 1")


@dataclass(frozen=True)
class ShDelayPmf:
    """Truncated pmf of the uplink delay in slots.

    ``probs[k]`` is the probability of delay k (index 0 unused);
    ``tail_mass`` is the mass beyond the last stored delay.  ``thetas[r]``
    keeps the accumulated error probabilities the pmf was built from
    (index 0 unused), so the pmf can be re-truncated without re-sampling.
    """

    probs: np.ndarray
    tail_mass: float
    thetas: np.ndarray
    max_attempts: int

    @property
    def k_max(self) -> int:
        return len(self.probs) - 1

    def mean(self) -> float:
        return float(np.arange(len(self.probs)) @ self.probs)

    def extended(self, eps_tail: float) -> "ShDelayPmf":
        """Same distribution truncated at tail mass below ``eps_tail``."""
        if self.tail_mass < eps_tail:
            return self
        return _pmf_from_thetas(self.thetas, self.max_attempts, eps_tail)


_theta_cache: dict = {}
_theta_lock = threading.Lock()


def _theta_ir_mc(gbar: float, rate: float, packet_len: float, r: int,
                 mc_budget: int, seed_seq) -> tuple[float, float]:
    """Monte Carlo estimate of the IR accumulated error probability.

    Averages the Q-function of the accumulated mutual information and
    dispersion over ``mc_budget`` i.i.d. fading draws per attempt.
    """
    rng = np.random.default_rng(seed_seq)
    gains = gbar * rng.exponential(size=(mc_budget, r))
    c_sum = shannon_capacity(gains).sum(axis=1)
    v_sum = channel_dispersion(gains).sum(axis=1)
    samples = np.clip(qfunc((c_sum - rate) / np.sqrt(v_sum / packet_len)),
                      0.0, 1.0)
    value = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(mc_budget))
    return value, se


def _theta_cc_quadrature(gbar: float, code: CodeConfig, r: int) -> float:
    """E[eps(S)] where S is the gamma-distributed sum of r fading SNRs."""
    threshold = 2.0 ** code.rate - 1.0
    log_norm = -r * math.log(gbar) - math.lgamma(r)

    def integrand(s):
        if s <= 0.0:
            return 0.0
        pdf = math.exp(log_norm + (r - 1) * math.log(s) - s / gbar)
        return decode_error_prob(s, code) * pdf

    upper = gbar * (r + 40.0 * math.sqrt(r))  # far beyond the gamma bulk
    val1, err1 = integrate.quad(integrand, 0.0, threshold,
                                epsabs=1e-13, epsrel=1e-8, limit=200)
    val2, err2 = integrate.quad(integrand, threshold, upper,
                                epsabs=1e-13, epsrel=1e-8, limit=200)
    return float(min(max(val1 + val2, 0.0), 1.0))


def theta(config: HarqConfig, budget: LinkBudget, r: int,
          mc_budget: int = 1_000_000, master_seed: int = 0,
          se_warn: float = 1e-3) -> float:
    """Fading-averaged decoding error probability after r attempts.

    TI attempts are independent over i.i.d. block fading, so the average
    factorises.  CC combines the received signals, whose summed SNR is
    gamma distributed, and is integrated against that density.  IR has no
    closed form and is estimated by Monte Carlo; results are cached per
    (scheme, mean SNR, r) and the sampling seed is derived from
    ``master_seed`` plus (scheme, r) so reruns are reproducible.
    """
    if not 1 <= r <= config.max_attempts:
        raise DomainError(
            f"attempt count r={r} outside 1..{config.max_attempts}")
    gbar = budget.mean_snr
    key = (config.scheme, gbar, config.code.rate, config.code.packet_len,
           r, mc_budget, master_seed)
    with _theta_lock:
        if key in _theta_cache:
            return _theta_cache[key]
    if r == 1 or config.scheme is HarqScheme.TI:
        value = expected_error_prob(budget, config.code) ** r
    elif config.scheme is HarqScheme.CC:
        value = _theta_cc_quadrature(gbar, config.code, r)
    else:
        seed_seq = np.random.SeedSequence(
            (master_seed, _SCHEME_IDS[config.scheme], r))
        value, se = _theta_ir_mc(gbar, config.code.rate,
                                 config.code.packet_len, r, mc_budget,
                                 seed_seq)
        if se > se_warn:
            warnings.warn(
                f"IR Monte Carlo standard error {se:.2e} exceeds {se_warn:.0e} "
                f"for r={r}; increase mc_budget", stacklevel=2)
    with _theta_lock:
        _theta_cache.setdefault(key, value)
        return _theta_cache[key]


def clear_theta_cache():
    with _theta_lock:
        _theta_cache.clear()


def accumulated_error_probs(config: HarqConfig, budget: LinkBudget,
                            mc_budget: int = 1_000_000,
                            master_seed: int = 0) -> np.ndarray:
    """Theta(1..N) as an array indexed by attempt count (index 0 unused).

    Monte Carlo noise can break the theoretical monotonicity between
    adjacent IR values at very small probabilities; values are clipped to
    be non-increasing so delay pmfs stay non-negative.
    """
    thetas = np.ones(config.max_attempts + 1)
    for r in range(1, config.max_attempts + 1):
        thetas[r] = theta(config, budget, r, mc_budget=mc_budget,
                          master_seed=master_seed)
        thetas[r] = min(thetas[r], thetas[r - 1])
    return thetas


def _pmf_from_thetas(thetas: np.ndarray, n_attempts: int,
                     eps_tail: float) -> ShDelayPmf:
    theta_n = float(thetas[n_attempts])
    if theta_n >= 1.0:
        raise DivergenceError(
            "Theta(N) = 1: the uplink delay is almost surely infinite")
    if theta_n <= 0.0:
        q_max = 1
    else:
        q_max = max(1, math.ceil(math.log(eps_tail) / math.log(theta_n)))
    k_max = q_max * n_attempts
    probs = np.zeros(k_max + 1)
    for k in range(1, k_max + 1):
        q, rem = divmod(k - 1, n_attempts)  # k = q*N + rem + 1
        round_mass = theta_n ** q
        if rem == 0:
            probs[k] = round_mass * (1.0 - thetas[1])
        else:
            probs[k] = round_mass * (thetas[rem] - thetas[rem + 1])
    tail = theta_n ** q_max
    return ShDelayPmf(probs=probs, tail_mass=float(tail),
                      thetas=np.array(thetas, dtype=float),
                      max_attempts=n_attempts)


def sh_delay_pmf(config: HarqConfig, budget: LinkBudget,
                 eps_tail: float = 1e-9, mc_budget: int = 1_000_000,
                 master_seed: int = 0) -> ShDelayPmf:
    """Distribution of the uplink delay under capped HARQ rounds.

    A packet is attempted up to N times; after N failures a fresh packet is
    transmitted and the process restarts.  Success on attempt ``rem`` of
    round q+1 yields delay k = q*N + rem, with probability
    Theta(N)^q * (Theta(rem-1) - Theta(rem)) and Theta(0) = 1.  The pmf is
    truncated once the geometric round-failure bound Theta(N)^q drops
    below ``eps_tail``.
    """
    thetas = accumulated_error_probs(config, budget, mc_budget=mc_budget,
                                     master_seed=master_seed)
    return _pmf_from_thetas(thetas, config.max_attempts, eps_tail)
