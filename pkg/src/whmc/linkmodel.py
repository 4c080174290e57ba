"""Wireless link primitives.

Deterministic link budgets with free-space path loss, Rayleigh block-fading
SNR sampling, the normal-approximation decoding error probability for short
packets, and fading-averaged error expectations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import DomainError, NumericsError

SPEED_OF_LIGHT = 3.0e8
_LOG2E_SQ = math.log2(math.e) ** 2


@dataclass(frozen=True)
class LinkBudget:
    """Deterministic parameters of a single wireless link.

    Powers are linear milliwatts, frequency in Hz, distance in metres.
    ``pathloss_exp`` may be zero (no distance dependence); everything else
    must be strictly positive.
    """

    antenna_gain: float
    carrier_freq_hz: float
    distance_m: float
    pathloss_exp: float
    tx_power_mw: float
    noise_power_mw: float

    def __post_init__(self):
        for name in ("antenna_gain", "carrier_freq_hz", "distance_m",
                     "tx_power_mw", "noise_power_mw"):
            if not getattr(self, name) > 0:
                raise DomainError(f"LinkBudget.{name} must be > 0")
        if self.pathloss_exp < 0:
            raise DomainError("LinkBudget.pathloss_exp must be >= 0")

    @property
    def mean_snr(self) -> float:
        """Average linear SNR at the receiver."""
        return mean_channel_gain(self) * self.tx_power_mw / self.noise_power_mw


@dataclass(frozen=True)
class CodeConfig:
    """Short-packet code: payload size in bits and packet length in symbols."""

    payload_bits: float
    packet_len: float

    def __post_init__(self):
        if not self.payload_bits > 0:
            raise DomainError("CodeConfig.payload_bits must be > 0")
        if not self.packet_len > 0:
            raise DomainError("CodeConfig.packet_len must be > 0")

    @property
    def rate(self) -> float:
        """Code rate in bits per symbol."""
        return self.payload_bits / self.packet_len


def mean_channel_gain(budget: LinkBudget) -> float:
    """Average power gain of the link under free-space path loss."""
    wavelength_term = SPEED_OF_LIGHT / (
        4.0 * math.pi * budget.carrier_freq_hz * budget.distance_m
    )
    return budget.antenna_gain * wavelength_term ** budget.pathloss_exp


def sample_snr(budget: LinkBudget, rng: np.random.Generator, size=None):
    """Draw instantaneous linear SNR(s) under Rayleigh block fading.

    Power gains are i.i.d. Exp(1) across slots; the caller owns the RNG
    stream, one stream per logical noise source.
    """
    return budget.mean_snr * rng.exponential(size=size)


def shannon_capacity(snr):
    return np.log2(1.0 + np.asarray(snr, dtype=float))


def channel_dispersion(snr):
    snr = np.asarray(snr, dtype=float)
    return (1.0 - (1.0 + snr) ** -2) * _LOG2E_SQ


def qfunc(x):
    """Gaussian tail probability, evaluated through erfc for tail accuracy."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def decode_error_prob(snr, code: CodeConfig):
    """Packet decoding error probability at a given SNR.

    Normal approximation with Shannon capacity and channel dispersion,
    clamped to [0, 1].  At zero SNR the dispersion vanishes and the rate
    cannot be supported, so the error probability is defined as 1 (the
    continuous limit from above).
    """
    arr = np.asarray(snr, dtype=float)
    if np.any(arr < 0):
        raise DomainError("SNR must be non-negative")
    out = np.ones_like(arr)
    pos = arr > 0
    if np.any(pos):
        g = arr[pos]
        margin = shannon_capacity(g) - code.rate
        scale = np.sqrt(channel_dispersion(g) / code.packet_len)
        out[pos] = np.clip(qfunc(margin / scale), 0.0, 1.0)
    if np.isscalar(snr) or np.ndim(snr) == 0:
        return float(out)
    return out


def expected_error_prob(budget: LinkBudget, code: CodeConfig,
                        rel_tol: float = 1e-6) -> float:
    """Fading-averaged decoding error probability E[eps(gamma)].

    The expectation over gamma = mean_snr * Exp(1) is computed by adaptive
    quadrature after the substitution u = exp(-gamma/mean_snr), which maps
    the exponential density to Lebesgue measure on (0, 1).
    """
    gbar = budget.mean_snr
    threshold = 2.0 ** code.rate - 1.0  # SNR where capacity equals the rate

    def integrand(u):
        return decode_error_prob(-gbar * math.log(u), code)

    u_break = math.exp(-threshold / gbar)
    points = [u_break] if 0.0 < u_break < 1.0 else None
    value, abserr = integrate.quad(integrand, 0.0, 1.0, points=points,
                                   epsabs=1e-13, epsrel=rel_tol, limit=200)
    if abserr > max(rel_tol * abs(value), 1e-10):
        raise NumericsError(
            f"expected_error_prob quadrature did not converge: value={value}, "
            f"abserr={abserr}, mean_snr={gbar}, rate={code.rate}"
        )
    return float(min(max(value, 0.0), 1.0))


def open_machine_loop_prob(sc: LinkBudget, ca: LinkBudget,
                           code: CodeConfig) -> float:
    """Probability that a machine control loop stays open in a slot.

    The loop closes only when both the sensor uplink and the actuator
    downlink succeed; fading on the two links is independent.
    """
    e_sc = expected_error_prob(sc, code)
    e_ca = expected_error_prob(ca, code)
    return 1.0 - (1.0 - e_sc) * (1.0 - e_ca)
