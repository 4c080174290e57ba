"""Closed-loop stochastic stability tests and stability-region boundaries.

The core test bounds the expected cost contraction over one cycle: with
per-slot gain Omega = alpha_m (1 - p_m) + alpha p_m and per-cycle gain
Lambda = alpha_hm (1 - p_m) + alpha_h p_m, the system is stochastically
stable when E[Omega^L] * Lambda < 1, L being the random cycle length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cycledist import CycleDistributions
from .errors import DomainError, NumericsError, TruncationError, \
    UnboundedRegionError
from .humanmodel import LagChain, stationary

STRICT_BAND = 1e-12
_TAIL_GUARD = 1e-6
_EPS_TAIL_FLOOR = 1e-16

GAIN_NAMES = ("alpha_hm", "alpha_m", "alpha_h", "alpha")


@dataclass(frozen=True)
class LyapunovGains:
    """One-step worst-case cost ratios for the four loop-closure cases."""

    alpha_hm: float
    alpha_m: float
    alpha_h: float
    alpha: float

    def __post_init__(self):
        for name in ("alpha_hm", "alpha_m", "alpha_h"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        if not self.alpha > 0:
            raise DomainError("alpha must be > 0")


@dataclass(frozen=True)
class StabilityVerdict:
    lhs: float
    stable: bool
    regime: str
    breakdown: dict = field(default_factory=dict)

    @property
    def band(self) -> str:
        upper = self.breakdown.get("lhs_upper", self.lhs)
        if upper < 1.0 - STRICT_BAND:
            return "stable"
        if self.lhs > 1.0 + STRICT_BAND:
            return "unstable"
        return "boundary"


def _verdict(lhs: float, regime: str, breakdown: dict,
             lhs_upper: float | None = None) -> StabilityVerdict:
    """Verdict with strict-inequality semantics.

    ``stable`` is asserted against the upper bound including any dropped
    truncation mass, so a sum that merely lost its way to 1 through
    truncation is never certified stable.
    """
    upper = lhs if lhs_upper is None else lhs_upper
    breakdown = dict(breakdown)
    breakdown.setdefault("lhs_upper", upper)
    return StabilityVerdict(lhs=float(lhs),
                            stable=bool(upper < 1.0 - STRICT_BAND),
                            regime=regime, breakdown=breakdown)


def _power_moment(base: float, dist: CycleDistributions,
                  guard: float = _TAIL_GUARD):
    """E[base^L] over the truncated cycle pmf with a tail-safety guard.

    For base > 1 the dropped tail is amplified.  The dropped mass is
    bounded by the construction's truncation budget sitting at (or beyond)
    its own quantile, so the distribution is re-truncated until
    base^l(eps) * eps < guard, or a floor on the budget triggers an
    explicit error.  Divergent sums (base times the tail decay rate >= 1)
    hit the same error path.
    """
    if base < 0:
        raise DomainError("base must be >= 0")
    if base == 0.0:
        return 0.0, dist, 0.0
    d = dist
    while True:
        ls = np.arange(len(d.z))
        mask = d.z > 0.0
        terms = np.zeros(len(d.z))
        with np.errstate(over="ignore"):
            terms[mask] = np.exp(ls[mask] * math.log(base)) * d.z[mask]
        value = float(terms.sum())
        if base <= 1.0 or d.tail_mass <= 0.0:
            return value, d, max(d.tail_mass, 0.0)
        # bound the dropped remainder from the observed geometric decay of
        # the weighted tail terms
        nz = np.nonzero(terms > 0.0)[0]
        remainder = math.inf
        if len(nz) >= 8 and math.isfinite(value):
            last = nz[-1]
            k = min(64, max(4, len(nz) // 4))
            ref = nz[-k]
            if terms[last] < terms[ref]:
                ratio = (terms[last] / terms[ref]) ** (1.0 / (last - ref))
                if ratio < 1.0:
                    remainder = terms[last] * ratio / (1.0 - ratio)
        if remainder <= guard * max(1.0, value):
            return value, d, remainder
        next_eps = d.eps_tail * 1e-3
        if next_eps < _EPS_TAIL_FLOOR:
            raise TruncationError(
                f"tail-dominated sum: base={base}, l_max={d.l_max}, "
                f"eps_tail={d.eps_tail:.1e}, remainder~{remainder:.2e}; a "
                "larger l_max (smaller eps_tail) is required")
        d = d.refined(next_eps)


def collab_lhs(gains: LyapunovGains, p_open_machine: float,
                 dist: CycleDistributions) -> StabilityVerdict:
    """Collaborative stability test: E[Omega^L] * Lambda against 1."""
    if not 0.0 <= p_open_machine <= 1.0:
        raise DomainError("p_open_machine must be in [0, 1]")
    p = p_open_machine
    omega = gains.alpha_m * (1.0 - p) + gains.alpha * p
    lam = gains.alpha_hm * (1.0 - p) + gains.alpha_h * p
    moment, used, bound = _power_moment(omega, dist)
    lhs = moment * lam
    return _verdict(lhs, "collaborative", {
        "omega": omega, "lambda": lam, "e_omega_pow_l": moment,
        "p_open_machine": p, "truncation_bound": bound,
        "l_max": used.l_max,
    }, lhs_upper=(moment + bound) * lam)


def error_free_lhs(gains: LyapunovGains, chain: LagChain) -> StabilityVerdict:
    """Perfect-channel special case.

    With no packet loss every loop closes, cycles collapse to one lag draw
    plus the two fixed transmission slots, and the test reduces to
    sum_k alpha_m^(k+1) v_k * alpha_hm < 1 over the stationary lag law.
    """
    v = stationary(chain)
    moment = float(sum(gains.alpha_m ** (int(s) + 1) * vi
                       for s, vi in zip(chain.states, v)))
    lhs = moment * gains.alpha_hm
    return _verdict(lhs, "error-free", {
        "e_alpha_m_pow_l": moment, "stationary": v.tolist(),
    })


def human_only_lhs(gains: LyapunovGains,
                   dist: CycleDistributions) -> StabilityVerdict:
    """Machine loop permanently open: E[alpha^L] * alpha_h against 1."""
    moment, used, bound = _power_moment(gains.alpha, dist)
    lhs = moment * gains.alpha_h
    return _verdict(lhs, "human-only", {
        "e_alpha_pow_l": moment, "alpha_h": gains.alpha_h,
        "truncation_bound": bound, "l_max": used.l_max,
    }, lhs_upper=(moment + bound) * gains.alpha_h)


def machine_only_lhs(gains: LyapunovGains,
                     p_open_machine: float) -> StabilityVerdict:
    """Machine-only test over geometric gaps between closed machine loops.

    Closed form alpha_m (1 - p) / (1 - alpha p); cross-checked against the
    truncated series.  If alpha * p >= 1 the series diverges and the
    verdict reports instability by divergence.
    """
    p = p_open_machine
    if not 0.0 <= p <= 1.0:
        raise DomainError("p_open_machine must be in [0, 1]")
    ap = gains.alpha * p
    if ap >= 1.0:
        return _verdict(math.inf, "machine-only", {
            "divergent": True, "alpha_times_p": ap, "p_open_machine": p,
        })
    lhs = gains.alpha_m * (1.0 - p) / (1.0 - ap)
    if p > 0.0:
        l_cut = max(8, int(math.ceil(math.log(1e-16) / math.log(ap)))
                    if ap > 0 else 8)
        ls = np.arange(1, l_cut + 1)
        series = (gains.alpha_m / gains.alpha) * float(
            (gains.alpha ** ls * (1.0 - p) * p ** (ls - 1)).sum())
    else:
        series = gains.alpha_m
    if abs(series - lhs) > 1e-10 * max(1.0, abs(lhs)):
        raise NumericsError(
            f"closed form {lhs} and truncated series {series} disagree")
    return _verdict(lhs, "machine-only", {
        "divergent": False, "alpha_times_p": ap, "p_open_machine": p,
        "series_check": series,
    })


@dataclass(frozen=True)
class BoundaryLine:
    slope: float
    intercept: float

    def y(self, x: float) -> float:
        return self.slope * x + self.intercept


def boundary_linear_hm_h(gains: LyapunovGains, p_open_machine: float,
                         dist: CycleDistributions) -> BoundaryLine:
    """Exact linear boundary in the (alpha_hm, alpha_h) plane.

    Along the boundary E[Omega^L] is fixed (it depends only on alpha_m and
    alpha), so Lambda = 1 / E[Omega^L] traces the line
    alpha_hm = -p/(1-p) * alpha_h + 1 / (E[Omega^L] (1-p)).
    """
    p = p_open_machine
    if not 0.0 <= p < 1.0:
        raise DomainError("p_open_machine must be in [0, 1)")
    omega = gains.alpha_m * (1.0 - p) + gains.alpha * p
    moment, _, _ = _power_moment(omega, dist)
    return BoundaryLine(slope=-p / (1.0 - p),
                        intercept=1.0 / (moment * (1.0 - p)))


def boundary_linear_m_alpha(gains: LyapunovGains, p_open_machine: float,
                            dist: CycleDistributions) -> BoundaryLine:
    """Linear boundary in the (alpha_m, alpha) plane via the root Omega*.

    E[Omega^L] is strictly increasing in Omega, so the unique Omega* with
    E[Omega*^L] = 1 / Lambda is found by bisection; the boundary is the
    line alpha_m (1-p) + alpha p = Omega*.
    """
    p = p_open_machine
    if not 0.0 <= p < 1.0:
        raise DomainError("p_open_machine must be in [0, 1)")
    lam = gains.alpha_hm * (1.0 - p) + gains.alpha_h * p
    if lam <= 0.0:
        raise DomainError("Lambda must be > 0 to define the boundary")
    target = 1.0 / lam

    def moment_of(om):
        try:
            value, _, _ = _power_moment(om, dist)
        except TruncationError:
            # tail-dominated or divergent: certainly past the target
            return math.inf
        return value

    lo, hi = 0.0, 1.0
    while moment_of(hi) < target:
        hi *= 2.0
        if hi > 1e6:
            raise UnboundedRegionError(
                "no Omega satisfies the boundary equation; region is "
                "unbounded on this side")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if moment_of(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, hi):
            break
    omega_star = 0.5 * (lo + hi)
    return BoundaryLine(slope=-p / (1.0 - p),
                        intercept=omega_star / (1.0 - p))


@dataclass(frozen=True)
class BoundaryPoint:
    x: float
    y: float
    status: str  # "ok", "unbounded", "empty"
    lhs: float


def _lhs_with(gains: LyapunovGains, name: str, value: float,
              p_open_machine: float, dist: CycleDistributions) -> float:
    candidate = replace(gains, **{name: value})
    return collab_lhs(candidate, p_open_machine, dist).lhs


def boundary_curve(pair: tuple[str, str], gains: LyapunovGains,
                   p_open_machine: float, dist: CycleDistributions,
                   grid, lhs_tol: float = 1e-8,
                   y_cap: float = 1e12) -> list[BoundaryPoint]:
    """Numeric stability boundary for any gain pair.

    For each grid value of the first gain, the second gain solving
    lhs = 1 is bracketed and bisected; the lhs is strictly increasing in
    every gain (for p in (0,1)), so the root is unique when it exists.
    Points where even the cap keeps lhs below 1 are flagged unbounded;
    points already unstable at zero are flagged empty.
    """
    name_x, name_y = pair
    for name in (name_x, name_y):
        if name not in GAIN_NAMES:
            raise DomainError(f"unknown gain name {name!r}")
    if name_x == name_y:
        raise DomainError("gain pair must name two different gains")
    points = []
    y_floor = 1e-12 if name_y == "alpha" else 0.0
    for x in grid:
        base = replace(gains, **{name_x: float(x)})

        def f(y):
            try:
                return _lhs_with(base, name_y, y, p_open_machine, dist)
            except TruncationError:
                # tail-dominated sums only happen far past the boundary
                return math.inf

        lhs_lo = f(y_floor)
        if lhs_lo >= 1.0:
            points.append(BoundaryPoint(float(x), 0.0, "empty", lhs_lo))
            continue
        lo, hi = y_floor, max(1.0, y_floor * 2)
        unbounded = False
        while True:
            lhs_hi = f(hi)
            if lhs_hi >= 1.0 or math.isinf(lhs_hi):
                break
            hi *= 2.0
            if hi > y_cap:
                unbounded = True
                break
        if unbounded:
            points.append(BoundaryPoint(float(x), math.nan, "unbounded",
                                        math.nan))
            continue
        lhs_mid = lhs_hi
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            lhs_mid = f(mid)
            if lhs_mid < 1.0:
                lo = mid
            else:
                hi = mid
            if abs(lhs_mid - 1.0) < lhs_tol:
                break
        y = 0.5 * (lo + hi)
        points.append(BoundaryPoint(float(x), float(y), "ok",
                                    float(_lhs_with(base, name_y, y,
                                                    p_open_machine, dist))))
    return points
