"""Cart-pole case study: plant, policies, cost, and gain estimation.

A pole balances on a cart that sometimes carries an extra weight the
machine controller does not know about.  The machine applies a force
targeting a geometric decay of the pole angle; the human's only job is to
command removal of the weight when it is observed.  State vector layout:
``[x, x_dot, theta, theta_dot, m_c]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, InsufficientDataError, \
    NumericsError
from .stability import LyapunovGains

log = logging.getLogger(__name__)

IDX_X, IDX_XDOT, IDX_THETA, IDX_THETADOT, IDX_MC = range(5)

CASE_KEYS = (1, 2, 3, 4)


@dataclass(frozen=True)
class CartPoleState:
    """Named view of the five-element state vector."""

    x: float
    x_dot: float
    theta: float
    theta_dot: float
    m_c: float

    @classmethod
    def from_array(cls, state: np.ndarray) -> "CartPoleState":
        return cls(*(float(v) for v in state))

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.x_dot, self.theta, self.theta_dot,
                         self.m_c])


@dataclass(frozen=True)
class CartPoleParams:
    pole_mass: float = 2.0
    cart_mass: float = 10.0
    gravity: float = 9.8
    pole_len: float = 6.0
    pole_damping: float = 0.1
    cart_damping: float = 0.1
    ts: float = 0.05
    eta: float = 0.7
    weight_kg: float = 5.0
    weight_reappear_prob: float = 0.02
    force_limit: float = 1e4
    v_threshold: float = 0.05

    def __post_init__(self):
        for name in ("pole_mass", "cart_mass", "gravity", "pole_len",
                     "ts", "weight_kg", "force_limit", "v_threshold"):
            if not getattr(self, name) > 0:
                raise DomainError(f"CartPoleParams.{name} must be > 0")
        if self.pole_damping < 0 or self.cart_damping < 0:
            raise DomainError("damping coefficients must be >= 0")
        if not 0.0 < self.eta < 1.0:
            raise DomainError("eta must be in (0, 1)")
        if not 0.0 <= self.weight_reappear_prob <= 1.0:
            raise DomainError("weight_reappear_prob must be in [0, 1]")

    @property
    def inertia(self) -> float:
        """Moment of inertia of the end-concentrated pole about its centre."""
        return self.pole_mass * self.pole_len ** 2 / 4.0


def initial_state(params: CartPoleParams | None = None) -> np.ndarray:
    weight = 5.0 if params is None else params.weight_kg
    return np.array([0.0, 0.0, math.pi / 6.0, 0.0, weight])


def step_dynamics(state: np.ndarray, u_m: float, u_h: float,
                  weight_arrival: float,
                  params: CartPoleParams) -> np.ndarray:
    """Advance the plant one sampling period.

    The two coupled dynamic equations (pendulum rotation and cart force
    balance) are solved as a 2x2 linear system for the accelerations; the
    velocities integrate by explicit Euler, and positions use the updated
    velocities (semi-implicit in the angle, which is what the angle-decay
    policy inverts).  The on-cart weight changes only through the human
    removal command while present, or through ``weight_arrival`` when
    absent, and is clamped to [0, weight_kg].
    """
    p = params
    x, xd, th, thd, mc = state
    sin_th = math.sin(th)
    cos_th = math.cos(th)
    a11 = 2.0 * p.inertia + p.pole_mass * p.pole_len ** 2
    a12 = p.pole_mass * p.pole_len * cos_th
    a22 = p.cart_mass + p.pole_mass + mc
    b1 = 2.0 * p.pole_mass * p.gravity * p.pole_len * sin_th \
        - 2.0 * p.pole_damping * thd
    b2 = p.pole_mass * p.pole_len * sin_th * thd ** 2 \
        - p.cart_damping * xd + u_m
    det = a11 * a22 - a12 * a12
    if det <= 0.0:
        raise NumericsError(f"singular mass matrix (det={det}) at theta={th}")
    thdd = (b1 * a22 - a12 * b2) / det
    xdd = (a11 * b2 - a12 * b1) / det
    thd_new = thd + p.ts * thdd
    th_new = th + p.ts * thd_new
    xd_new = xd + p.ts * xdd
    x_new = x + p.ts * xd_new
    if mc != 0.0:
        mc_new = mc + u_h
    else:
        mc_new = mc + weight_arrival
    mc_new = min(max(mc_new, 0.0), p.weight_kg)
    return np.array([x_new, xd_new, th_new, thd_new, mc_new])


def machine_policy(state: np.ndarray, params: CartPoleParams) -> float:
    """Force that drives the angle to eta * theta in one step.

    Derived by inverting the angle dynamics with the on-cart weight taken
    as zero (it is unknown to the controller).  Near the horizontal pole
    configuration the inversion is singular; the force is then clamped to
    the actuator limit and the event logged.
    """
    p = params
    x, xd, th, thd, _ = state
    sin_th = math.sin(th)
    cos_th = math.cos(th)
    m_tot = p.cart_mass + p.pole_mass
    ml = p.pole_mass * p.pole_len
    gamma = m_tot * (2.0 * p.inertia + p.pole_mass * p.pole_len ** 2) \
        - (ml * cos_th) ** 2
    saturate = abs(cos_th) < 1e-6
    if saturate:
        cos_th = math.copysign(1e-6, cos_th if cos_th != 0.0 else 1.0)
    u = (2.0 * p.pole_mass * p.gravity * p.pole_len * sin_th * m_tot
         / (ml * cos_th)
         - 2.0 * p.pole_damping * thd * m_tot / (ml * cos_th)
         + p.cart_damping * xd
         - ml * thd ** 2 * sin_th
         - (p.eta - 1.0) * th * gamma / (p.ts ** 2 * ml * cos_th)
         + thd * gamma / (p.ts * ml * cos_th))
    if saturate:
        log.warning("machine policy saturated near cos(theta)=0 "
                    "(theta=%.6f); clamping force", th)
        return float(min(max(u, -p.force_limit), p.force_limit))
    return float(u)


def human_policy(observed: np.ndarray) -> float:
    """Removal command for the weight seen in the (possibly stale) state."""
    return float(-observed[IDX_MC])


def cost(state: np.ndarray, penalty_diag=None) -> float:
    """Quadratic state cost x^T P x with a diagonal penalty.

    The case-study default penalizes only the pole angle.
    """
    state = np.asarray(state, dtype=float)
    if penalty_diag is None:
        penalty_diag = np.zeros(len(state))
        penalty_diag[IDX_THETA] = 1.0
    p = np.asarray(penalty_diag, dtype=float)
    if p.ndim == 2:
        if np.any(p != np.diag(np.diag(p))):
            raise ConfigError("penalty matrix must be diagonal")
        p = np.diag(p)
    if p.shape != state.shape or np.any(p < 0):
        raise ConfigError("penalty diagonal must be non-negative and match "
                          "the state size")
    return float(state @ (p * state))


def lyapunov_v(theta_or_state, threshold: float = 0.05) -> float:
    """Thresholded angle magnitude: |theta| when at least ``threshold``.

    The dead band keeps the uncontrolled angular velocity from polluting
    the cost ratios once the angle has effectively reached zero.
    """
    arr = np.asarray(theta_or_state, dtype=float)
    theta = float(arr if arr.ndim == 0 else arr[IDX_THETA])
    mag = abs(theta)
    return mag if mag >= threshold else 0.0


@dataclass
class CartPolePlant:
    """Plant adapter implementing the simulator's behavioural interface."""

    params: CartPoleParams = field(default_factory=CartPoleParams)
    start_with_weight: bool = True

    def initial_state(self) -> np.ndarray:
        state = initial_state(self.params)
        if not self.start_with_weight:
            state[IDX_MC] = 0.0
        return state

    def observe(self, state: np.ndarray) -> np.ndarray:
        return state.copy()

    def sample_disturbance(self, rng: np.random.Generator) -> float:
        """Weight arrival draw; consumed every step to keep streams aligned."""
        hit = rng.random() < self.params.weight_reappear_prob
        return self.params.weight_kg if hit else 0.0

    def step(self, state, u_h, u_m, disturbance) -> np.ndarray:
        return step_dynamics(state, u_m, u_h, disturbance, self.params)

    def machine_control(self, state) -> float:
        return machine_policy(state, self.params)

    def human_control(self, observed) -> float:
        return human_policy(observed)


def ratio_datasets_from_traces(traces, threshold: float = 0.05) -> dict:
    """Case-labelled (V(t), V(t+1)) pairs pooled from simulation traces."""
    datasets = {k: [] for k in CASE_KEYS}
    for trace in traces:
        records = trace.records
        for cur, nxt in zip(records[:-1], records[1:]):
            v0 = lyapunov_v(cur.state, threshold)
            v1 = lyapunov_v(nxt.state, threshold)
            datasets[cur.case].append((v0, v1))
    return datasets


def estimate_gains(case_datasets: dict,
                   threshold: float = 0.05) -> LyapunovGains:
    """Worst-case one-step cost ratios per loop-closure case.

    Each case's gain is the maximum of V(t+1)/V(t) over its dataset,
    using only steps with V(t) > 0.
    """
    estimates = {}
    for case in CASE_KEYS:
        pairs = case_datasets.get(case, [])
        ratios = [v1 / v0 for v0, v1 in pairs if v0 > 0.0]
        if not ratios:
            raise InsufficientDataError(
                f"case {case} has no steps with positive cost; cannot "
                "estimate its gain")
        estimates[case] = max(ratios)
    return LyapunovGains(alpha_hm=estimates[1], alpha_m=estimates[2],
                         alpha_h=estimates[3], alpha=estimates[4])
