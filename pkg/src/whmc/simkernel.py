"""Discrete-time simulator of the dual-loop control system.

One slot per step.  The machine loop (sensor uplink + actuator downlink)
completes within a slot; the human loop runs a capped-HARQ uplink phase,
then a lag countdown drawn from the Markov lag chain, then a single
downlink attempt.  A successful downlink applies the human command at the
first slot of the next loop, so the applied command is computed from a
state exactly one loop-duration old.

The per-step engine drives a pluggable plant and doubles as the Monte
Carlo oracle for every analytic distribution; the plant-free cycle
statistics run on the compiled kernels in :mod:`whmc._kernels`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import _kernels
from .errors import DomainError, StarvationError
from .harq import HarqConfig, _SCHEME_IDS
from .humanmodel import LagChain, stationary
from .linkmodel import CodeConfig, LinkBudget, decode_error_prob, \
    expected_error_prob

STREAM_TAGS = ("sc", "ca", "sh", "ha", "lag", "disturbance")

CASE_BOTH, CASE_MACHINE, CASE_HUMAN, CASE_NEITHER = 1, 2, 3, 4


def source_streams(master_seed: int) -> dict:
    """Independent generators, one per stochastic source.

    Seeds are derived from (master seed, source index), so separate runs
    with the same master seed replay bit-identical draws and different
    sources never share a stream.
    """
    return {tag: np.random.default_rng(
        np.random.SeedSequence((int(master_seed), i)))
        for i, tag in enumerate(STREAM_TAGS)}


def derived_seed(master_seed: int, tag: int) -> int:
    # 32-bit so the value is valid for the kernels' legacy seeding
    return int(np.random.SeedSequence((int(master_seed), int(tag)))
               .generate_state(1, dtype=np.uint32)[0])


class PlantInterface(Protocol):
    """Behavioural contract for plants driven by the simulator."""

    def initial_state(self) -> np.ndarray: ...

    def observe(self, state: np.ndarray) -> np.ndarray: ...

    def sample_disturbance(self, rng: np.random.Generator): ...

    def step(self, state: np.ndarray, u_h: float, u_m: float,
             disturbance) -> np.ndarray: ...

    def machine_control(self, state: np.ndarray) -> float: ...

    def human_control(self, observed: np.ndarray) -> float: ...


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one simulation run."""

    sc: LinkBudget
    ca: LinkBudget
    sh: LinkBudget
    ha: LinkBudget
    code: CodeConfig
    harq: HarqConfig
    chain: LagChain
    plant: PlantInterface | None
    horizon: int
    master_seed: int
    machine_enabled: bool = True
    human_enabled: bool = True
    divergence_cap: float = 1e12
    lag_init: np.ndarray | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise DomainError("horizon must be >= 1")


@dataclass
class TraceRecord:
    t: int
    state: np.ndarray
    u_m: float
    u_h: float
    sc_ok: bool | None
    ca_ok: bool | None
    sh_attempt: bool
    sh_ok: bool
    ha_attempt: bool
    ha_ok: bool
    loop_index: int
    loop_phase: str
    case: int
    human_applied: bool

    def to_json(self) -> str:
        d = dict(self.__dict__)
        d["state"] = [float(x) for x in self.state]
        return json.dumps(d)


@dataclass
class SimTrace:
    records: list
    diverged: bool
    scenario: Scenario

    def cases(self) -> np.ndarray:
        return np.array([r.case for r in self.records], dtype=np.int64)

    def states(self) -> np.ndarray:
        return np.array([r.state for r in self.records])

    def human_applied_steps(self) -> np.ndarray:
        return np.array([r.t for r in self.records if r.human_applied],
                        dtype=np.int64)

    def cycle_lengths(self) -> np.ndarray:
        """Slot counts between consecutive closed human loops."""
        starts = self.human_applied_steps()
        return np.diff(starts)

    def write_ndjson(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(r.to_json() + "\n")


class SimEngine:
    """Slot-by-slot engine; ``step()`` advances one slot and records it."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.streams = source_streams(scenario.master_seed)
        self.plant = scenario.plant
        self.state = None if self.plant is None else self.plant.initial_state()
        self.t = 0
        self.diverged = False
        sn = scenario
        self._mean_snr = {"sc": sn.sc.mean_snr, "ca": sn.ca.mean_snr,
                          "sh": sn.sh.mean_snr, "ha": sn.ha.mean_snr}
        self._scheme_id = _SCHEME_IDS[sn.harq.scheme]
        self._n_attempts = sn.harq.max_attempts
        init = stationary(sn.chain) if sn.lag_init is None else \
            np.asarray(sn.lag_init, dtype=float)
        self._lag_cum_init = np.cumsum(init)
        self._lag_cum_rows = np.cumsum(sn.chain.matrix, axis=1)
        self._lag_state = int(np.searchsorted(
            self._lag_cum_init, self.streams["lag"].random(), side="left"))
        self._loop_index = 0
        self._phase = "start"
        self._pending_human: float | None = None
        self._loop_sensed = None
        self._loop_lag = 0
        self._lag_remaining = 0
        self._ep_u = 0.0
        self._ep_attempt = 0
        self._ep_acc_gain = 0.0
        self._ep_acc_cap = 0.0
        self._ep_acc_disp = 0.0
        self._ep_fail_prev = 1.0
        self._loop_tau_sh = 0

    # -- channel draws ----------------------------------------------------

    def _attempt(self, tag: str):
        """(snr, success) for a single packet on link ``tag``."""
        rng = self.streams[tag]
        snr = self._mean_snr[tag] * rng.exponential()
        eps = decode_error_prob(snr, self.scenario.code)
        return snr, bool(rng.random() >= eps)

    def _episode_reset(self):
        self._ep_u = float(self.streams["sh"].random())
        self._ep_attempt = 0
        self._ep_acc_gain = 0.0
        self._ep_acc_cap = 0.0
        self._ep_acc_disp = 0.0
        self._ep_fail_prev = 1.0

    def _sh_attempt_once(self) -> bool:
        """One uplink HARQ attempt; True when the packet decodes.

        A single uniform per capped round is compared against the
        accumulated failure probability, which reproduces the nested
        failure events of combining receivers.
        """
        code = self.scenario.code
        g = self._mean_snr["sh"] * self.streams["sh"].exponential()
        self._ep_attempt += 1
        scheme = self._scheme_id
        if scheme == _kernels.SCHEME_TI:
            fail = self._ep_fail_prev * decode_error_prob(g, code)
            self._ep_fail_prev = fail
        elif scheme == _kernels.SCHEME_CC:
            self._ep_acc_gain += g
            fail = decode_error_prob(self._ep_acc_gain, code)
        else:
            self._ep_acc_cap += math.log2(1.0 + g)
            self._ep_acc_disp += (1.0 - (1.0 + g) ** -2) * _kernels.LOG2E_SQ
            arg = (self._ep_acc_cap - code.rate) \
                / math.sqrt(self._ep_acc_disp / code.packet_len)
            fail = min(max(0.5 * math.erfc(arg / math.sqrt(2.0)), 0.0), 1.0)
        success = self._ep_u >= fail
        if not success and self._ep_attempt >= self._n_attempts:
            self._episode_reset()
        return bool(success)

    def _begin_loop(self):
        self._loop_index += 1
        self._phase = "sh"
        self._loop_tau_sh = 0
        rng = self.streams["lag"]
        u = float(rng.random())
        self._lag_state = int(np.searchsorted(
            self._lag_cum_rows[self._lag_state], u, side="left"))
        self._loop_lag = int(self.scenario.chain.states[self._lag_state])
        self._loop_sensed = None if self.plant is None else \
            self.plant.observe(self.state)
        self._episode_reset()

    # -- stepping ----------------------------------------------------------

    def step(self) -> TraceRecord:
        sn = self.scenario
        u_h = 0.0
        human_applied = False
        if self._pending_human is not None:
            u_h = self._pending_human
            self._pending_human = None
            human_applied = True

        sc_ok = ca_ok = None
        u_m = 0.0
        if sn.machine_enabled:
            _, sc_ok = self._attempt("sc")
            if sc_ok:
                _, ca_ok = self._attempt("ca")
                if ca_ok and self.plant is not None:
                    u_m = self.plant.machine_control(self.state)

        sh_attempt = sh_ok = ha_attempt = ha_ok = False
        phase_label = "idle"
        if sn.human_enabled:
            if self._phase == "start":
                self._begin_loop()
            phase_label = self._phase
            if self._phase == "sh":
                sh_attempt = True
                self._loop_tau_sh += 1
                sh_ok = self._sh_attempt_once()
                if sh_ok:
                    self._lag_remaining = self._loop_lag
                    self._phase = "lag"
            elif self._phase == "lag":
                self._lag_remaining -= 1
                if self._lag_remaining <= 0:
                    self._phase = "ha"
            elif self._phase == "ha":
                ha_attempt = True
                _, ha_ok = self._attempt("ha")
                if ha_ok and self.plant is not None:
                    self._pending_human = float(
                        self.plant.human_control(self._loop_sensed))
                elif ha_ok:
                    self._pending_human = 0.0
                self._phase = "start"

        machine_closed = bool(sc_ok) and bool(ca_ok)
        if machine_closed and human_applied:
            case = CASE_BOTH
        elif machine_closed:
            case = CASE_MACHINE
        elif human_applied:
            case = CASE_HUMAN
        else:
            case = CASE_NEITHER

        record = TraceRecord(
            t=self.t,
            state=np.array([]) if self.state is None else self.state.copy(),
            u_m=float(u_m), u_h=float(u_h), sc_ok=sc_ok, ca_ok=ca_ok,
            sh_attempt=sh_attempt, sh_ok=sh_ok, ha_attempt=ha_attempt,
            ha_ok=ha_ok, loop_index=self._loop_index,
            loop_phase=phase_label, case=case, human_applied=human_applied,
        )

        if self.plant is not None:
            disturbance = self.plant.sample_disturbance(
                self.streams["disturbance"])
            self.state = self.plant.step(self.state, u_h, u_m, disturbance)
            if not np.all(np.isfinite(self.state)) or \
                    np.linalg.norm(self.state) > sn.divergence_cap:
                self.diverged = True
        self.t += 1
        return record


def run(scenario: Scenario) -> SimTrace:
    """Simulate ``scenario.horizon`` slots (fewer if the plant diverges)."""
    engine = SimEngine(scenario)
    records = []
    for _ in range(scenario.horizon):
        records.append(engine.step())
        if engine.diverged:
            break
    return SimTrace(records=records, diverged=engine.diverged,
                    scenario=scenario)


@dataclass(frozen=True)
class CycleStats:
    """Empirical cycle statistics with attached standard errors."""

    lengths: np.ndarray
    loop_counts: np.ndarray
    pmf: np.ndarray
    p_open_human: float
    p_open_human_se: float
    p_open_machine: float
    p_open_machine_se: float
    mean_length: float
    mean_length_se: float
    n_cycles: int
    total_slots: int


def estimate_cycle_stats(scenario: Scenario, n_cycles: int,
                         force_numpy: bool = False) -> CycleStats:
    """Mechanism-level Monte Carlo of the human-loop cycle structure.

    Runs the plant-free kernels: capped-HARQ uplink episodes, Markov lag
    countdowns and downlink attempts slot by slot, with the machine loop
    sampled over the same number of slots.  Cycle boundaries are the
    closed-human-loop events.
    """
    if n_cycles < 1:
        raise DomainError("n_cycles must be >= 1")
    sn = scenario
    p_h = expected_error_prob(sn.ha, sn.code)
    if p_h >= 1.0 - 1e-12:
        raise StarvationError("the downlink never succeeds; no cycles close")
    init = stationary(sn.chain) if sn.lag_init is None else \
        np.asarray(sn.lag_init, dtype=float)
    lengths, loop_counts = _kernels.cycle_samples(
        n_cycles, sn.sh.mean_snr, _SCHEME_IDS[sn.harq.scheme],
        sn.harq.max_attempts, sn.ha.mean_snr,
        sn.chain.states, np.cumsum(sn.chain.matrix, axis=1),
        np.cumsum(init), sn.code.rate, sn.code.packet_len,
        derived_seed(sn.master_seed, 101), force_numpy=force_numpy)
    if np.any(lengths < 0):
        raise StarvationError("a cycle exhausted its loop budget without "
                              "closing")
    pmf = np.bincount(lengths) / n_cycles
    total_loops = int(loop_counts.sum())
    p_h_hat = (total_loops - n_cycles) / total_loops
    p_h_se = math.sqrt(max(p_h_hat * (1.0 - p_h_hat), 1e-300) / total_loops)
    total_slots = int(lengths.sum())
    closed = _kernels.machine_closed_count(
        total_slots, sn.sc.mean_snr, sn.ca.mean_snr, sn.code.rate,
        sn.code.packet_len, derived_seed(sn.master_seed, 102),
        force_numpy=force_numpy)
    p_m_hat = 1.0 - closed / total_slots
    p_m_se = math.sqrt(max(p_m_hat * (1.0 - p_m_hat), 1e-300) / total_slots)
    mean_l = float(lengths.mean())
    mean_l_se = float(lengths.std(ddof=1) / math.sqrt(n_cycles))
    return CycleStats(lengths=lengths, loop_counts=loop_counts, pmf=pmf,
                      p_open_human=float(p_h_hat),
                      p_open_human_se=float(p_h_se),
                      p_open_machine=float(p_m_hat),
                      p_open_machine_se=float(p_m_se),
                      mean_length=mean_l, mean_length_se=mean_l_se,
                      n_cycles=n_cycles, total_slots=total_slots)


def tv_distance(pmf_a: np.ndarray, pmf_b: np.ndarray) -> float:
    """Total variation distance between two pmfs on the integers."""
    n = max(len(pmf_a), len(pmf_b))
    a = np.zeros(n)
    b = np.zeros(n)
    a[:len(pmf_a)] = pmf_a
    b[:len(pmf_b)] = pmf_b
    # unassigned tail mass counts as disagreement
    extra = abs((1.0 - a.sum()) - (1.0 - b.sum()))
    return 0.5 * (np.abs(a - b).sum() + extra)


def cumulative_cost(trace: SimTrace, cost_fn: Callable) -> np.ndarray:
    """Running sum of a non-negative state cost along one trace."""
    values = np.array([cost_fn(r.state) for r in trace.records], dtype=float)
    if np.any(values < 0):
        raise DomainError("cost function returned a negative value")
    return np.cumsum(values)


def mean_cumulative_cost(traces, cost_fn: Callable) -> np.ndarray:
    """Across-replication mean of the running cost sums."""
    curves = [cumulative_cost(t, cost_fn) for t in traces]
    n = min(len(c) for c in curves)
    return np.mean([c[:n] for c in curves], axis=0)
