"""Hot Monte Carlo kernels with a numba fast path and a numpy fallback.

The mechanism-level simulations that back the analytic distributions
(uplink HARQ episodes, full human-loop cycles, per-slot machine loops) are
the only runtime hot spots.  Each kernel exists twice: a scalar slot-level
version compiled with numba, and a batched numpy version.  Set
``WHMC_NUMBA=0`` in the environment to force the numpy path; it is also
used automatically when numba is unavailable.

Within one HARQ round the per-attempt failure probabilities are coupled
through a single uniform draw.  The accumulated-decoding failure events
are nested (more attempts never hurt), so comparing one uniform against
the decreasing failure-probability sequence reproduces the marginal
failure law of every attempt count simultaneously.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy import special

LN2 = math.log(2.0)
LOG2E_SQ = (1.0 / LN2) ** 2

SCHEME_TI, SCHEME_CC, SCHEME_IR = 0, 1, 2


def _numba_requested() -> bool:
    return os.environ.get("WHMC_NUMBA", "1").lower() not in ("0", "false",
                                                             "off")


_HAVE_NUMBA = False
if _numba_requested():
    try:
        import numba

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _HAVE_NUMBA = False


def using_numba() -> bool:
    return _HAVE_NUMBA


# ---------------------------------------------------------------------------
# numpy fallback path
# ---------------------------------------------------------------------------

def _eps_np(gains, rate, packet_len):
    cap = np.log2(1.0 + gains)
    disp = (1.0 - (1.0 + gains) ** -2) * LOG2E_SQ
    arg = (cap - rate) / np.sqrt(disp / packet_len)
    return np.clip(0.5 * special.erfc(arg / math.sqrt(2.0)), 0.0, 1.0)


def _round_fail_probs_np(gains, scheme_id, rate, packet_len):
    """Failure probability after each attempt of one round, per row."""
    if scheme_id == SCHEME_TI:
        return np.cumprod(_eps_np(gains, rate, packet_len), axis=1)
    if scheme_id == SCHEME_CC:
        return _eps_np(np.cumsum(gains, axis=1), rate, packet_len)
    cap = np.cumsum(np.log2(1.0 + gains), axis=1)
    disp = np.cumsum((1.0 - (1.0 + gains) ** -2) * LOG2E_SQ, axis=1)
    arg = (cap - rate) / np.sqrt(disp / packet_len)
    return np.clip(0.5 * special.erfc(arg / math.sqrt(2.0)), 0.0, 1.0)


def _episode_batch_np(rng, count, gbar, scheme_id, n_attempts, rate,
                      packet_len):
    """Delays (in slots) of ``count`` independent uplink packet episodes."""
    delays = np.zeros(count, dtype=np.int64)
    active = np.arange(count)
    rounds = 0
    while active.size:
        gains = gbar * rng.exponential(size=(active.size, n_attempts))
        fail = _round_fail_probs_np(gains, scheme_id, rate, packet_len)
        u = rng.random(active.size)
        success = u[:, None] >= fail
        hit = success.any(axis=1)
        first = np.argmax(success, axis=1)
        delays[active[hit]] += first[hit] + 1
        delays[active[~hit]] += n_attempts
        active = active[~hit]
        rounds += 1
        if rounds > 100_000:
            raise RuntimeError("uplink episodes failed to terminate")
    return delays


def _sh_episodes_np(n, gbar, scheme_id, n_attempts, rate, packet_len, seed):
    rng = np.random.default_rng(seed)
    return _episode_batch_np(rng, n, gbar, scheme_id, n_attempts, rate,
                             packet_len)


def _cycles_np(n_cycles, gbar_sh, scheme_id, n_attempts, gbar_ha,
               lag_values, lag_rows_cum, lag_init_cum, rate, packet_len,
               seed, max_loops_per_cycle):
    rng = np.random.default_rng(seed)
    lengths = np.full(n_cycles, -1, dtype=np.int64)
    loop_counts = np.zeros(n_cycles, dtype=np.int64)
    slots = np.zeros(n_cycles, dtype=np.int64)
    loops = np.zeros(n_cycles, dtype=np.int64)
    state = np.searchsorted(lag_init_cum, rng.random(n_cycles), side="left")
    active = np.arange(n_cycles)
    while active.size:
        d = _episode_batch_np(rng, active.size, gbar_sh, scheme_id,
                              n_attempts, rate, packet_len)
        u = rng.random(active.size)
        rows = lag_rows_cum[state[active]]
        state[active] = (u[:, None] > rows).sum(axis=1)
        lag = lag_values[state[active]]
        eps_ha = _eps_np(gbar_ha * rng.exponential(size=active.size), rate,
                         packet_len)
        closed = rng.random(active.size) >= eps_ha
        slots[active] += d + lag + 1
        loops[active] += 1
        done = active[closed]
        lengths[done] = slots[done]
        loop_counts[done] = loops[done]
        over = loops[active] >= max_loops_per_cycle
        active = active[~closed & ~over]
    return lengths, loop_counts


def _machine_slots_np(n_slots, gbar_sc, gbar_ca, rate, packet_len, seed):
    rng = np.random.default_rng(seed)
    sc_ok = rng.random(n_slots) >= _eps_np(
        gbar_sc * rng.exponential(size=n_slots), rate, packet_len)
    # downlink only attempted when the uplink got through
    n_up = int(sc_ok.sum())
    ca_ok = rng.random(n_up) >= _eps_np(
        gbar_ca * rng.exponential(size=n_up), rate, packet_len)
    return int(ca_ok.sum())


# ---------------------------------------------------------------------------
# numba fast path
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _eps_nb(gain, rate, packet_len):
        if gain <= 0.0:
            return 1.0
        cap = math.log(1.0 + gain) / LN2
        disp = (1.0 - 1.0 / ((1.0 + gain) * (1.0 + gain))) * LOG2E_SQ
        arg = (cap - rate) / math.sqrt(disp / packet_len)
        q = 0.5 * math.erfc(arg / math.sqrt(2.0))
        if q < 0.0:
            return 0.0
        if q > 1.0:
            return 1.0
        return q

    @numba.njit(cache=True)
    def _episode_nb(gbar, scheme_id, n_attempts, rate, packet_len):
        """One uplink packet episode; returns its delay in slots."""
        delay = 0
        while True:
            u = np.random.random()
            acc_gain = 0.0
            acc_cap = 0.0
            acc_disp = 0.0
            fail_prev = 1.0
            for r in range(1, n_attempts + 1):
                g = gbar * np.random.exponential()
                if scheme_id == SCHEME_TI:
                    fail = fail_prev * _eps_nb(g, rate, packet_len)
                    fail_prev = fail
                elif scheme_id == SCHEME_CC:
                    acc_gain += g
                    fail = _eps_nb(acc_gain, rate, packet_len)
                else:
                    acc_cap += math.log(1.0 + g) / LN2
                    acc_disp += (1.0 - 1.0 / ((1.0 + g) * (1.0 + g))) \
                        * LOG2E_SQ
                    arg = (acc_cap - rate) / math.sqrt(acc_disp / packet_len)
                    fail = 0.5 * math.erfc(arg / math.sqrt(2.0))
                delay += 1
                if u >= fail:
                    return delay

    @numba.njit(cache=True)
    def _sh_episodes_nb(n, gbar, scheme_id, n_attempts, rate, packet_len,
                        seed):
        np.random.seed(seed)
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            out[i] = _episode_nb(gbar, scheme_id, n_attempts, rate,
                                 packet_len)
        return out

    @numba.njit(cache=True)
    def _cycles_nb(n_cycles, gbar_sh, scheme_id, n_attempts, gbar_ha,
                   lag_values, lag_rows_cum, lag_init_cum, rate, packet_len,
                   seed, max_loops_per_cycle):
        np.random.seed(seed)
        lengths = np.full(n_cycles, -1, dtype=np.int64)
        loop_counts = np.zeros(n_cycles, dtype=np.int64)
        u0 = np.random.random()
        state = 0
        for j in range(len(lag_init_cum)):
            if u0 <= lag_init_cum[j]:
                state = j
                break
        for c in range(n_cycles):
            slots = 0
            loops = 0
            while True:
                slots += _episode_nb(gbar_sh, scheme_id, n_attempts, rate,
                                     packet_len)
                u = np.random.random()
                row = lag_rows_cum[state]
                nxt = len(row) - 1
                for j in range(len(row)):
                    if u <= row[j]:
                        nxt = j
                        break
                state = nxt
                slots += lag_values[state]
                slots += 1  # downlink attempt slot
                loops += 1
                g = gbar_ha * np.random.exponential()
                if np.random.random() >= _eps_nb(g, rate, packet_len):
                    lengths[c] = slots
                    loop_counts[c] = loops
                    break
                if loops >= max_loops_per_cycle:
                    break
        return lengths, loop_counts

    @numba.njit(cache=True)
    def _machine_slots_nb(n_slots, gbar_sc, gbar_ca, rate, packet_len, seed):
        np.random.seed(seed)
        closed = 0
        for _ in range(n_slots):
            g = gbar_sc * np.random.exponential()
            if np.random.random() < _eps_nb(g, rate, packet_len):
                continue
            g = gbar_ca * np.random.exponential()
            if np.random.random() >= _eps_nb(g, rate, packet_len):
                closed += 1
        return closed


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def sh_episode_delays(n: int, gbar: float, scheme_id: int, n_attempts: int,
                      rate: float, packet_len: float, seed: int,
                      force_numpy: bool = False) -> np.ndarray:
    """Simulate n independent uplink packet episodes; delays in slots."""
    if _HAVE_NUMBA and not force_numpy:
        return _sh_episodes_nb(n, gbar, scheme_id, n_attempts, rate,
                               packet_len, seed)
    return _sh_episodes_np(n, gbar, scheme_id, n_attempts, rate, packet_len,
                           seed)


def cycle_samples(n_cycles: int, gbar_sh: float, scheme_id: int,
                  n_attempts: int, gbar_ha: float, lag_values: np.ndarray,
                  lag_rows_cum: np.ndarray, lag_init_cum: np.ndarray,
                  rate: float, packet_len: float, seed: int,
                  max_loops_per_cycle: int = 1_000_000,
                  force_numpy: bool = False):
    """Simulate closed-loop cycles; returns (lengths, loop counts).

    Entries of -1 in the lengths mark cycles that hit the loop cap.
    """
    args = (n_cycles, gbar_sh, scheme_id, n_attempts, gbar_ha,
            np.asarray(lag_values, dtype=np.int64),
            np.asarray(lag_rows_cum, dtype=np.float64),
            np.asarray(lag_init_cum, dtype=np.float64),
            rate, packet_len, seed, max_loops_per_cycle)
    if _HAVE_NUMBA and not force_numpy:
        return _cycles_nb(*args)
    return _cycles_np(*args)


def machine_closed_count(n_slots: int, gbar_sc: float, gbar_ca: float,
                         rate: float, packet_len: float, seed: int,
                         force_numpy: bool = False) -> int:
    """Count closed machine loops over n_slots independent slots."""
    if _HAVE_NUMBA and not force_numpy:
        return int(_machine_slots_nb(n_slots, gbar_sc, gbar_ca, rate,
                                     packet_len, seed))
    return _machine_slots_np(n_slots, gbar_sc, gbar_ca, rate, packet_len,
                             seed)
