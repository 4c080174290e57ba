import numpy as np
import pytest

from whmc import (CodeConfig, HarqConfig, HarqScheme, LagChain, LinkBudget,
                  LyapunovGains)
from whmc.config import dbm_to_mw

TX_MW = dbm_to_mw(23.0)
NOISE_MW = dbm_to_mw(-70.0)


def table1_budget(distance_m: float) -> LinkBudget:
    return LinkBudget(antenna_gain=4.0, carrier_freq_hz=915e6,
                      distance_m=distance_m, pathloss_exp=2.9,
                      tx_power_mw=TX_MW, noise_power_mw=NOISE_MW)


def perfect_budget() -> LinkBudget:
    # mean SNR so large that the decode error underflows to zero
    return LinkBudget(antenna_gain=1.0, carrier_freq_hz=915e6,
                      distance_m=1.0, pathloss_exp=0.0,
                      tx_power_mw=1e12, noise_power_mw=1.0)


def dead_budget() -> LinkBudget:
    # mean SNR so small that every packet is lost
    return LinkBudget(antenna_gain=1.0, carrier_freq_hz=915e6,
                      distance_m=1.0, pathloss_exp=0.0,
                      tx_power_mw=1e-12, noise_power_mw=1.0)


@pytest.fixture(scope="session")
def code():
    return CodeConfig(payload_bits=3000, packet_len=1500)


@pytest.fixture(scope="session")
def b40():
    return table1_budget(40.0)


@pytest.fixture(scope="session")
def b45():
    return table1_budget(45.0)


@pytest.fixture(scope="session")
def ir3(code):
    return HarqConfig(scheme=HarqScheme.IR, max_attempts=3, code=code)


@pytest.fixture(scope="session")
def est_chain():
    """Two-state lag chain estimated in the case study (states in slots)."""
    return LagChain(states=np.array([3, 7]),
                    matrix=np.array([[0.2576, 0.7424], [0.4404, 0.5596]]))


def chain_on(states, matrix) -> LagChain:
    return LagChain(states=np.asarray(states, dtype=np.int64),
                    matrix=np.asarray(matrix, dtype=float))


@pytest.fixture(scope="session")
def chain_prolonged():
    return chain_on([5, 25], [[0.9, 0.1], [0.1, 0.9]])


@pytest.fixture(scope="session")
def chain_random():
    return chain_on([5, 25], [[0.5, 0.5], [0.5, 0.5]])


@pytest.fixture(scope="session")
def chain_variable():
    return chain_on([5, 25], [[0.1, 0.9], [0.9, 0.1]])


@pytest.fixture(scope="session")
def reference_gains():
    return LyapunovGains(alpha_hm=0.5271, alpha_m=0.7949, alpha_h=1.0196,
                         alpha=1.0134)


@pytest.fixture(scope="session")
def w45_ir3(ir3, b45):
    from whmc import sh_delay_pmf
    return sh_delay_pmf(ir3, b45, master_seed=20240921)


@pytest.fixture(scope="session")
def p_open_m(b40, code):
    from whmc import open_machine_loop_prob
    return open_machine_loop_prob(b40, b40, code)


@pytest.fixture(scope="session")
def p_open_h(b45, code):
    from whmc import open_human_loop_prob
    return open_human_loop_prob(b45, code)


@pytest.fixture(scope="session")
def dist_case_study(w45_ir3, est_chain, p_open_h):
    from whmc import interval_pmf
    return interval_pmf(w45_ir3, est_chain, p_open_h)
