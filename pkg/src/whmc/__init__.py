"""Stability toolkit and simulator for dual-loop wireless human-machine
collaborative control systems."""

from .linkmodel import (CodeConfig, LinkBudget, decode_error_prob,
                        expected_error_prob, mean_channel_gain,
                        open_machine_loop_prob, sample_snr)
from .harq import HarqConfig, HarqScheme, ShDelayPmf, sh_delay_pmf, theta
from .humanmodel import (LagChain, LagSumTable, estimate_chain,
                         lag_sum_table, quantize_lags, stationary)
from .cycledist import (CycleDistributions, interval_pmf, loop_count_pmf,
                        open_human_loop_prob, sh_sum_conditional)
from .stability import (BoundaryLine, BoundaryPoint, LyapunovGains,
                        StabilityVerdict, boundary_curve,
                        boundary_linear_hm_h, boundary_linear_m_alpha,
                        error_free_lhs, human_only_lhs, machine_only_lhs,
                        collab_lhs)
from .simkernel import (CycleStats, Scenario, SimTrace, TraceRecord,
                        cumulative_cost, estimate_cycle_stats,
                        mean_cumulative_cost, run, tv_distance)
from .cartpole import (CartPoleParams, CartPolePlant, CartPoleState, cost,
                       estimate_gains, human_policy, lyapunov_v,
                       machine_policy, step_dynamics)
from .config import AppConfig, load_config, parse_config

__version__ = "0.1.0"
