"""Shared orchestration: config objects in, verdicts and scenarios out.

Used by the command-line interface, the experiment server, and the
acceptance suite so every entry point computes through the same path.
"""

from __future__ import annotations

import numpy as np

from . import cartpole, cycledist, harq, linkmodel, simkernel, stability
from .config import AppConfig
from .errors import ConfigError
from .humanmodel import LagChain
from .stability import LyapunovGains, StabilityVerdict

REGIMES = ("collab", "machine", "human", "error-free")


def open_machine_prob(cfg: AppConfig) -> float:
    return linkmodel.open_machine_loop_prob(cfg.links["sc"], cfg.links["ca"],
                                            cfg.code)


def open_human_prob(cfg: AppConfig) -> float:
    return cycledist.open_human_loop_prob(cfg.links["ha"], cfg.code)


def sh_delay(cfg: AppConfig) -> harq.ShDelayPmf:
    return harq.sh_delay_pmf(cfg.harq, cfg.links["sh"],
                             eps_tail=cfg.analysis.tail_eps,
                             mc_budget=cfg.analysis.ir_mc_budget,
                             master_seed=cfg.sim.master_seed)


def interval_dist(cfg: AppConfig,
                  chain: LagChain | None = None) -> cycledist.CycleDistributions:
    chain = cfg.chain if chain is None else chain
    return cycledist.interval_pmf(sh_delay(cfg), chain, open_human_prob(cfg),
                                  eps_tail=cfg.analysis.tail_eps)


def verdict_for_regime(cfg: AppConfig, regime: str,
                       gains: LyapunovGains | None = None,
                       chain: LagChain | None = None) -> StabilityVerdict:
    """Stability verdict for one operating regime.

    ``gains`` and ``chain`` default to the configured values; estimation
    pipelines pass their own.
    """
    gains = cfg.gains if gains is None else gains
    chain = cfg.chain if chain is None else chain
    if gains is None:
        raise ConfigError("no Lyapunov gains available: configure a 'gains' "
                          "section or supply an estimates report")
    if regime == "collab":
        return stability.collab_lhs(gains, open_machine_prob(cfg),
                                      interval_dist(cfg, chain))
    if regime == "machine":
        return stability.machine_only_lhs(gains, open_machine_prob(cfg))
    if regime == "human":
        return stability.human_only_lhs(gains, interval_dist(cfg, chain))
    if regime == "error-free":
        return stability.error_free_lhs(gains, chain)
    raise ConfigError(f"unknown regime {regime!r}; expected one of {REGIMES}")


def build_plant(cfg: AppConfig):
    if cfg.plant.kind == "cartpole":
        return cartpole.CartPolePlant(
            params=cartpole.CartPoleParams(**cfg.plant.params))
    if cfg.plant.kind == "static":
        return StaticPlant()
    raise ConfigError(f"unknown plant kind {cfg.plant.kind!r}")


def build_scenario(cfg: AppConfig, machine_enabled: bool = True,
                   human_enabled: bool = True, seed: int | None = None,
                   horizon: int | None = None,
                   plant=None) -> simkernel.Scenario:
    return simkernel.Scenario(
        sc=cfg.links["sc"], ca=cfg.links["ca"], sh=cfg.links["sh"],
        ha=cfg.links["ha"], code=cfg.code, harq=cfg.harq, chain=cfg.chain,
        plant=build_plant(cfg) if plant is None else plant,
        horizon=cfg.sim.horizon_steps if horizon is None else horizon,
        master_seed=cfg.sim.master_seed if seed is None else seed,
        machine_enabled=machine_enabled, human_enabled=human_enabled)


class StaticPlant:
    """Inert plant: state stays at zero whatever the inputs do."""

    def initial_state(self):
        return np.zeros(5)

    def observe(self, state):
        return state.copy()

    def sample_disturbance(self, rng):
        rng.random()
        return 0.0

    def step(self, state, u_h, u_m, disturbance):
        return state.copy()

    def machine_control(self, state):
        return 0.0

    def human_control(self, observed):
        return 0.0
