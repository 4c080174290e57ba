"""Scenario configuration: one YAML file, units spelled out in key names.

dBm and MHz values are converted to linear milliwatts and Hz exactly once,
here.  Unknown keys anywhere in the file are rejected so typos cannot
silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .harq import HarqConfig, HarqScheme
from .humanmodel import LagChain
from .linkmodel import CodeConfig, LinkBudget
from .stability import LyapunovGains

LINK_KEYS = {
    "sensor_controller": "sc",
    "controller_actuator": "ca",
    "sensor_human": "sh",
    "human_actuator": "ha",
}

_LINK_FIELDS = {"antenna_gain", "carrier_freq_mhz", "distance_m",
                "pathloss_exp", "tx_power_dbm", "noise_power_dbm"}
_TOP_FIELDS = {"links", "code", "harq", "lag_chain", "gains", "plant",
               "sim", "analysis", "estimation", "region", "server"}


def dbm_to_mw(value_dbm: float) -> float:
    return 10.0 ** (value_dbm / 10.0)


def _require(section: dict, name: str, context: str):
    if name not in section:
        raise ConfigError(f"missing required key {name!r} in {context}")
    return section[name]


def _check_keys(section: dict, allowed: set, context: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{context} must be a mapping")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in {context}; allowed: "
            f"{sorted(allowed)}")


@dataclass(frozen=True)
class SimOptions:
    horizon_steps: int = 10_000
    master_seed: int = 20240921


@dataclass(frozen=True)
class AnalysisOptions:
    tail_eps: float = 1e-9
    ir_mc_budget: int = 1_000_000
    oracle_cycles: int = 0


@dataclass(frozen=True)
class EstimationOptions:
    lag_state_set_s: tuple = (0.15, 0.35)


@dataclass(frozen=True)
class RegionOptions:
    pair: tuple = ("alpha_hm", "alpha_h")
    grid_min: float = 0.0
    grid_max: float = 2.0
    grid_points: int = 21


@dataclass(frozen=True)
class ServerOptions:
    tick_rate_hz: float = 20.0
    realtime: bool = True
    plant_reset_every: int = 0


@dataclass(frozen=True)
class PlantOptions:
    kind: str = "cartpole"
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AppConfig:
    links: dict
    code: CodeConfig
    harq: HarqConfig
    chain: LagChain
    gains: LyapunovGains | None
    plant: PlantOptions
    sim: SimOptions
    analysis: AnalysisOptions
    estimation: EstimationOptions
    region: RegionOptions
    server: ServerOptions
    config_hash: str
    raw: dict


def _parse_link(section: dict, context: str) -> LinkBudget:
    _check_keys(section, _LINK_FIELDS, context)
    return LinkBudget(
        antenna_gain=float(_require(section, "antenna_gain", context)),
        carrier_freq_hz=float(_require(section, "carrier_freq_mhz",
                                       context)) * 1e6,
        distance_m=float(_require(section, "distance_m", context)),
        pathloss_exp=float(_require(section, "pathloss_exp", context)),
        tx_power_mw=dbm_to_mw(float(_require(section, "tx_power_dbm",
                                             context))),
        noise_power_mw=dbm_to_mw(float(_require(section, "noise_power_dbm",
                                                context))),
    )


def parse_config(data: dict, source: str = "<memory>") -> AppConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    _check_keys(data, _TOP_FIELDS, source)

    links_raw = _require(data, "links", source)
    _check_keys(links_raw, set(LINK_KEYS), f"{source}:links")
    links = {}
    for long_name, short in LINK_KEYS.items():
        links[short] = _parse_link(_require(links_raw, long_name,
                                            f"{source}:links"),
                                   f"{source}:links.{long_name}")

    code_raw = _require(data, "code", source)
    _check_keys(code_raw, {"payload_bits", "packet_len_symbols"},
                f"{source}:code")
    code = CodeConfig(
        payload_bits=float(_require(code_raw, "payload_bits", "code")),
        packet_len=float(_require(code_raw, "packet_len_symbols", "code")))

    harq_raw = _require(data, "harq", source)
    _check_keys(harq_raw, {"scheme", "max_attempts"}, f"{source}:harq")
    try:
        scheme = HarqScheme(str(_require(harq_raw, "scheme", "harq")))
    except ValueError as exc:
        raise ConfigError(f"harq.scheme must be one of TI, CC, IR: {exc}")
    harq = HarqConfig(scheme=scheme,
                      max_attempts=int(_require(harq_raw, "max_attempts",
                                                "harq")),
                      code=code)

    chain_raw = _require(data, "lag_chain", source)
    _check_keys(chain_raw, {"states_steps", "transition_matrix"},
                f"{source}:lag_chain")
    chain = LagChain(
        states=np.asarray(_require(chain_raw, "states_steps", "lag_chain"),
                          dtype=np.int64),
        matrix=np.asarray(_require(chain_raw, "transition_matrix",
                                   "lag_chain"), dtype=float))

    gains = None
    if "gains" in data:
        gains_raw = data["gains"]
        _check_keys(gains_raw, {"alpha_hm", "alpha_m", "alpha_h", "alpha"},
                    f"{source}:gains")
        gains = LyapunovGains(
            alpha_hm=float(_require(gains_raw, "alpha_hm", "gains")),
            alpha_m=float(_require(gains_raw, "alpha_m", "gains")),
            alpha_h=float(_require(gains_raw, "alpha_h", "gains")),
            alpha=float(_require(gains_raw, "alpha", "gains")))

    plant_raw = data.get("plant", {})
    allowed_plant = {"kind", "weight_reappear_prob", "eta", "weight_kg",
                     "force_limit", "v_threshold"}
    _check_keys(plant_raw, allowed_plant, f"{source}:plant")
    plant_params = {k: float(v) for k, v in plant_raw.items() if k != "kind"}
    plant = PlantOptions(kind=str(plant_raw.get("kind", "cartpole")),
                         params=plant_params)
    if plant.kind not in ("cartpole", "static"):
        raise ConfigError(f"unknown plant kind {plant.kind!r}")

    sim_raw = data.get("sim", {})
    _check_keys(sim_raw, {"horizon_steps", "master_seed"}, f"{source}:sim")
    sim = SimOptions(
        horizon_steps=int(sim_raw.get("horizon_steps", 10_000)),
        master_seed=int(sim_raw.get("master_seed", 20240921)))

    ana_raw = data.get("analysis", {})
    _check_keys(ana_raw, {"tail_eps", "ir_mc_budget", "oracle_cycles"},
                f"{source}:analysis")
    analysis = AnalysisOptions(
        tail_eps=float(ana_raw.get("tail_eps", 1e-9)),
        ir_mc_budget=int(ana_raw.get("ir_mc_budget", 1_000_000)),
        oracle_cycles=int(ana_raw.get("oracle_cycles", 0)))

    est_raw = data.get("estimation", {})
    _check_keys(est_raw, {"lag_state_set_s"}, f"{source}:estimation")
    estimation = EstimationOptions(
        lag_state_set_s=tuple(float(v) for v in
                              est_raw.get("lag_state_set_s", (0.15, 0.35))))

    reg_raw = data.get("region", {})
    _check_keys(reg_raw, {"pair", "grid_min", "grid_max", "grid_points"},
                f"{source}:region")
    region = RegionOptions(
        pair=tuple(reg_raw.get("pair", ("alpha_hm", "alpha_h"))),
        grid_min=float(reg_raw.get("grid_min", 0.0)),
        grid_max=float(reg_raw.get("grid_max", 2.0)),
        grid_points=int(reg_raw.get("grid_points", 21)))

    srv_raw = data.get("server", {})
    _check_keys(srv_raw, {"tick_rate_hz", "realtime", "plant_reset_every"},
                f"{source}:server")
    server = ServerOptions(
        tick_rate_hz=float(srv_raw.get("tick_rate_hz", 20.0)),
        realtime=bool(srv_raw.get("realtime", True)),
        plant_reset_every=int(srv_raw.get("plant_reset_every", 0)))

    digest = hashlib.sha256(
        json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()
    return AppConfig(links=links, code=code, harq=harq, chain=chain,
                     gains=gains, plant=plant, sim=sim, analysis=analysis,
                     estimation=estimation, region=region, server=server,
                     config_hash=digest, raw=data)


def load_config(path) -> AppConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}")
    return parse_config(data, source=str(path))


def atomic_write_text(path, text: str):
    """Write via a temp file and rename so readers never see partial data."""
    directory = os.path.dirname(os.fspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
