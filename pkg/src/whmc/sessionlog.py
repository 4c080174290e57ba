"""Session log schema shared by the CLI and the experiment server.

Logs are NDJSON: one record per line, each tagged with a ``type`` field.
``meta`` opens the file; ``step`` records carry the per-slot case label and
pole angle for gain estimation; ``lag`` records carry one measured human
reaction per loop; ``loop`` records carry per-loop uplink delays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError

SCHEMA_VERSION = 1


def meta_record(config_hash: str, ts: float, tick_rate_hz: float,
                extra: dict | None = None) -> dict:
    rec = {"type": "meta", "schema_version": SCHEMA_VERSION,
           "config_hash": config_hash, "ts": ts,
           "tick_rate_hz": tick_rate_hz}
    if extra:
        rec.update(extra)
    return rec


def step_record(t: int, theta: float, case: int, **extra) -> dict:
    rec = {"type": "step", "t": int(t), "theta": float(theta),
           "case": int(case)}
    rec.update(extra)
    return rec


def lag_record(loop: int, visible_tick: int, press_tick: int,
               ts: float) -> dict:
    lag_steps = int(press_tick) - int(visible_tick)
    return {"type": "lag", "loop": int(loop),
            "visible_tick": int(visible_tick),
            "press_tick": int(press_tick),
            "lag_s": lag_steps * ts}


def loop_record(index: int, tau_sh: int, ha_ok: bool | None) -> dict:
    return {"type": "loop", "loop": int(index), "tau_sh": int(tau_sh),
            "ha_ok": ha_ok}


@dataclass
class SessionData:
    meta: dict
    steps: list = field(default_factory=list)
    lags: list = field(default_factory=list)
    loops: list = field(default_factory=list)
    others: list = field(default_factory=list)

    @property
    def ts(self) -> float:
        return float(self.meta.get("ts", 0.05))

    def lag_seconds(self) -> list:
        return [float(r["lag_s"]) for r in self.lags]


def parse_session_log(path) -> SessionData:
    """Parse an NDJSON session log; malformed lines fail with line numbers."""
    meta = {}
    data = SessionData(meta=meta)
    n_records = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: malformed JSON: {exc}")
            if not isinstance(rec, dict) or "type" not in rec:
                raise ConfigError(f"{path}:{lineno}: record without a "
                                  "'type' field")
            n_records += 1
            kind = rec["type"]
            if kind == "meta":
                if rec.get("schema_version") != SCHEMA_VERSION:
                    raise ConfigError(
                        f"{path}:{lineno}: unsupported schema_version "
                        f"{rec.get('schema_version')!r}")
                meta.update(rec)
            elif kind == "step":
                data.steps.append(rec)
            elif kind == "lag":
                data.lags.append(rec)
            elif kind == "loop":
                data.loops.append(rec)
            else:
                data.others.append(rec)
    if n_records == 0:
        raise ConfigError(f"{path}: empty session log")
    return data


def read_lag_text(path) -> list:
    """Plain lag file: one positive lag in seconds per line."""
    lags = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                lags.append(float(line))
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: not a number: {line!r}")
    if not lags:
        raise ConfigError(f"{path}: no lag values found")
    return lags
