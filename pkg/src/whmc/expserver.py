"""Live operator session service.

Runs the cart-pole simulation in (optionally) real time over a single
websocket per session.  The operator sees deliberately stale telemetry:
the display mirrors the sensor-to-human HARQ channel, refreshing only when
a packet decodes, so the shown state is always one realized uplink delay
old.  Keypresses close the decision phase of the active human loop; the
measured reaction lag (first tick the weight was visible on the display to
the keypress tick) feeds the lag-chain estimation, and the resulting
command is subjected to the simulated lossy downlink.

Messages are JSON with a ``type`` tag and schema version.  One operator
per session; a second connection to the same session id is rejected.
"""

from __future__ import annotations

import asyncio
import json
import math
import os
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import cartpole, humanmodel, pipeline, sessionlog
from .config import AppConfig, atomic_write_text
from .errors import WhmcError
from .linkmodel import decode_error_prob
from .simkernel import source_streams

PROTOCOL_VERSION = 1


@dataclass
class SessionConfig:
    tick_rate_hz: float = 20.0
    realtime: bool = True
    horizon: int | None = None
    plant_reset_every: int = 0
    log_dir: str = "."


class Session:
    """One operator, one plant, one wall-clock simulation loop."""

    def __init__(self, cfg: AppConfig, opts: SessionConfig,
                 session_id: str):
        self.cfg = cfg
        self.opts = opts
        self.id = session_id
        self.plant = pipeline.build_plant(cfg)
        self.params = cartpole.CartPoleParams(**cfg.plant.params) \
            if cfg.plant.kind == "cartpole" else None
        self.ts = self.params.ts if self.params else 0.05
        self.streams = source_streams(cfg.sim.master_seed)
        self.state = self.plant.initial_state()
        self.t = 0
        self.running = False
        self.ended = False
        self._code = cfg.code
        self._mean_snr = {k: cfg.links[k].mean_snr for k in cfg.links}
        self._scheme_id = {"TI": 0, "CC": 1, "IR": 2}[cfg.harq.scheme.value]
        self._n_attempts = cfg.harq.max_attempts
        # uplink display pipeline
        self._ep_sensed = self.plant.observe(self.state)
        self._ep_sense_tick = 0
        self._ep_u = float(self.streams["sh"].random())
        self._ep_attempt = 0
        self._ep_acc = [0.0, 0.0, 0.0]  # gain, capacity, dispersion
        self._ep_fail_prev = 1.0
        self._ep_delay = 0
        self.displayed: np.ndarray | None = None
        self.displayed_sense_tick = -1
        # human intervention bookkeeping
        self.visible_since: int | None = None
        self.loop_index = 0
        self._pending_command: float | None = None
        self._press_queue: list = []
        # after a press, the reaction clock restarts only once the display
        # shows a snapshot sensed after the command could have acted
        self._sense_gate = 0
        # log records
        self.log: list = [sessionlog.meta_record(
            cfg.config_hash, self.ts, opts.tick_rate_hz,
            {"session_id": session_id, "realtime": opts.realtime})]
        self.lag_count = 0
        self._episode_count = 0

    # -- uplink display pipeline -------------------------------------------

    def _sh_attempt(self) -> bool:
        code = self._code
        g = self._mean_snr["sh"] * self.streams["sh"].exponential()
        self._ep_attempt += 1
        self._ep_delay += 1
        if self._scheme_id == 0:
            self._ep_fail_prev *= decode_error_prob(g, code)
            fail = self._ep_fail_prev
        elif self._scheme_id == 1:
            self._ep_acc[0] += g
            fail = decode_error_prob(self._ep_acc[0], code)
        else:
            self._ep_acc[1] += math.log2(1.0 + g)
            self._ep_acc[2] += (1.0 - (1.0 + g) ** -2) \
                * (1.0 / math.log(2.0)) ** 2
            arg = (self._ep_acc[1] - code.rate) \
                / math.sqrt(self._ep_acc[2] / code.packet_len)
            fail = min(max(0.5 * math.erfc(arg / math.sqrt(2.0)), 0.0), 1.0)
        if self._ep_u >= fail:
            return True
        if self._ep_attempt >= self._n_attempts:
            self._ep_u = float(self.streams["sh"].random())
            self._ep_attempt = 0
            self._ep_acc = [0.0, 0.0, 0.0]
            self._ep_fail_prev = 1.0
        return False

    def _advance_display(self):
        """One uplink slot; on decode, refresh the operator display."""
        if self._sh_attempt():
            self.displayed = self._ep_sensed
            self.displayed_sense_tick = self._ep_sense_tick
            self._episode_count += 1
            self.log.append(sessionlog.loop_record(
                self._episode_count, self._ep_delay, None))
            # next packet senses the state of the next tick
            self._ep_sensed = self.plant.observe(self.state)
            self._ep_sense_tick = self.t + 1
            self._ep_u = float(self.streams["sh"].random())
            self._ep_attempt = 0
            self._ep_acc = [0.0, 0.0, 0.0]
            self._ep_fail_prev = 1.0
            self._ep_delay = 0
        else:
            # the in-flight packet keeps carrying its original measurement
            pass

    # -- keypress handling ---------------------------------------------------

    def queue_keypress(self, client_time, apply_at_tick=None):
        self._press_queue.append(
            (self.t if apply_at_tick is None else int(apply_at_tick),
             client_time))

    def _due_presses(self):
        due = [p for p in self._press_queue if p[0] <= self.t]
        self._press_queue = [p for p in self._press_queue if p[0] > self.t]
        return due

    def weight_visible(self) -> bool:
        return self.displayed is not None and \
            float(self.displayed[cartpole.IDX_MC]) > 0.0

    # -- one tick --------------------------------------------------------------

    def tick(self) -> dict | None:
        """Advance one slot; returns the StateTick payload (None before the
        first decoded packet)."""
        u_h = 0.0
        human_applied = False
        if self._pending_command is not None:
            u_h = self._pending_command
            self._pending_command = None
            human_applied = True

        sc_ok = ca_ok = None
        u_m = 0.0
        rng = self.streams
        sc_snr = self._mean_snr["sc"] * rng["sc"].exponential()
        sc_ok = bool(rng["sc"].random() >= decode_error_prob(sc_snr,
                                                             self._code))
        if sc_ok:
            ca_snr = self._mean_snr["ca"] * rng["ca"].exponential()
            ca_ok = bool(rng["ca"].random() >= decode_error_prob(ca_snr,
                                                                 self._code))
            if ca_ok:
                u_m = self.plant.machine_control(self.state)

        # operator presses resolved at the tick boundary
        for _, client_time in self._due_presses():
            if not self.weight_visible() or self.visible_since is None:
                self.log.append({"type": "spurious_press", "t": self.t,
                                 "client_time": client_time})
                continue
            self.loop_index += 1
            self.lag_count += 1
            self.log.append(sessionlog.lag_record(
                self.loop_index, self.visible_since, self.t, self.ts))
            command = -float(self.displayed[cartpole.IDX_MC])
            ha_snr = self._mean_snr["ha"] * rng["ha"].exponential()
            ha_ok = bool(rng["ha"].random() >= decode_error_prob(
                ha_snr, self._code))
            self.log.append({"type": "press", "t": self.t,
                             "loop": self.loop_index, "ha_ok": ha_ok,
                             "command": command})
            if ha_ok:
                self._pending_command = command
            self.visible_since = None  # a press closes the decision phase
            self._sense_gate = self.t + 2

        machine_closed = bool(sc_ok) and bool(ca_ok)
        case = 1 if (machine_closed and human_applied) else \
            2 if machine_closed else 3 if human_applied else 4
        self.log.append(sessionlog.step_record(
            self.t, float(self.state[cartpole.IDX_THETA]), case,
            m_c=float(self.state[cartpole.IDX_MC]), u_h=u_h, u_m=u_m))

        disturbance = self.plant.sample_disturbance(rng["disturbance"])
        self.state = self.plant.step(self.state, u_h, u_m, disturbance)
        self._advance_display()
        self.t += 1
        if self.opts.plant_reset_every and \
                self.t % self.opts.plant_reset_every == 0:
            self.state = self.plant.initial_state()
            self.log.append({"type": "reset", "t": self.t})

        if self.visible_since is None and self.weight_visible() and \
                self.displayed_sense_tick >= self._sense_gate:
            self.visible_since = self.t

        if self.displayed is None:
            return None
        staleness = self.t - self.displayed_sense_tick
        return {
            "type": "state_tick", "v": PROTOCOL_VERSION, "t": self.t,
            "x": float(self.displayed[cartpole.IDX_X]),
            "x_dot": float(self.displayed[cartpole.IDX_XDOT]),
            "theta": float(self.displayed[cartpole.IDX_THETA]),
            "theta_dot": float(self.displayed[cartpole.IDX_THETADOT]),
            "m_c_visible": float(self.displayed[cartpole.IDX_MC]),
            "staleness_steps": int(staleness),
            "wall": time.monotonic(),
        }

    # -- finalization ---------------------------------------------------------

    def finalize(self) -> dict:
        """Write the session log, run the estimation pipeline, and build
        the verdict report."""
        self.ended = True
        log_path = os.path.join(self.opts.log_dir,
                                f"session_{self.id}.ndjson")
        atomic_write_text(log_path,
                          "\n".join(json.dumps(r) for r in self.log) + "\n")
        report = {"type": "verdict_report", "v": PROTOCOL_VERSION,
                  "log_path": log_path, "gains": None, "chain": None,
                  "lhs": None, "stable": None, "warnings": []}
        session = sessionlog.parse_session_log(log_path)
        threshold = self.params.v_threshold if self.params else 0.05
        try:
            lag_states = humanmodel.quantize_lags(
                session.lag_seconds(), self.cfg.estimation.lag_state_set_s,
                self.ts)
            declared = humanmodel.quantize_lags(
                self.cfg.estimation.lag_state_set_s,
                self.cfg.estimation.lag_state_set_s, self.ts)
            chain = humanmodel.estimate_chain(lag_states,
                                              states=sorted(set(declared)))
            report["chain"] = {"states_steps": chain.states.tolist(),
                               "transition_matrix": chain.matrix.tolist()}
        except WhmcError as exc:
            chain = None
            report["warnings"].append(f"chain not estimated: {exc}")
        datasets = {k: [] for k in cartpole.CASE_KEYS}
        steps = sorted(session.steps, key=lambda r: r["t"])
        for cur, nxt in zip(steps[:-1], steps[1:]):
            v0 = cartpole.lyapunov_v(cur["theta"], threshold)
            v1 = cartpole.lyapunov_v(nxt["theta"], threshold)
            datasets[int(cur["case"])].append((v0, v1))
        try:
            gains = cartpole.estimate_gains(datasets, threshold)
            report["gains"] = {"alpha_hm": gains.alpha_hm,
                               "alpha_m": gains.alpha_m,
                               "alpha_h": gains.alpha_h,
                               "alpha": gains.alpha}
        except WhmcError as exc:
            gains = None
            report["warnings"].append(f"gains not estimated: {exc}")
        if gains is not None and chain is not None:
            verdict = pipeline.verdict_for_regime(self.cfg, "collab",
                                                  gains=gains, chain=chain)
            report["lhs"] = verdict.lhs
            report["stable"] = verdict.stable
        return report


def create_app(cfg: AppConfig, opts: SessionConfig | None = None) -> FastAPI:
    opts = opts or SessionConfig(tick_rate_hz=cfg.server.tick_rate_hz,
                                 realtime=cfg.server.realtime,
                                 plant_reset_every=cfg.server
                                 .plant_reset_every)
    app = FastAPI()
    app.state.sessions = {}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        session_id = ws.query_params.get("session") or uuid.uuid4().hex
        if session_id in app.state.sessions:
            await ws.close(code=4409, reason="session already has an "
                                             "operator")
            return
        await ws.accept()
        session = Session(cfg, opts, session_id)
        app.state.sessions[session_id] = session
        send_lock = asyncio.Lock()
        ticker: asyncio.Task | None = None
        stop = asyncio.Event()
        # non-realtime sessions run in lockstep with the client: each sent
        # tick must be acknowledged before the next one is produced, so
        # scripted keypress schedules can never fall behind the clock
        last_ack = -1
        ack_event = asyncio.Event()

        async def send(payload: dict):
            async with send_lock:
                await ws.send_text(json.dumps(payload))

        async def tick_loop():
            nonlocal last_ack
            period = 1.0 / opts.tick_rate_hz if opts.tick_rate_hz > 0 \
                else 0.0
            next_deadline = time.monotonic() + period
            while not stop.is_set():
                if not session.running:
                    await asyncio.sleep(period if period > 0 else 0.001)
                    next_deadline = time.monotonic() + period
                    continue
                payload = session.tick()
                if payload is not None:
                    await send(payload)
                    if not opts.realtime:
                        while last_ack < payload["t"] and not stop.is_set() \
                                and session.running:
                            ack_event.clear()
                            try:
                                await asyncio.wait_for(ack_event.wait(),
                                                       timeout=30.0)
                            except asyncio.TimeoutError:
                                return
                if opts.horizon is not None and session.t >= opts.horizon:
                    session.running = False
                    await send({"type": "horizon_reached", "t": session.t,
                                "v": PROTOCOL_VERSION})
                    continue
                if opts.realtime and period > 0:
                    delay = next_deadline - time.monotonic()
                    next_deadline += period
                    if delay > 0:
                        await asyncio.sleep(delay)
                else:
                    await asyncio.sleep(0)

        try:
            await send({"type": "hello", "v": PROTOCOL_VERSION,
                        "session_id": session_id,
                        "tick_rate_hz": opts.tick_rate_hz,
                        "ts": session.ts})
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await send({"type": "error", "v": PROTOCOL_VERSION,
                                "message": "not valid JSON"})
                    continue
                kind = msg.get("type")
                if msg.get("v", PROTOCOL_VERSION) != PROTOCOL_VERSION:
                    await send({"type": "error", "v": PROTOCOL_VERSION,
                                "message": "unsupported schema version"})
                    continue
                if kind == "control":
                    action = msg.get("action")
                    if action == "start":
                        session.running = True
                        if ticker is None:
                            ticker = asyncio.create_task(tick_loop())
                    elif action == "pause":
                        session.running = False
                        ack_event.set()
                    elif action == "resume":
                        session.running = True
                    elif action == "reset":
                        session.state = session.plant.initial_state()
                    elif action == "end":
                        session.running = False
                        stop.set()
                        ack_event.set()
                        report = session.finalize()
                        await send(report)
                    else:
                        await send({"type": "error",
                                    "v": PROTOCOL_VERSION,
                                    "message": f"unknown control action "
                                               f"{action!r}"})
                elif kind == "ack":
                    last_ack = max(last_ack, int(msg.get("t", -1)))
                    ack_event.set()
                elif kind == "keypress":
                    if not session.running:
                        session.log.append({"type": "ignored_press_paused",
                                            "t": session.t})
                        continue
                    if msg.get("key", "S").upper() != "S":
                        continue
                    session.queue_keypress(msg.get("client_time"),
                                           msg.get("apply_at_tick"))
                else:
                    await send({"type": "error", "v": PROTOCOL_VERSION,
                                "message": f"unknown message type "
                                           f"{kind!r}"})
        except WebSocketDisconnect:
            pass
        finally:
            stop.set()
            ack_event.set()
            if ticker is not None:
                ticker.cancel()
            app.state.sessions.pop(session_id, None)

    return app


def main(argv=None):  # pragma: no cover - thin launcher
    import argparse

    import uvicorn

    from .config import load_config

    parser = argparse.ArgumentParser(prog="whmc-server")
    parser.add_argument("--config", required=True)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8400)
    parser.add_argument("--log-dir", default=".")
    args = parser.parse_args(argv)
    cfg = load_config(args.config)
    opts = SessionConfig(tick_rate_hz=cfg.server.tick_rate_hz,
                         realtime=cfg.server.realtime,
                         plant_reset_every=cfg.server.plant_reset_every,
                         log_dir=args.log_dir)
    uvicorn.run(create_app(cfg, opts), host=args.host, port=args.port)


if __name__ == "__main__":  # pragma: no cover
    main()
