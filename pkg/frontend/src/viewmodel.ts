/**
 * Console view model: a pure reducer over received server messages.
 *
 * The console performs no simulation of its own; every rendered value is
 * data received over the wire, so a silent server freezes the view.
 */
import { ServerMessage, StateTick, VerdictReport } from "./protocol";

export type ConnectionStatus = "connecting" | "connected" | "reconnecting";
export type SessionPhase = "idle" | "running" | "paused" | "ended";

export interface ConsoleViewModel {
  connection: ConnectionStatus;
  phase: SessionPhase;
  lastTick: StateTick | null;
  weightVisible: boolean;
  /** ticks since the weight last became visible; the operator's live
   * reaction readout */
  lagReadoutTicks: number | null;
  verdict: VerdictReport | null;
  lastError: string | null;
  ticksReceived: number;
}

export function initialViewModel(): ConsoleViewModel {
  return {
    connection: "connecting",
    phase: "idle",
    lastTick: null,
    weightVisible: false,
    lagReadoutTicks: null,
    verdict: null,
    lastError: null,
    ticksReceived: 0,
  };
}

interface InternalState {
  visibleSince: number | null;
}

const internal = new WeakMap<ConsoleViewModel, InternalState>();

function visibleSince(vm: ConsoleViewModel): number | null {
  return internal.get(vm)?.visibleSince ?? null;
}

export function applyMessage(
  vm: ConsoleViewModel,
  msg: ServerMessage,
): ConsoleViewModel {
  switch (msg.type) {
    case "hello":
      return withInternal({ ...vm, connection: "connected" },
                          visibleSince(vm));
    case "state_tick": {
      const visible = msg.m_c_visible > 0;
      let since = visibleSince(vm);
      if (!visible) since = null;
      else if (since === null) since = msg.t;
      return withInternal(
        {
          ...vm,
          phase: "running",
          lastTick: msg,
          weightVisible: visible,
          lagReadoutTicks: visible && since !== null ? msg.t - since : null,
          ticksReceived: vm.ticksReceived + 1,
        },
        since,
      );
    }
    case "verdict_report":
      return withInternal({ ...vm, verdict: msg, phase: "ended" },
                          visibleSince(vm));
    case "error":
      return withInternal({ ...vm, lastError: msg.message },
                          visibleSince(vm));
    case "horizon_reached":
      return withInternal({ ...vm, phase: "paused" }, visibleSince(vm));
  }
}

export function markPaused(vm: ConsoleViewModel): ConsoleViewModel {
  return withInternal({ ...vm, phase: "paused" }, visibleSince(vm));
}

export function markConnection(
  vm: ConsoleViewModel,
  status: ConnectionStatus,
): ConsoleViewModel {
  return withInternal({ ...vm, connection: status }, visibleSince(vm));
}

function withInternal(
  vm: ConsoleViewModel,
  since: number | null,
): ConsoleViewModel {
  internal.set(vm, { visibleSince: since });
  return vm;
}
