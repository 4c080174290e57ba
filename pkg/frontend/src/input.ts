/**
 * Keyboard capture: one KeyPress message per physical press of `S`.
 *
 * Auto-repeat is suppressed through both the event's repeat flag and a
 * keyup re-arm, so holding the key emits exactly one message.
 */
import { KeyPress, keyPress } from "./protocol";

export interface KeyLike {
  key: string;
  repeat?: boolean;
  type: "keydown" | "keyup";
}

export interface InputGate {
  running: boolean;
  currentTick: number | null;
}

export class KeyCapture {
  private armed = true;
  /** set when a press is dropped because the session is paused */
  lastDropReason: string | null = null;

  constructor(
    private readonly gate: InputGate,
    private readonly emit: (msg: KeyPress) => void,
  ) {}

  handle(event: KeyLike): void {
    if (event.key.toUpperCase() !== "S") return;
    if (event.type === "keyup") {
      this.armed = true;
      return;
    }
    if (event.repeat || !this.armed) return;
    this.armed = false;
    if (!this.gate.running) {
      this.lastDropReason = "session paused";
      return;
    }
    this.lastDropReason = null;
    this.emit(keyPress(this.gate.currentTick ?? -1));
  }
}
