/**
 * Scripted operator for headless sessions.
 *
 * Presses `S` after delays drawn by walking a Markov chain over lag
 * states (in ticks). The visibility rule mirrors the server's reaction
 * clock: after a press, the weight counts as newly visible only once the
 * displayed snapshot (tick minus staleness) was sensed after the press
 * could have acted, so scheduled and measured lags agree exactly.
 */
import { Ack, KeyPress, StateTick, ack, keyPress } from "./protocol";

export interface ChainSchedule {
  /** lag values in ticks, one per chain state */
  states: number[];
  /** row-stochastic transition matrix between lag states */
  matrix: number[][];
  seed: number;
}

/** Deterministic 32-bit PRNG so scripted sessions replay exactly. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export class ScriptedOperator {
  private readonly rand: () => number;
  private state = 0;
  private lastApplyTick = -10;
  readonly scheduledLags: number[] = [];

  constructor(private readonly schedule: ChainSchedule) {
    this.rand = mulberry32(schedule.seed);
  }

  /** Tick at which the most recent scheduled press lands. */
  get pendingApplyTick(): number {
    return this.lastApplyTick;
  }

  private nextLag(): number {
    const row = this.schedule.matrix[this.state];
    const u = this.rand();
    let acc = 0;
    let next = row.length - 1;
    for (let j = 0; j < row.length; j++) {
      acc += row[j];
      if (u <= acc) {
        next = j;
        break;
      }
    }
    this.state = next;
    return this.schedule.states[next];
  }

  /** Messages to send in response to one state tick (press first, then
   * the lockstep ack). */
  onTick(tick: StateTick): Array<KeyPress | Ack> {
    const out: Array<KeyPress | Ack> = [];
    const sensedTick = tick.t - tick.staleness_steps;
    const armed = tick.t > this.lastApplyTick;
    if (
      armed &&
      tick.m_c_visible > 0 &&
      sensedTick >= this.lastApplyTick + 2
    ) {
      const lag = this.nextLag();
      const press = keyPress(tick.t, tick.t + lag);
      this.lastApplyTick = tick.t + lag;
      this.scheduledLags.push(lag);
      out.push(press);
    }
    out.push(ack(tick.t));
    return out;
  }
}
