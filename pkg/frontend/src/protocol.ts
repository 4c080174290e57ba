/**
 * Wire protocol shared with the session server: JSON messages with a
 * `type` tag and a schema version. Unknown tags and versions are
 * rejected at the edge so the rest of the console only sees valid data.
 */
import { z } from "zod";

export const PROTOCOL_VERSION = 1;

export const StateTickSchema = z.object({
  type: z.literal("state_tick"),
  v: z.literal(PROTOCOL_VERSION),
  t: z.number().int(),
  x: z.number(),
  x_dot: z.number(),
  theta: z.number(),
  theta_dot: z.number(),
  m_c_visible: z.number(),
  staleness_steps: z.number().int().min(1),
  wall: z.number(),
});

export const HelloSchema = z.object({
  type: z.literal("hello"),
  v: z.literal(PROTOCOL_VERSION),
  session_id: z.string(),
  tick_rate_hz: z.number(),
  ts: z.number(),
});

export const VerdictReportSchema = z.object({
  type: z.literal("verdict_report"),
  v: z.literal(PROTOCOL_VERSION),
  log_path: z.string(),
  gains: z
    .object({
      alpha_hm: z.number(),
      alpha_m: z.number(),
      alpha_h: z.number(),
      alpha: z.number(),
    })
    .nullable(),
  chain: z
    .object({
      states_steps: z.array(z.number()),
      transition_matrix: z.array(z.array(z.number())),
    })
    .nullable(),
  lhs: z.number().nullable(),
  stable: z.boolean().nullable(),
  warnings: z.array(z.string()),
});

export const ErrorSchema = z.object({
  type: z.literal("error"),
  v: z.literal(PROTOCOL_VERSION),
  message: z.string(),
});

export const HorizonSchema = z.object({
  type: z.literal("horizon_reached"),
  v: z.literal(PROTOCOL_VERSION),
  t: z.number().int(),
});

export const ServerMessageSchema = z.discriminatedUnion("type", [
  StateTickSchema,
  HelloSchema,
  VerdictReportSchema,
  ErrorSchema,
  HorizonSchema,
]);

export type StateTick = z.infer<typeof StateTickSchema>;
export type Hello = z.infer<typeof HelloSchema>;
export type VerdictReport = z.infer<typeof VerdictReportSchema>;
export type ServerMessage = z.infer<typeof ServerMessageSchema>;

export interface KeyPress {
  type: "keypress";
  v: number;
  key: "S";
  client_time: number;
  apply_at_tick?: number;
}

export interface SessionControl {
  type: "control";
  v: number;
  action: "start" | "pause" | "resume" | "reset" | "end";
}

export interface Ack {
  type: "ack";
  v: number;
  t: number;
}

export function keyPress(clientTime: number, applyAtTick?: number): KeyPress {
  const msg: KeyPress = {
    type: "keypress",
    v: PROTOCOL_VERSION,
    key: "S",
    client_time: clientTime,
  };
  if (applyAtTick !== undefined) msg.apply_at_tick = applyAtTick;
  return msg;
}

export function control(action: SessionControl["action"]): SessionControl {
  return { type: "control", v: PROTOCOL_VERSION, action };
}

export function ack(t: number): Ack {
  return { type: "ack", v: PROTOCOL_VERSION, t };
}

/** Parse an incoming frame; returns null for anything off-schema. */
export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  const result = ServerMessageSchema.safeParse(data);
  return result.success ? result.data : null;
}
