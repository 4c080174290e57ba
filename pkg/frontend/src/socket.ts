/**
 * Session connection manager over a single websocket.
 *
 * Transport is injected so browser code passes the native WebSocket and
 * tests pass a fake; all frames route through the schema parser before
 * touching the view model.
 */
import { ServerMessage, parseServerMessage } from "./protocol";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: string }) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
}

export type SocketFactory = () => SocketLike;

export class SessionConnection {
  private socket: SocketLike | null = null;
  private closedByUser = false;
  reconnectDelayMs = 500;

  constructor(
    private readonly factory: SocketFactory,
    private readonly onMessage: (msg: ServerMessage) => void,
    private readonly onStatus: (
      status: "connecting" | "connected" | "reconnecting",
    ) => void,
    private readonly schedule: (fn: () => void, ms: number) => void =
      (fn, ms) => setTimeout(fn, ms),
  ) {}

  connect(): void {
    this.onStatus(this.socket === null ? "connecting" : "reconnecting");
    const sock = this.factory();
    this.socket = sock;
    sock.onopen = () => this.onStatus("connected");
    sock.onmessage = (ev) => {
      const msg = parseServerMessage(ev.data);
      if (msg) this.onMessage(msg);
    };
    sock.onclose = () => {
      if (this.closedByUser) return;
      this.onStatus("reconnecting");
      this.schedule(() => this.connect(), this.reconnectDelayMs);
    };
  }

  send(payload: object): boolean {
    if (!this.socket) return false;
    try {
      this.socket.send(JSON.stringify(payload));
      return true;
    } catch {
      return false;
    }
  }

  close(): void {
    this.closedByUser = true;
    this.socket?.close();
  }
}
