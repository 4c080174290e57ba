/**
 * Browser entry point: wires the socket, view model, canvas renderer and
 * keyboard capture together. The render loop redraws at the incoming
 * tick cadence; nothing moves unless the server says so.
 */
import { control } from "./protocol";
import { SessionConnection, SocketLike } from "./socket";
import { KeyCapture } from "./input";
import { renderFrame } from "./render";
import {
  applyMessage,
  initialViewModel,
  markConnection,
  markPaused,
} from "./viewmodel";

export function startConsole(
  canvas: HTMLCanvasElement,
  serverUrl: string,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas context unavailable");
  let vm = initialViewModel();
  let dirty = true;

  const connection = new SessionConnection(
    () => new WebSocket(serverUrl) as unknown as SocketLike,
    (msg) => {
      vm = applyMessage(vm, msg);
      dirty = true;
    },
    (status) => {
      vm = markConnection(vm, status);
      dirty = true;
    },
  );
  connection.connect();

  const gate = { running: false, currentTick: null as number | null };
  const capture = new KeyCapture(gate, (msg) => connection.send(msg));
  window.addEventListener("keydown", (ev) =>
    capture.handle({ key: ev.key, repeat: ev.repeat, type: "keydown" }),
  );
  window.addEventListener("keyup", (ev) =>
    capture.handle({ key: ev.key, type: "keyup" }),
  );

  const startButton = document.getElementById("start");
  startButton?.addEventListener("click", () => {
    connection.send(control("start"));
    gate.running = true;
  });
  const pauseButton = document.getElementById("pause");
  pauseButton?.addEventListener("click", () => {
    connection.send(control("pause"));
    gate.running = false;
    vm = markPaused(vm);
    dirty = true;
  });
  const endButton = document.getElementById("end");
  endButton?.addEventListener("click", () => {
    connection.send(control("end"));
    gate.running = false;
  });

  const redraw = () => {
    if (dirty) {
      gate.currentTick = vm.lastTick?.t ?? null;
      renderFrame(ctx as never, vm);
      dirty = false;
    }
    requestAnimationFrame(redraw);
  };
  requestAnimationFrame(redraw);
}
