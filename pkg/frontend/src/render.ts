/**
 * Canvas rendering: a pure function of the view model's last tick.
 *
 * Interpolation is deliberately absent so the operator sees exactly the
 * delayed telemetry the channel delivered.
 */
import { ConsoleViewModel } from "./viewmodel";

export interface Canvas2D {
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
  set fillStyle(style: string);
  set strokeStyle(style: string);
  set lineWidth(width: number);
  set font(font: string);
}

export interface RenderGeometry {
  width: number;
  height: number;
  metersToPixels: number;
  poleLengthMeters: number;
}

export const DEFAULT_GEOMETRY: RenderGeometry = {
  width: 800,
  height: 400,
  metersToPixels: 30,
  poleLengthMeters: 6,
};

/** Pole tip position for a given cart x and pole angle (angle measured
 * from the upright). */
export function poleTip(
  cartX: number,
  theta: number,
  geom: RenderGeometry,
): { x: number; y: number } {
  return {
    x: cartX + geom.poleLengthMeters * Math.sin(theta),
    y: geom.poleLengthMeters * Math.cos(theta),
  };
}

export function renderFrame(
  ctx: Canvas2D,
  vm: ConsoleViewModel,
  geom: RenderGeometry = DEFAULT_GEOMETRY,
): void {
  ctx.clearRect(0, 0, geom.width, geom.height);
  const groundY = geom.height - 60;
  ctx.strokeStyle = "#444";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(0, groundY);
  ctx.lineTo(geom.width, groundY);
  ctx.stroke();

  const tick = vm.lastTick;
  if (!tick) {
    ctx.fillStyle = "#888";
    ctx.font = "16px sans-serif";
    ctx.fillText("waiting for telemetry", geom.width / 2 - 80,
                 geom.height / 2);
    return;
  }

  const cx = geom.width / 2 + tick.x * geom.metersToPixels;
  const cartW = 60;
  const cartH = 24;
  ctx.fillStyle = "#335";
  ctx.fillRect(cx - cartW / 2, groundY - cartH, cartW, cartH);

  const tip = poleTip(tick.x, tick.theta, geom);
  const tipPx = geom.width / 2 + tip.x * geom.metersToPixels;
  const tipPy = groundY - cartH - tip.y * geom.metersToPixels;
  ctx.strokeStyle = "#a33";
  ctx.lineWidth = 4;
  ctx.beginPath();
  ctx.moveTo(cx, groundY - cartH);
  ctx.lineTo(tipPx, tipPy);
  ctx.stroke();

  if (tick.m_c_visible > 0) {
    ctx.fillStyle = "#c80";
    ctx.fillRect(cx - 12, groundY - cartH - 14, 24, 12);
    ctx.font = "12px sans-serif";
    ctx.fillStyle = "#000";
    ctx.fillText(`${tick.m_c_visible} kg`, cx - 12, groundY - cartH - 16);
  }

  ctx.fillStyle = "#222";
  ctx.font = "13px monospace";
  ctx.fillText(`t=${tick.t}`, 10, 18);
  ctx.fillText(`staleness=${tick.staleness_steps}`, 10, 34);
  if (vm.lagReadoutTicks !== null) {
    ctx.fillText(`reaction clock=${vm.lagReadoutTicks}`, 10, 50);
  }
  if (vm.connection !== "connected") {
    ctx.fillStyle = "#b00";
    ctx.font = "15px sans-serif";
    ctx.fillText("reconnecting, input disabled", 10, geom.height - 12);
  }
  if (vm.verdict && vm.verdict.lhs !== null) {
    ctx.fillStyle = vm.verdict.stable ? "#070" : "#b00";
    ctx.font = "14px monospace";
    ctx.fillText(
      `verdict: lhs=${vm.verdict.lhs.toFixed(4)} ` +
        (vm.verdict.stable ? "stable" : "unstable"),
      10,
      66,
    );
  }
}
