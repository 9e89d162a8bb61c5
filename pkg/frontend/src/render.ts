/**
 * Canvas renderer for the weaving scenario.
 *
 * Pure view-model helpers (interpolation, HUD state) are separated from
 * the drawing code so they can be tested without a DOM; the drawing code
 * only needs the small Ctx2D subset below, which the browser's
 * CanvasRenderingContext2D satisfies.
 */

import { JointStateFrame, QuantileBands, TickFrame } from "./protocol.js";

export const ROAD_START_S = -135;
export const CUTOFF_S = 0;
export const LANE_WIDTH = 3.7;
export const LEFT_LANE_CENTER_TAU = -1.85;
export const OVERSPEED_MPS = 38;

export interface Ctx2D {
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fill(): void;
  closePath(): void;
  fillText(text: string, x: number, y: number): void;
  setLineDash(segments: number[]): void;
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  globalAlpha: number;
}

function lerp(a: number, b: number, alpha: number): number {
  return a + (b - a) * alpha;
}

/** Linear interpolation between two tick states for smooth 60 fps drawing. */
export function interpolateState(
  prev: JointStateFrame,
  next: JointStateFrame,
  alpha: number,
): JointStateFrame {
  const a = Math.max(0, Math.min(1, alpha));
  return {
    human: {
      s: lerp(prev.human.s, next.human.s, a),
      tau: lerp(prev.human.tau, next.human.tau, a),
      s_dot: lerp(prev.human.s_dot, next.human.s_dot, a),
      tau_dot: lerp(prev.human.tau_dot, next.human.tau_dot, a),
    },
    robot: {
      s: lerp(prev.robot.s, next.robot.s, a),
      tau: lerp(prev.robot.tau, next.robot.tau, a),
      s_dot: lerp(prev.robot.s_dot, next.robot.s_dot, a),
      tau_dot: lerp(prev.robot.tau_dot, next.robot.tau_dot, a),
      tau_ddot: lerp(prev.robot.tau_ddot, next.robot.tau_ddot, a),
    },
  };
}

export interface HudState {
  speedMps: number;
  overspeed: boolean;
  nearCollision: boolean;
  status: string;
  tick: number;
}

/** HUD state derived from the latest tick — alerts surface the same frame. */
export function buildHud(tick: TickFrame): HudState {
  return {
    speedMps: tick.state.human.s_dot,
    overspeed:
      tick.alerts.includes("overspeed") || tick.state.human.s_dot > OVERSPEED_MPS,
    nearCollision: tick.near_collision,
    status: tick.status,
    tick: tick.t,
  };
}

export interface Viewport {
  width: number;
  height: number;
}

/** Road-frame (s, tau) to canvas pixels: s maps left-to-right. */
export function toPixels(
  s: number,
  tau: number,
  vp: Viewport,
): { x: number; y: number } {
  const margin = 20;
  const x =
    margin + ((s - ROAD_START_S) / (CUTOFF_S - ROAD_START_S)) * (vp.width - 2 * margin);
  const roadTop = vp.height * 0.35;
  const pxPerMeter = (vp.height * 0.3) / (2 * LANE_WIDTH);
  // tau = 0 is the left road edge; more negative tau is further right.
  const y = roadTop + -tau * pxPerMeter;
  return { x, y };
}

export class SceneRenderer {
  constructor(
    private readonly ctx: Ctx2D,
    private readonly vp: Viewport,
  ) {}

  draw(
    state: JointStateFrame,
    hud: HudState,
    bands: QuantileBands | null,
    badges: { degraded: boolean; spectator: boolean },
  ): void {
    const { ctx, vp } = this;
    ctx.clearRect(0, 0, vp.width, vp.height);
    this.drawRoad();
    if (bands) this.drawBands(bands);
    this.drawCar(state.human.s, state.human.tau, "#2b6cb0");
    this.drawCar(state.robot.s, state.robot.tau, "#c05621");
    this.drawHud(hud, badges);
  }

  private drawRoad(): void {
    const { ctx, vp } = this;
    const left = toPixels(ROAD_START_S, 0, vp);
    const right = toPixels(CUTOFF_S, 0, vp);
    const bottom = toPixels(0, -2 * LANE_WIDTH, vp);
    ctx.fillStyle = "#2d3748";
    ctx.fillRect(left.x, left.y, right.x - left.x, bottom.y - left.y);
    // Dashed center line between the two lanes.
    const mid = toPixels(0, -LANE_WIDTH, vp);
    ctx.strokeStyle = "#e2e8f0";
    ctx.lineWidth = 1;
    ctx.setLineDash([8, 8]);
    ctx.beginPath();
    ctx.moveTo(left.x, mid.y);
    ctx.lineTo(right.x, mid.y);
    ctx.stroke();
    ctx.setLineDash([]);
    // Cutoff marker.
    ctx.strokeStyle = "#f56565";
    ctx.beginPath();
    ctx.moveTo(right.x, left.y);
    ctx.lineTo(right.x, bottom.y);
    ctx.stroke();
  }

  private drawBands(bands: QuantileBands): void {
    const best = bands.best;
    const sQ = best?.human_s_q;
    const tauQ = best?.human_tau_q;
    if (!sQ || !tauQ || sQ.length < 3) return;
    const { ctx, vp } = this;
    const [sLo, , sHi] = sQ;
    const [tauLo, , tauHi] = tauQ;
    ctx.globalAlpha = 0.25;
    ctx.fillStyle = "#63b3ed";
    ctx.beginPath();
    const first = toPixels(sLo[0], tauLo[0], vp);
    ctx.moveTo(first.x, first.y);
    for (let i = 1; i < sLo.length; i++) {
      const p = toPixels(sLo[i], tauLo[i], vp);
      ctx.lineTo(p.x, p.y);
    }
    for (let i = sHi.length - 1; i >= 0; i--) {
      const p = toPixels(sHi[i], tauHi[i], vp);
      ctx.lineTo(p.x, p.y);
    }
    ctx.closePath();
    ctx.fill();
    ctx.globalAlpha = 1;
  }

  private drawCar(s: number, tau: number, color: string): void {
    const { ctx, vp } = this;
    const p = toPixels(s, tau, vp);
    ctx.fillStyle = color;
    ctx.fillRect(p.x - 8, p.y - 4, 16, 8);
  }

  private drawHud(hud: HudState, badges: { degraded: boolean; spectator: boolean }): void {
    const { ctx } = this;
    ctx.font = "14px sans-serif";
    ctx.fillStyle = "#1a202c";
    ctx.fillText(`${hud.speedMps.toFixed(1)} m/s`, 12, 20);
    ctx.fillText(`t=${hud.tick}  ${hud.status}`, 12, 38);
    let y = 56;
    if (hud.overspeed) {
      ctx.fillStyle = "#c53030";
      ctx.fillText("OVERSPEED", 12, y);
      y += 18;
    }
    if (hud.nearCollision) {
      ctx.fillStyle = "#c53030";
      ctx.fillText("NEAR COLLISION", 12, y);
      y += 18;
    }
    if (badges.degraded) {
      ctx.fillStyle = "#b7791f";
      ctx.fillText("DEGRADED — stream stalled", 12, y);
      y += 18;
    }
    if (badges.spectator) {
      ctx.fillStyle = "#4a5568";
      ctx.fillText("SPECTATOR (inputs disabled)", 12, y);
    }
  }
}
