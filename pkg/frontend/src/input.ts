/**
 * Keyboard-to-axis model for the driver seat.
 *
 * Held keys ramp the axis toward +-1 (attack); released axes ramp back to
 * exactly 0 (decay). Rates are chosen so a fresh key press produces a
 * non-zero control on the very next simulation tick (0.1 s) and a released
 * axis is back to zero within 0.3 s — the same window after which the
 * server treats input as stale.
 */

export interface AxesState {
  throttle: number;
  steer: number;
}

export interface KeyboardAxesOptions {
  /** Axis units per second while a key is held. */
  attackPerSec?: number;
  /** Axis units per second back toward zero after release. */
  decayPerSec?: number;
}

const KEY_MAP: Record<string, { axis: keyof AxesState; dir: 1 | -1 }> = {
  ArrowUp: { axis: "throttle", dir: 1 },
  KeyW: { axis: "throttle", dir: 1 },
  ArrowDown: { axis: "throttle", dir: -1 },
  KeyS: { axis: "throttle", dir: -1 },
  // Larger tau is to the left in the road frame.
  ArrowLeft: { axis: "steer", dir: 1 },
  KeyA: { axis: "steer", dir: 1 },
  ArrowRight: { axis: "steer", dir: -1 },
  KeyD: { axis: "steer", dir: -1 },
};

export class KeyboardAxes {
  private readonly attack: number;
  private readonly decay: number;
  private held = new Set<string>();
  private state: AxesState = { throttle: 0, steer: 0 };

  constructor(options: KeyboardAxesOptions = {}) {
    this.attack = options.attackPerSec ?? 8;
    this.decay = options.decayPerSec ?? 5; // full deflection -> 0 in 0.2 s
  }

  /** Returns true when the key is one we handle (caller preventDefaults). */
  keyDown(code: string): boolean {
    if (!(code in KEY_MAP)) return false;
    this.held.add(code);
    return true;
  }

  keyUp(code: string): boolean {
    if (!(code in KEY_MAP)) return false;
    this.held.delete(code);
    return true;
  }

  /** All keys released (e.g. window blur). */
  reset(): void {
    this.held.clear();
  }

  private target(axis: keyof AxesState): number {
    let t = 0;
    for (const code of this.held) {
      const m = KEY_MAP[code];
      if (m.axis === axis) t += m.dir;
    }
    return Math.max(-1, Math.min(1, t));
  }

  /** Advance the ramps by dt seconds; returns the new axis values. */
  step(dtSec: number): AxesState {
    for (const axis of ["throttle", "steer"] as const) {
      const target = this.target(axis);
      const cur = this.state[axis];
      const rate = target !== 0 ? this.attack : this.decay;
      const maxStep = rate * dtSec;
      const delta = target - cur;
      this.state[axis] =
        Math.abs(delta) <= maxStep ? target : cur + Math.sign(delta) * maxStep;
    }
    return { ...this.state };
  }

  current(): AxesState {
    return { ...this.state };
  }
}
