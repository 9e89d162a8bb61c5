/**
 * Browser entry point: connect to an episode, render at the display rate,
 * and (driver role only) stream keyboard controls.
 *
 * The loop is deliberately simple: ticks arrive at 10 Hz; rendering
 * interpolates between the two most recent ticks; controls are sampled and
 * sent every animation frame so a key press reaches the server well inside
 * one simulation tick.
 */

import { EpisodeClient } from "./client.js";
import { KeyboardAxes } from "./input.js";
import { SceneRenderer, buildHud, interpolateState } from "./render.js";
import { TickFrame } from "./protocol.js";

export interface AppOptions {
  baseUrl: string;
  episodeId: string;
  role: "driver" | "spectator";
  canvas: HTMLCanvasElement;
  statusElement?: HTMLElement;
}

export function startApp(opts: AppOptions): { stop: () => void } {
  const ctx = opts.canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  const renderer = new SceneRenderer(ctx, {
    width: opts.canvas.width,
    height: opts.canvas.height,
  });
  const axes = new KeyboardAxes();
  const isDriver = opts.role === "driver";

  let prevTick: TickFrame | null = null;
  let lastTick: TickFrame | null = null;
  let lastTickAt = 0;
  let finished = false;

  const client = new EpisodeClient({
    baseUrl: opts.baseUrl,
    episodeId: opts.episodeId,
    role: opts.role,
  }).on({
    tick: (t) => {
      prevTick = lastTick;
      lastTick = t;
      lastTickAt = performance.now();
    },
    finished: (status, outcome) => {
      finished = true;
      if (opts.statusElement) {
        opts.statusElement.textContent = `${status}${outcome ? `: ${outcome}` : ""}`;
      }
    },
    error: (reason) => {
      if (opts.statusElement) opts.statusElement.textContent = `error: ${reason}`;
    },
  });
  client.connect();

  const onKeyDown = (ev: KeyboardEvent) => {
    if (isDriver && axes.keyDown(ev.code)) ev.preventDefault();
  };
  const onKeyUp = (ev: KeyboardEvent) => {
    if (isDriver && axes.keyUp(ev.code)) ev.preventDefault();
  };
  const onBlur = () => axes.reset();
  if (isDriver) {
    window.addEventListener("keydown", onKeyDown);
    window.addEventListener("keyup", onKeyUp);
    window.addEventListener("blur", onBlur);
  }

  let rafId = 0;
  let lastFrameAt = performance.now();
  const frame = () => {
    const now = performance.now();
    const dt = Math.min(0.1, (now - lastFrameAt) / 1000);
    lastFrameAt = now;
    if (isDriver && !finished) {
      const a = axes.step(dt);
      client.sendControl(a.throttle, a.steer);
    }
    if (lastTick) {
      const alpha = Math.min(1, (now - lastTickAt) / 100); // 10 Hz ticks
      const state =
        prevTick && lastTick
          ? interpolateState(prevTick.state, lastTick.state, alpha)
          : lastTick.state;
      renderer.draw(state, buildHud(lastTick), lastTick.bands, {
        degraded: client.isStale() && !finished,
        spectator: !isDriver,
      });
    }
    rafId = requestAnimationFrame(frame);
  };
  rafId = requestAnimationFrame(frame);

  return {
    stop: () => {
      cancelAnimationFrame(rafId);
      if (isDriver) {
        window.removeEventListener("keydown", onKeyDown);
        window.removeEventListener("keyup", onKeyUp);
        window.removeEventListener("blur", onBlur);
      }
      client.close();
    },
  };
}
