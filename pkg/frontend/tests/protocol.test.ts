import { describe, expect, it } from "vitest";

import {
  ProtocolError,
  controlFrame,
  parseServerFrame,
} from "../src/protocol.js";

const tick = {
  v: 1,
  type: "tick",
  t: 12,
  state: {
    human: { s: -80.2, tau: -1.85, s_dot: 29.5, tau_dot: 0.1 },
    robot: { s: -77.0, tau: -5.55, s_dot: 31.0, tau_dot: 0.0, tau_ddot: 0.2 },
  },
  plan: { best_plan_code: 137, committed_next: [[0.5, 0.1], [0.5, 0.0], [0.5, -0.1]] },
  bands: { best: { plan_code: 137, human_s_q: [[1], [2], [3]], human_tau_q: [[1], [2], [3]] } },
  alerts: ["overspeed"],
  near_collision: false,
  status: "running",
};

describe("parseServerFrame", () => {
  it("round-trips a tick frame", () => {
    const f = parseServerFrame(JSON.stringify(tick));
    expect(f.type).toBe("tick");
    if (f.type !== "tick") return;
    expect(f.t).toBe(12);
    expect(f.state.human.s).toBeCloseTo(-80.2);
    expect(f.state.robot.tau_ddot).toBeCloseTo(0.2);
    expect(f.plan.best_plan_code).toBe(137);
    expect(f.alerts).toEqual(["overspeed"]);
    expect(f.near_collision).toBe(false);
  });

  it("parses hello, status and error frames", () => {
    const hello = parseServerFrame(
      JSON.stringify({ v: 1, type: "hello", role: "spectator", episode: "ep-1", status: "created" }),
    );
    expect(hello).toMatchObject({ type: "hello", role: "spectator", episode: "ep-1" });
    const status = parseServerFrame(
      JSON.stringify({ v: 1, type: "status", status: "done", outcome: "left_passed_front", error: null }),
    );
    expect(status).toMatchObject({ type: "status", outcome: "left_passed_front" });
    const err = parseServerFrame(JSON.stringify({ v: 1, type: "error", reason: "nope" }));
    expect(err).toMatchObject({ type: "error", reason: "nope" });
  });

  it("rejects junk", () => {
    expect(() => parseServerFrame("not json")).toThrow(ProtocolError);
    expect(() => parseServerFrame("[1,2]")).toThrow(ProtocolError);
    expect(() => parseServerFrame(JSON.stringify({ v: 2, type: "tick" }))).toThrow(/version/);
    expect(() => parseServerFrame(JSON.stringify({ v: 1, type: "wat" }))).toThrow(/unknown frame/);
    const bad = JSON.parse(JSON.stringify(tick));
    bad.state.human.s = "fast";
    expect(() => parseServerFrame(JSON.stringify(bad))).toThrow(/finite number/);
  });

  it("builds versioned control frames", () => {
    expect(controlFrame(0.4, -0.1, 12.5)).toEqual({
      v: 1,
      type: "control",
      throttle: 0.4,
      steer: -0.1,
      ts: 12.5,
    });
  });
});
