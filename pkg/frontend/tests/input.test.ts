import { describe, expect, it } from "vitest";

import { KeyboardAxes } from "../src/input.js";

const TICK = 0.1; // simulation tick length in seconds

describe("KeyboardAxes", () => {
  it("produces a non-zero control within two simulation ticks of a press", () => {
    const axes = new KeyboardAxes();
    expect(axes.keyDown("ArrowUp")).toBe(true);
    const afterOne = axes.step(TICK);
    expect(afterOne.throttle).toBeGreaterThan(0);
    const afterTwo = axes.step(TICK);
    expect(afterTwo.throttle).toBeGreaterThanOrEqual(afterOne.throttle);
    expect(afterTwo.throttle).toBeGreaterThan(0.5);
  });

  it("returns to exactly zero within 0.3 s of release", () => {
    const axes = new KeyboardAxes();
    axes.keyDown("ArrowRight");
    for (let i = 0; i < 20; i++) axes.step(TICK); // saturate at -1
    expect(axes.current().steer).toBe(-1);
    axes.keyUp("ArrowRight");
    axes.step(TICK);
    axes.step(TICK);
    const afterThree = axes.step(TICK); // 0.3 s after release
    expect(afterThree.steer).toBe(0);
  });

  it("clamps at full deflection and handles opposing keys", () => {
    const axes = new KeyboardAxes();
    axes.keyDown("ArrowUp");
    for (let i = 0; i < 50; i++) axes.step(TICK);
    expect(axes.current().throttle).toBe(1);
    axes.keyDown("ArrowDown"); // both held: target 0
    for (let i = 0; i < 10; i++) axes.step(TICK);
    expect(axes.current().throttle).toBe(0);
  });

  it("ignores unmapped keys and resets on blur", () => {
    const axes = new KeyboardAxes();
    expect(axes.keyDown("KeyQ")).toBe(false);
    axes.keyDown("KeyW");
    axes.step(TICK);
    axes.reset();
    for (let i = 0; i < 3; i++) axes.step(TICK);
    expect(axes.current().throttle).toBe(0);
  });

  it("steer sign follows the road frame (left is positive tau)", () => {
    const axes = new KeyboardAxes();
    axes.keyDown("ArrowLeft");
    expect(axes.step(TICK).steer).toBeGreaterThan(0);
  });
});
