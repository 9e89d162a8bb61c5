"""Closed-loop episode engine: 10 Hz ticks with 0.3 s replanning cadence.

The robot executes a committed 3-step action window while the planner
selects the window after it, so every control executed during window w was
committed no later than the start of w.  The human side is pluggable:
scripted driver, replayed trial, or a live client feeding axis controls.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .dynamics import (
    DEFAULT_ROAD,
    HumanAction,
    JointState,
    RoadFrame,
    RobotAction,
    is_near_collision,
    is_terminal,
    step_human,
    step_robot,
)
from .features import step_features
from .planner import PlannerConfig, PlanResult, bootstrap_window, plan_cycle
from .sampler import FastSampler
from .synth import (
    SPEED_ALERT,
    InitialCondition,
    ScriptedDriver,
    ScriptedDriverParams,
    Trial,
    initial_joint_state,
    label_outcome,
)

MAX_EPISODE_STEPS = 300      # 30 s hard timeout
PLAN_DEADLINE_S = 0.3        # soft real-time budget per planning cycle
THROTTLE_RANGE = (-6.0, 4.0)  # human s_ddot from throttle axis
STEER_RANGE = (-3.0, 3.0)     # human tau_ddot from steer axis
STALE_INPUT_S = 0.3


@dataclass(frozen=True)
class ScriptedHumanSpec:
    params: ScriptedDriverParams = field(default_factory=ScriptedDriverParams)


@dataclass(frozen=True)
class ReplayHumanSpec:
    trial: Trial


@dataclass(frozen=True)
class LiveHumanSpec:
    pass


@dataclass(frozen=True)
class EpisodeConfig:
    ic: InitialCondition
    human_source: object = field(default_factory=ScriptedHumanSpec)
    model_path: str | None = None
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    seed: int = 0
    robot_target_lane: str = "left"   # robot starts in the opposite lane
    real_time: bool = False
    max_steps: int = MAX_EPISODE_STEPS

    def __post_init__(self) -> None:
        if self.robot_target_lane not in ("left", "right"):
            raise ValueError("robot_target_lane must be 'left' or 'right'")


class HumanSource(Protocol):
    def act(self, t: int, x: JointState) -> HumanAction: ...


class ScriptedHumanSource:
    def __init__(self, spec: ScriptedHumanSpec, config: EpisodeConfig,
                 road: RoadFrame) -> None:
        ic = config.ic
        v_left, v_right = ic.lane_speeds()
        human_lane = config.robot_target_lane
        v_h = v_left if human_lane == "left" else v_right
        v_r = v_right if human_lane == "left" else v_left
        target = road.lane_center("right" if human_lane == "left" else "left")
        rng = np.random.Generator(np.random.Philox(
            key=np.uint64(config.seed * 11_000_003 + 7)))
        self.driver = ScriptedDriver(spec.params, v_h, target, v_h - v_r,
                                     ic.t_co, rng)
        self.dt = road.dt

    def act(self, t: int, x: JointState) -> HumanAction:
        h, r = x.human, x.robot
        a = self.driver.act(t * self.dt, (h.s, h.tau, h.s_dot, h.tau_dot),
                            (r.s, r.tau, r.s_dot, r.tau_dot))
        return HumanAction(*a).clamped()


class ReplayHumanSource:
    def __init__(self, spec: ReplayHumanSpec) -> None:
        self.actions = [u_h for u_h, _ in spec.trial.actions]

    def act(self, t: int, x: JointState) -> HumanAction:
        if t < len(self.actions):
            return self.actions[t]
        return HumanAction(0.0, 0.0)


def axes_to_action(throttle: float, steer: float) -> HumanAction:
    """Map [-1, 1] axes to the human action box, zero axis -> zero action."""
    throttle = min(max(throttle, -1.0), 1.0)
    steer = min(max(steer, -1.0), 1.0)
    s_ddot = THROTTLE_RANGE[1] * throttle if throttle >= 0 else -THROTTLE_RANGE[0] * throttle
    return HumanAction(s_ddot=s_ddot, tau_ddot=STEER_RANGE[1] * steer)


class LiveHumanSource:
    """Latest-wins axis input with stale-input decay to zero action."""

    def __init__(self, now: Callable[[], float] = time.monotonic) -> None:
        self._now = now
        self._throttle = 0.0
        self._steer = 0.0
        self._received_at: float | None = None
        self.connected = True

    def update(self, throttle: float, steer: float) -> None:
        self._throttle = throttle
        self._steer = steer
        self._received_at = self._now()

    def disconnect(self) -> None:
        self.connected = False
        self._received_at = None

    def act(self, t: int, x: JointState) -> HumanAction:
        if self._received_at is None or self._now() - self._received_at > STALE_INPUT_S:
            return HumanAction(0.0, 0.0)
        return axes_to_action(self._throttle, self._steer)


@dataclass
class EpisodeLog:
    trial: Trial
    plans: list[dict]            # per planning cycle: tick, result, deadline info
    near_collision_steps: int
    completed: bool              # lane swap finished before the cutoff
    degraded: bool               # live driver disconnected mid-episode
    deadline_misses: int
    plan_times_ms: list[float]

    def save(self, trial_path: str, sidecar_path: str,
             road: RoadFrame = DEFAULT_ROAD) -> None:
        from .trialio import export_trials
        export_trials([self.trial], trial_path, road)
        with open(sidecar_path, "w") as f:
            json.dump({
                "v": 1,
                "trial_id": self.trial.id,
                "completed": self.completed,
                "degraded": self.degraded,
                "near_collision_steps": self.near_collision_steps,
                "deadline_misses": self.deadline_misses,
                "plan_times_ms": self.plan_times_ms,
                "plans": self.plans,
            }, f)


def make_human_source(config: EpisodeConfig, road: RoadFrame) -> HumanSource:
    spec = config.human_source
    if isinstance(spec, ScriptedHumanSpec):
        return ScriptedHumanSource(spec, config, road)
    if isinstance(spec, ReplayHumanSpec):
        return ReplayHumanSource(spec)
    if isinstance(spec, LiveHumanSpec):
        return LiveHumanSource()
    if hasattr(spec, "act"):  # pre-built source (live server injects its own)
        return spec
    raise ValueError(f"unknown human source spec {spec!r}")


def run_episode(config: EpisodeConfig, sampler: FastSampler,
                road: RoadFrame = DEFAULT_ROAD,
                human_source: HumanSource | None = None,
                on_tick: Callable[[JointState, dict], None] | None = None,
                log_plans: bool = False,
                stop: Callable[[], bool] | None = None) -> EpisodeLog:
    """Run one closed-loop episode to the terminal set or the 30 s timeout.

    ``on_tick(state, info)`` is called after every step with alert/plan info
    (used by the live service); ``log_plans`` keeps full per-cycle plan
    summaries in the log instead of just the committed windows.
    """
    rng = np.random.Generator(np.random.Philox(key=np.uint64(config.seed)))
    jitter = float(rng.uniform(-5.0, 5.0)) if config.ic.delta_v == 0.0 else 0.0
    human_lane = config.robot_target_lane
    x = initial_joint_state(config.ic, human_lane=human_lane, road=road,
                            jitter=jitter)
    source = human_source or make_human_source(config, road)
    tau_goal = road.lane_center(config.robot_target_lane)
    ws = config.planner.window_steps

    committed = bootstrap_window(x.robot, road, ws)
    pending: list[RobotAction] | None = None
    fallback: list[RobotAction] | None = None

    trajectory = [x]
    actions: list[tuple[HumanAction, RobotAction]] = []
    feat_rows: list[np.ndarray] = []
    prev_human = np.zeros(2)
    plans: list[dict] = []
    plan_times: list[float] = []
    near_collisions = 0
    deadline_misses = 0
    degraded = False

    for t in range(config.max_steps):
        if is_terminal(x) or (stop is not None and stop()):
            break
        if t % ws == 0:
            if t > 0:
                committed = pending if pending is not None else committed
            # Plan the window starting one window ahead; the committed
            # window is fixed while this computation "runs".
            hist = np.stack(feat_rows) if feat_rows else \
                step_features(x, HumanAction(0, 0), RobotAction(0, 0))[None]
            t_plan0 = time.perf_counter()
            result: PlanResult = plan_cycle(
                sampler, hist, prev_human, x, list(committed), tau_goal,
                seed=config.seed * 1_000_003 + t, config=config.planner,
                road=road)
            elapsed = time.perf_counter() - t_plan0
            plan_times.append(elapsed * 1e3)
            missed = config.real_time and elapsed > PLAN_DEADLINE_S
            if missed and fallback is not None:
                deadline_misses += 1
                pending = fallback
            else:
                if missed:
                    deadline_misses += 1  # no fallback yet: commit late
                ctrl = result.best.realized_controls
                pending = [RobotAction(*ctrl[ws + i]) for i in range(ws)]
                # Deadline fallback is the window after next; with a
                # two-window horizon there is none, so reuse the next window.
                fallback = [RobotAction(*ctrl[2 * ws + i]) for i in range(ws)] \
                    if len(ctrl) >= 3 * ws else pending
            entry = {"tick": t, "deadline_missed": bool(missed),
                     "plan_time_ms": elapsed * 1e3,
                     "committed_next": [[a.s_ddot, a.tau_dddot] for a in pending]}
            if log_plans:
                entry["result"] = result.to_dict()
            else:
                entry["best_plan_code"] = result.best.plan_code
                entry["best_stage2_cost"] = result.best.stage2_cost
                entry["summary"] = result.sampled_futures_summary["best"]
            plans.append(entry)

        u_h = source.act(t, x)
        if isinstance(source, LiveHumanSource) and not source.connected:
            degraded = True
        u_r = committed[t % ws]
        x_next = JointState(step_human(x.human, u_h, road.dt),
                            step_robot(x.robot, u_r, road.dt), x.t + 1)
        feat_rows.append(step_features(x, u_h, u_r))
        prev_human = np.array([u_h.s_ddot, u_h.tau_ddot])
        actions.append((u_h, u_r))
        trajectory.append(x_next)
        x = x_next
        if is_near_collision(x):
            near_collisions += 1
        if on_tick is not None:
            on_tick(x, {
                "alerts": (["overspeed"] if x.human.s_dot > SPEED_ALERT else []),
                "plan": plans[-1] if plans else None,
                "near_collision": is_near_collision(x),
            })

    outcome = label_outcome(trajectory, human_lane=human_lane, road=road)
    trial = Trial(
        id=f"episode-{config.seed}",
        ic=config.ic,
        trajectory=trajectory,
        actions=actions,
        outcome=outcome,
        metadata={
            "seed": config.seed,
            "jitter": jitter,
            "human_start_lane": human_lane,
            "robot_target_lane": config.robot_target_lane,
            "human_source": type(config.human_source).__name__,
        },
    )
    return EpisodeLog(
        trial=trial,
        plans=plans,
        near_collision_steps=near_collisions,
        completed=outcome != "incomplete",
        degraded=degraded,
        deadline_misses=deadline_misses,
        plan_times_ms=plan_times,
    )


# -- batch evaluation --------------------------------------------------------

_WORKER_SAMPLER: FastSampler | None = None


def _worker_init(model_path: str) -> None:
    global _WORKER_SAMPLER
    from .model import BehaviorModel
    _WORKER_SAMPLER = FastSampler(BehaviorModel.load(model_path))


def _run_one(config: EpisodeConfig) -> dict:
    try:
        log = run_episode(config, _WORKER_SAMPLER)
        return {
            "ok": True,
            "outcome": log.trial.outcome,
            "completed": log.completed,
            "near_collision_steps": log.near_collision_steps,
            "deadline_misses": log.deadline_misses,
            "plan_times_ms": log.plan_times_ms,
            "steps": len(log.trial.actions),
            "mean_best_cost": (sum(p["best_stage2_cost"] for p in log.plans)
                               / len(log.plans)) if log.plans else None,
        }
    except Exception as e:  # individual failure recorded, batch continues
        return {"ok": False, "error": f"{type(e).__name__}: {e}"}


def episode_seed(master_seed: int, config_index: int, episode_index: int) -> int:
    """Deterministic per-episode seed, independent of worker scheduling."""
    return master_seed * 1_000_003 + config_index * 7_919 + episode_index


def batch_evaluate(configs: list[EpisodeConfig], episodes_per_config: int,
                   seed: int, model_path: str, workers: int = 1) -> dict:
    """Run many episodes per config cell and summarize outcomes.

    Episode seeds depend only on (seed, cell index, episode index), so the
    report is identical for any worker count.
    """
    jobs: list[tuple[int, EpisodeConfig]] = []
    from dataclasses import replace
    for ci, cfg in enumerate(configs):
        for ei in range(episodes_per_config):
            jobs.append((ci, replace(cfg, seed=episode_seed(seed, ci, ei),
                                     model_path=model_path, real_time=False)))

    results: list[tuple[int, dict]] = []
    if workers <= 1 or not jobs:
        _worker_init(model_path)
        for ci, cfg in jobs:
            results.append((ci, _run_one(cfg)))
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(model_path,)) as pool:
            for (ci, _), res in zip(jobs, pool.map(_run_one,
                                                   [c for _, c in jobs])):
                results.append((ci, res))

    report = {"v": 1, "seed": seed, "episodes_per_config": episodes_per_config,
              "cells": []}
    for ci, cfg in enumerate(configs):
        cell = [r for c, r in results if c == ci]
        ok = [r for r in cell if r["ok"]]
        outcomes: dict[str, int] = {}
        for r in ok:
            outcomes[r["outcome"]] = outcomes.get(r["outcome"], 0) + 1
        n = len(ok)
        times = sorted(tm for r in ok for tm in r["plan_times_ms"])
        cell_row = {
            "ic": {"fast_car_lane": cfg.ic.fast_car_lane, "v1": cfg.ic.v1,
                   "delta_v": cfg.ic.delta_v, "t_co": cfg.ic.t_co},
            "robot_target_lane": cfg.robot_target_lane,
            "episodes": len(cell),
            "failures": len(cell) - n,
            "outcome_fractions": {k: v / n for k, v in outcomes.items()} if n else {},
            "completion_rate": (sum(r["completed"] for r in ok) / n) if n else 0.0,
            "near_collision_episodes": sum(r["near_collision_steps"] > 0 for r in ok),
            "near_collision_steps_total": sum(r["near_collision_steps"] for r in ok),
            "mean_best_cost": (sum(r["mean_best_cost"] for r in ok
                                   if r["mean_best_cost"] is not None) / n) if n else None,
            "plan_time_ms_median": times[len(times) // 2] if times else None,
            "plan_time_ms_p95": times[min(len(times) - 1, math.ceil(0.95 * len(times)) - 1)]
                if times else None,
            "errors": [r["error"] for r in cell if not r["ok"]],
        }
        report["cells"].append(cell_row)
    return report
