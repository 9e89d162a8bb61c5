"""Exhaustive two-stage robot action sequence selection.

The 1.5 s horizon is split into five 0.3 s windows.  The first window is
fixed (it is already executing while planning runs); each later window
picks one of four longitudinal accelerations and one of two lateral lane
targets, giving 8^4 = 4096 candidate sequences.  Lateral motion within a
window is the first 0.3 s of a free-final-time minimum-jerk profile toward
the window's target lane centerline, re-solved at each window boundary
along the plan's own trajectory.

Scoring is two-stage Monte Carlo: 16 sampled human responses per plan for
all 4096 plans, then 1024 samples each for the best 32.  Per-plan noise
comes from counter-based substreams keyed by the plan's canonical window
code, so costs are independent of enumeration order and worker layout.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dynamics import DEFAULT_ROAD, JointState, RoadFrame, RobotAction, RobotState
from .lateral import lateral_profile
from .sampler import FastSampler, PlanContext

LONGITUDINAL_ACTIONS = (0.0, 4.0, -3.0, -6.0)
LANE_TARGETS = ("left", "right")


@dataclass(frozen=True)
class CostWeights:
    collision_scale: float = 1000.0
    collision_box_s: float = 8.0
    collision_box_tau: float = 2.0
    collision_radius: float = 9.25
    control_scale: float = 1.0
    lane_scale: float = 500.0
    lane_urgency_offset: float = 1.5
    lane_urgency_slope: float = 1.0 / 150.0
    # +1 treats lateral distance to the goal lane as a penalty; the raw
    # published formula carries a minus sign that would reward distance.
    lane_sign: float = 1.0
    disambiguation_scale: float = 100.0
    terminal_collision_scale: float = 100.0
    gamma: float = 0.9

    def to_array(self) -> np.ndarray:
        return np.array([
            self.collision_scale, self.collision_box_s, self.collision_box_tau,
            self.collision_radius, self.control_scale, self.lane_scale,
            self.lane_urgency_offset, self.lane_urgency_slope, self.lane_sign,
            self.disambiguation_scale, self.terminal_collision_scale,
        ], dtype=np.float64)


@dataclass(frozen=True)
class PlannerConfig:
    longitudinal_actions: tuple[float, ...] = LONGITUDINAL_ACTIONS
    n_windows: int = 5          # total, including the fixed first window
    window_steps: int = 3
    stage1_samples: int = 16
    stage2_samples: int = 1024
    top_k: int = 32
    weights: CostWeights = field(default_factory=CostWeights)

    @property
    def n_free_windows(self) -> int:
        return self.n_windows - 1

    @property
    def horizon(self) -> int:
        return self.n_windows * self.window_steps

    @property
    def n_plans(self) -> int:
        return (2 * len(self.longitudinal_actions)) ** self.n_free_windows


@dataclass(frozen=True)
class ActionWindow:
    longitudinal: float
    lateral_target: str


@dataclass
class CandidatePlan:
    windows: tuple[ActionWindow, ...]
    realized_controls: np.ndarray  # (N, 2) [s_ddot, tau_dddot]
    plan_code: int
    stage1_cost: float
    stage2_cost: float | None = None

    def to_dict(self) -> dict:
        return {
            "windows": [[w.longitudinal, w.lateral_target] for w in self.windows],
            "plan_code": self.plan_code,
            "stage1_cost": self.stage1_cost,
            "stage2_cost": self.stage2_cost,
            "realized_controls": self.realized_controls.tolist(),
        }


@dataclass
class PlanResult:
    best: CandidatePlan
    ranked_top: list[CandidatePlan]
    sampled_futures_summary: dict
    timing_ms: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "best": self.best.to_dict(),
            "ranked_top": [p.to_dict() for p in self.ranked_top],
            "sampled_futures_summary": self.sampled_futures_summary,
            "timing_ms": self.timing_ms,
        }


@dataclass
class PlanSet:
    """Dense arrays describing every enumerated candidate plan."""

    codes: np.ndarray           # (P,) int64 canonical window codes
    controls: np.ndarray        # (P, N, 2) float64 realized [s_ddot, jerk]
    robot_traj: np.ndarray      # (P, N, 4) float32 post-step [s, tau, s_dot, s_ddot_u]
    terminal_idx: np.ndarray    # (P,) int32 first step with s >= 0, else N+1
    windows: list[tuple[ActionWindow, ...]]  # free windows per plan


def bootstrap_window(robot_state: RobotState, road: RoadFrame = DEFAULT_ROAD,
                     window_steps: int = 3) -> list[RobotAction]:
    """Initial fixed window: zero longitudinal, steer toward the nearer lane."""
    mid = 0.5 * (road.left_lane_center_tau + road.right_lane_center_tau)
    target = road.left_lane_center_tau if robot_state.tau >= mid else road.right_lane_center_tau
    prof = lateral_profile(robot_state.tau, robot_state.tau_dot, robot_state.tau_ddot,
                           target, dt=road.dt, n_steps=window_steps)
    return [RobotAction(0.0, j) for j in prof.jerks]


def enumerate_plans(robot_state: RobotState, fixed_window: list[RobotAction],
                    config: PlannerConfig = PlannerConfig(),
                    road: RoadFrame = DEFAULT_ROAD) -> PlanSet:
    """Enumerate all candidate plans with realized controls and robot rollouts.

    The lateral jerk profile is re-solved at each window boundary along the
    plan's own lateral trajectory; since the lateral channel is independent
    of the longitudinal choices, the lateral solves form a binary tree of
    2^(n_free) leaves rather than one solve per plan.
    """
    dt = road.dt
    ws = config.window_steps
    n_free = config.n_free_windows
    n_lon = len(config.longitudinal_actions)
    N = config.horizon

    if len(fixed_window) != ws:
        raise ValueError(f"fixed window must have {ws} controls")

    # Fixed window rollout (shared by every plan).
    tau, tau_dot, tau_ddot = robot_state.tau, robot_state.tau_dot, robot_state.tau_ddot
    s, s_dot = robot_state.s, robot_state.s_dot
    fixed_states = []
    fixed_controls = []
    for u in fixed_window:
        j = u.tau_dddot
        tau = tau + tau_dot * dt + 0.5 * tau_ddot * dt * dt + j * dt ** 3 / 6.0
        tau_dot = tau_dot + tau_ddot * dt + 0.5 * j * dt * dt
        tau_ddot = tau_ddot + j * dt
        s_dot_next = s_dot + u.s_ddot * dt
        if s_dot_next < 0.0:
            t_stop = -s_dot / u.s_ddot if u.s_ddot != 0.0 else 0.0
            s = s + s_dot * t_stop + 0.5 * u.s_ddot * t_stop * t_stop
            s_dot_next = 0.0
        else:
            s = s + s_dot * dt + 0.5 * u.s_ddot * dt * dt
        s_dot = s_dot_next
        fixed_states.append((s, tau, s_dot, u.s_ddot))
        fixed_controls.append((u.s_ddot, j))

    # Lateral binary tree over the free windows.
    lat_paths = [{"state": (tau, tau_dot, tau_ddot), "jerks": [], "taus": [],
                  "targets": []}]
    for _ in range(n_free):
        nxt = []
        for node in lat_paths:
            for target_name in LANE_TARGETS:
                target = road.lane_center(target_name)
                lt, ltd, ltdd = node["state"]
                prof = lateral_profile(lt, ltd, ltdd, target, dt=dt, n_steps=ws)
                taus = []
                for j in prof.jerks:
                    lt = lt + ltd * dt + 0.5 * ltdd * dt * dt + j * dt ** 3 / 6.0
                    ltd = ltd + ltdd * dt + 0.5 * j * dt * dt
                    ltdd = ltdd + j * dt
                    taus.append(lt)
                nxt.append({
                    "state": (lt, ltd, ltdd),
                    "jerks": node["jerks"] + list(prof.jerks),
                    "taus": node["taus"] + taus,
                    "targets": node["targets"] + [target_name],
                })
        lat_paths = nxt

    # Longitudinal product over the free windows (vectorized).
    n_lon_seq = n_lon ** n_free
    lon_digits = np.empty((n_lon_seq, n_free), dtype=np.int64)
    for w in range(n_free):
        lon_digits[:, w] = (np.arange(n_lon_seq) // n_lon ** (n_free - 1 - w)) % n_lon
    lon_acc = np.asarray(config.longitudinal_actions)[lon_digits]  # (n_lon_seq, n_free)
    acc_steps = np.repeat(lon_acc, ws, axis=1)                     # (n_lon_seq, ws*n_free)
    s_arr = np.full(n_lon_seq, s)
    sd_arr = np.full(n_lon_seq, s_dot)
    lon_s = np.empty((n_lon_seq, ws * n_free))
    lon_sd = np.empty((n_lon_seq, ws * n_free))
    for i in range(ws * n_free):
        a = acc_steps[:, i]
        sd_next = sd_arr + a * dt
        stopping = sd_next < 0.0
        t_stop = np.where(a != 0.0, -sd_arr / np.where(a != 0.0, a, 1.0), 0.0)
        t_int = np.where(stopping, t_stop, dt)
        s_arr = s_arr + sd_arr * t_int + 0.5 * a * t_int * t_int
        sd_arr = np.maximum(sd_next, 0.0)
        lon_s[:, i] = s_arr
        lon_sd[:, i] = sd_arr

    # Combine: plan code digits per free window are lon_choice * 2 + lat_choice.
    P = config.n_plans
    n_lat = 2 ** n_free
    plan_lat = np.empty(P, dtype=np.int64)
    plan_lon = np.empty(P, dtype=np.int64)
    codes = np.arange(P, dtype=np.int64)
    base = 2 * n_lon
    lat_idx = np.zeros(P, dtype=np.int64)
    lon_idx = np.zeros(P, dtype=np.int64)
    for w in range(n_free):
        digit = (codes // base ** (n_free - 1 - w)) % base
        lon_idx = lon_idx * n_lon + digit // 2
        lat_idx = lat_idx * 2 + digit % 2
    plan_lat[:] = lat_idx
    plan_lon[:] = lon_idx

    controls = np.empty((P, N, 2), dtype=np.float64)
    robot_traj = np.empty((P, N, 4), dtype=np.float32)
    for i in range(ws):
        controls[:, i, 0] = fixed_controls[i][0]
        controls[:, i, 1] = fixed_controls[i][1]
        robot_traj[:, i, 0] = fixed_states[i][0]
        robot_traj[:, i, 1] = fixed_states[i][1]
        robot_traj[:, i, 2] = fixed_states[i][2]
        robot_traj[:, i, 3] = fixed_states[i][3]

    lat_jerks = np.array([p["jerks"] for p in lat_paths])  # (n_lat, ws*n_free)
    lat_taus = np.array([p["taus"] for p in lat_paths])
    controls[:, ws:, 0] = acc_steps[plan_lon]
    controls[:, ws:, 1] = lat_jerks[plan_lat]
    robot_traj[:, ws:, 0] = lon_s[plan_lon].astype(np.float32)
    robot_traj[:, ws:, 1] = lat_taus[plan_lat].astype(np.float32)
    robot_traj[:, ws:, 2] = lon_sd[plan_lon].astype(np.float32)
    robot_traj[:, ws:, 3] = acc_steps[plan_lon].astype(np.float32)

    # First step index (1-based) where the robot is past the cutoff.
    past = robot_traj[:, :, 0] >= 0.0
    any_past = past.any(axis=1)
    terminal_idx = np.where(any_past, past.argmax(axis=1) + 1, N + 1).astype(np.int32)
    if robot_state.s >= 0.0:
        terminal_idx[:] = 0  # already terminal: no cost accrues at all

    windows = []
    lon_list = config.longitudinal_actions
    for p in range(P):
        ws_list = []
        for w in range(n_free):
            digit = (p // base ** (n_free - 1 - w)) % base
            ws_list.append(ActionWindow(longitudinal=lon_list[digit // 2],
                                        lateral_target=LANE_TARGETS[digit % 2]))
        windows.append(tuple(ws_list))

    return PlanSet(codes=codes, controls=controls, robot_traj=robot_traj,
                   terminal_idx=terminal_idx, windows=windows)


def running_cost(x_t: JointState, u_r: RobotAction, x_next: JointState,
                 w: CostWeights = CostWeights(), tau_goal: float = -1.85) -> float:
    """Scalar reference running cost, evaluated on the post-step state."""
    h, r = x_next.human, x_next.robot
    ds = r.s - h.s
    dtau = r.tau - h.tau
    dsd = r.s_dot - h.s_dot
    j_c = 0.0
    if abs(ds) < w.collision_box_s and abs(dtau) < w.collision_box_tau:
        j_c = w.collision_scale * (w.collision_radius - math.hypot(ds, dtau))
    j_a = w.control_scale * u_r.s_ddot ** 2
    urgency = min(w.lane_urgency_offset + r.s * w.lane_urgency_slope, 1.0)
    j_l = w.lane_sign * w.lane_scale * urgency * abs(r.tau - tau_goal)
    j_d = -w.disambiguation_scale * min(max(ds * dsd, 0.0), 1.0)
    return j_c + j_a + j_l + j_d


def terminal_cost(x: JointState, w: CostWeights = CostWeights(),
                  tau_goal: float = -1.85) -> float:
    """One-off cost at terminal entry: lane error plus near-collision penalty."""
    near = (abs(x.robot.s - x.human.s) < w.collision_box_s
            and abs(x.robot.tau - x.human.tau) < w.collision_box_tau)
    return (w.lane_scale * abs(x.robot.tau - tau_goal)
            + (w.terminal_collision_scale if near else 0.0))


def _quantiles(arr: np.ndarray, qs=(0.1, 0.5, 0.9)) -> list:
    return np.quantile(arr, qs, axis=0).tolist()


def plan_cycle(sampler: FastSampler, hist_feats_raw: np.ndarray,
               prev_human_action_raw: np.ndarray, x0: JointState,
               fixed_window: list[RobotAction], tau_goal: float, seed: int,
               config: PlannerConfig = PlannerConfig(),
               road: RoadFrame = DEFAULT_ROAD,
               summary_plans: int = 4) -> PlanResult:
    """One full planning cycle: enumerate, stage-1 screen, stage-2 rescore."""
    w_arr = config.weights.to_array()
    gamma = config.weights.gamma
    t0 = time.perf_counter()
    plans = enumerate_plans(x0.robot, fixed_window, config, road)
    P = len(plans.codes)
    t_enum = time.perf_counter()

    human0 = np.array([x0.human.s, x0.human.tau, x0.human.s_dot, x0.human.tau_dot])
    h_hist = sampler.encode_history(hist_feats_raw)
    ctx = sampler.plan_context(h_hist, plans.controls, prev_human_action_raw)

    s1 = config.stage1_samples
    actions1, _ = sampler.sample_actions(ctx, plans.codes, s1, seed, stage=1)
    plan_idx1 = np.repeat(np.arange(P, dtype=np.int32), s1)
    costs1 = kernels.score_rollouts(
        human0, actions1, plan_idx1, plans.robot_traj, plans.terminal_idx,
        tau_goal, gamma, road.dt, w_arr)
    stage1_cost = costs1.reshape(P, s1).mean(axis=1)
    t_stage1 = time.perf_counter()

    k = min(config.top_k, P)
    top = np.argsort(stage1_cost, kind="stable")[:k]
    ctx_top = PlanContext(h_x=np.ascontiguousarray(ctx.h_x[top]),
                          rfut_std=np.ascontiguousarray(ctx.rfut_std[top]),
                          prior=np.ascontiguousarray(ctx.prior[top]),
                          prev0_std=ctx.prev0_std)
    s2 = config.stage2_samples
    actions2, _ = sampler.sample_actions(ctx_top, plans.codes[top], s2, seed, stage=2)
    plan_idx2 = np.repeat(np.arange(k, dtype=np.int32), s2)
    human_traj = np.empty((k * s2, config.horizon, 2), dtype=np.float32)
    costs2 = kernels.score_rollouts(
        human0, actions2, plan_idx2,
        np.ascontiguousarray(plans.robot_traj[top]),
        np.ascontiguousarray(plans.terminal_idx[top]),
        tau_goal, gamma, road.dt, w_arr, human_traj)
    stage2_cost = costs2.reshape(k, s2).mean(axis=1)
    t_stage2 = time.perf_counter()

    # Argmin with ties broken by lowest enumeration index.
    min_cost = stage2_cost.min()
    tied = np.flatnonzero(stage2_cost == min_cost)
    best_local = tied[np.argmin(top[tied])]

    ranked = []
    for j in range(k):
        p = int(top[j])
        ranked.append(CandidatePlan(
            windows=plans.windows[p],
            realized_controls=plans.controls[p],
            plan_code=int(plans.codes[p]),
            stage1_cost=float(stage1_cost[p]),
            stage2_cost=float(stage2_cost[j]),
        ))
    best = ranked[int(best_local)]

    summary: dict = {"per_plan": []}
    for j in range(min(summary_plans, k)):
        rows = slice(j * s2, (j + 1) * s2)
        summary["per_plan"].append({
            "plan_code": int(plans.codes[top[j]]),
            "action_s_q": _quantiles(actions2[rows, :, 0]),
            "action_tau_q": _quantiles(actions2[rows, :, 1]),
            "human_s_q": _quantiles(human_traj[rows, :, 0]),
            "human_tau_q": _quantiles(human_traj[rows, :, 1]),
        })
    # Always include the winner's bands for UI overlays.
    rows = slice(int(best_local) * s2, (int(best_local) + 1) * s2)
    summary["best"] = {
        "plan_code": best.plan_code,
        "human_s_q": _quantiles(human_traj[rows, :, 0]),
        "human_tau_q": _quantiles(human_traj[rows, :, 1]),
    }

    timing = {
        "enumerate": (t_enum - t0) * 1e3,
        "stage1": (t_stage1 - t_enum) * 1e3,
        "stage2": (t_stage2 - t_stage1) * 1e3,
        "total": (t_stage2 - t0) * 1e3,
    }
    return PlanResult(best=best, ranked_top=ranked,
                      sampled_futures_summary=summary, timing_ms=timing)
