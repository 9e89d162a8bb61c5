"""Synthetic traffic-weaving trials from scripted stochastic drivers.

Stands in for a human-human driving dataset: each trial pairs two scripted
drivers that must swap lanes before the cutoff.  Each driver samples a
latent intent (assert: speed up and pass in front; yield: slow down and
fall in behind) so outcomes are genuinely multimodal, with the
assert-probability logistic in the driver's speed advantage and the
crossover time.  Trials are sliced into (conditioning, human-future)
exemplars, using both agents symmetrically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import (
    DEFAULT_ROAD,
    HumanAction,
    HumanState,
    JointState,
    RoadFrame,
    RobotAction,
    RobotState,
    step_human,
    step_robot,
)
from .features import HORIZON, ConditioningInput, HumanFuture

DELTA_V_CHOICES = (-2.0, 0.0, 2.0)
T_CO_CHOICES = (1.0, 2.0, 3.0)
MAX_TRIAL_STEPS = 300  # 30 s guard against non-converging drivers
SPEED_ALERT = 38.0


@dataclass(frozen=True)
class InitialCondition:
    fast_car_lane: str = "left"   # lane of the faster car (car 1's lane at dv=0)
    v1: float = 29.0
    delta_v: float = 0.0          # v1 - v2, in {0, +-2}
    t_co: float = 0.0             # crossover time; irrelevant (0) when delta_v == 0

    def __post_init__(self) -> None:
        if self.fast_car_lane not in ("left", "right"):
            raise ValueError("fast_car_lane must be 'left' or 'right'")

    def lane_speeds(self) -> tuple[float, float]:
        """(v_left, v_right) start speeds."""
        v_fast, v_slow = self.v1, self.v1 - abs(self.delta_v)
        if self.delta_v == 0.0:
            return self.v1, self.v1
        if self.fast_car_lane == "left":
            return v_fast, v_slow
        return v_slow, v_fast


def sample_initial_condition(seed: int) -> InitialCondition:
    """Uniform over lane x delta_v, with t_co sampled only when delta_v != 0."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    lane = "left" if rng.random() < 0.5 else "right"
    dv = float(DELTA_V_CHOICES[rng.integers(3)])
    t_co = float(T_CO_CHOICES[rng.integers(3)]) if dv != 0.0 else 0.0
    return InitialCondition(fast_car_lane=lane, delta_v=dv, t_co=t_co)


@dataclass(frozen=True)
class ScriptedDriverParams:
    intent: str | None = None          # force 'assert'/'yield'; None samples
    assert_bias: float = 0.0           # logistic intercept
    assert_dv_coeff: float = 1.2       # per m/s of own speed advantage
    assert_tco_coeff: float = 0.6      # per second of (2 - t_co)
    reaction_delay_range: tuple[float, float] = (0.2, 0.6)
    accel_gain: float = 1.0
    target_gap: float = 12.0
    action_noise_std: float = 0.15
    lane_change_trigger_gap: float = 10.0
    speed_limit: float = SPEED_ALERT

    def assert_probability(self, dv_self: float, t_co: float) -> float:
        x = (self.assert_bias + self.assert_dv_coeff * dv_self
             + self.assert_tco_coeff * (2.0 - t_co))
        return 1.0 / (1.0 + math.exp(-x))


@dataclass
class Trial:
    id: str
    ic: InitialCondition
    trajectory: list[JointState]
    actions: list[tuple[HumanAction, RobotAction]]
    outcome: str  # left_passed_front | right_passed_front | incomplete
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.trajectory) != len(self.actions) + 1:
            raise ValueError(
                f"trial {self.id}: trajectory length must be actions length + 1")


class ScriptedDriver:
    """Simple reactive lane-swap policy with a latent assert/yield intent."""

    LANE_KP = 3.5
    LANE_KD = 3.8
    LATERAL_LIMIT = 3.0
    ACCEL_MAX = 3.0
    BRAKE_MAX = 4.0
    FORCE_CHANGE_S = -75.0
    STANDOFF_TIME = 1.5  # seconds after reacting before reconsidering intent

    def __init__(self, params: ScriptedDriverParams, start_speed: float,
                 target_lane_center: float, dv_self: float, t_co: float,
                 rng: np.random.Generator) -> None:
        self.params = params
        self.cruise_speed = start_speed
        self.target_tau = target_lane_center
        if params.intent is not None:
            self.intent = params.intent
        else:
            p = params.assert_probability(dv_self, t_co)
            self.intent = "assert" if rng.random() < p else "yield"
        lo, hi = params.reaction_delay_range
        self.reaction_delay = float(rng.uniform(lo, hi))
        # Matched intents (both assert or both yield) freeze the gap; after a
        # standoff this driver may flip intent once to break the deadlock.
        # A forced intent never flips.
        self.standoff_flip = params.intent is None and bool(rng.random() < 0.5)
        self.standoff_resolved = False
        self.rng = rng
        self.changing = False

    def act(self, t: float, own: tuple[float, float, float, float],
            other: tuple[float, float, float, float]) -> tuple[float, float]:
        """Returns (s_ddot, tau_ddot) given (s, tau, s_dot, tau_dot) tuples."""
        p = self.params
        s, tau, v, tau_dot = own
        s_o, _, v_o, _ = other
        gap = s - s_o

        if t < self.reaction_delay:
            a = 0.0
        elif self.intent == "assert":
            v_des = self.cruise_speed + 3.0 if gap < p.target_gap else self.cruise_speed
            a = p.accel_gain * (v_des - v)
        else:
            v_des = self.cruise_speed - 3.0 if gap > -p.target_gap else self.cruise_speed
            a = p.accel_gain * (v_des - v)
        if v > p.speed_limit:  # speed-discipline emulation
            a = min(a, p.accel_gain * (p.speed_limit - v))
        a = min(max(a, -self.BRAKE_MAX), self.ACCEL_MAX)

        if not self.changing:
            cleared = gap >= p.lane_change_trigger_gap if self.intent == "assert" \
                else gap <= -p.lane_change_trigger_gap
            if not cleared and not self.standoff_resolved \
                    and t > self.reaction_delay + self.STANDOFF_TIME:
                self.standoff_resolved = True
                if self.standoff_flip:
                    self.intent = "yield" if self.intent == "assert" else "assert"
            if cleared or s > self.FORCE_CHANGE_S:
                self.changing = True
        if self.changing:
            lat = self.LANE_KP * (self.target_tau - tau) - self.LANE_KD * tau_dot
            lat = min(max(lat, -self.LATERAL_LIMIT), self.LATERAL_LIMIT)
        else:
            lat = 0.0

        noise = self.rng.normal(0.0, p.action_noise_std, size=2)
        return a + float(noise[0]), lat + float(noise[1])


def initial_joint_state(ic: InitialCondition, human_lane: str,
                        road: RoadFrame = DEFAULT_ROAD,
                        jitter: float = 0.0) -> JointState:
    """Build the starting joint state with the human car in ``human_lane``.

    The slower car leads at the road start; the faster car starts
    |delta_v| * t_co behind it.  At delta_v = 0 both share the road start,
    with ``jitter`` applied to the left car's longitudinal position.
    """
    v_left, v_right = ic.lane_speeds()
    s_left = s_right = road.road_start_s
    if ic.delta_v != 0.0:
        behind = abs(ic.delta_v) * ic.t_co
        if v_left > v_right:
            s_left -= behind
        else:
            s_right -= behind
    else:
        s_left += jitter
    lane_other = "right" if human_lane == "left" else "left"
    if human_lane == "left":
        h = (s_left, v_left)
        r = (s_right, v_right)
    else:
        h = (s_right, v_right)
        r = (s_left, v_left)
    return JointState(
        human=HumanState(s=h[0], tau=road.lane_center(human_lane), s_dot=h[1], tau_dot=0.0),
        robot=RobotState(s=r[0], tau=road.lane_center(lane_other), s_dot=r[1],
                         tau_dot=0.0, tau_ddot=0.0),
        t=0,
    )


def label_outcome(trial_traj: Sequence[JointState], human_lane: str,
                  road: RoadFrame = DEFAULT_ROAD) -> str:
    """Outcome at the first terminal step; incomplete if the swap is unfinished."""
    final = trial_traj[-1]
    if final.robot.s < 0.0:
        return "incomplete"
    robot_lane = "right" if human_lane == "left" else "left"
    human_done = abs(final.human.tau - road.lane_center(robot_lane)) < 0.9
    robot_done = abs(final.robot.tau - road.lane_center(human_lane)) < 0.9
    if not (human_done and robot_done):
        return "incomplete"
    left_s = final.human.s if human_lane == "left" else final.robot.s
    right_s = final.robot.s if human_lane == "left" else final.human.s
    return "left_passed_front" if left_s > right_s else "right_passed_front"


def generate_trial(ic: InitialCondition,
                   params_pair: tuple[ScriptedDriverParams, ScriptedDriverParams],
                   seed: int, road: RoadFrame = DEFAULT_ROAD,
                   trial_id: str | None = None) -> Trial:
    """Run two scripted drivers from the initial condition to the cutoff.

    The human-typed agent starts in the left lane; the robot-typed agent
    (still a scripted driver here, lateral command integrated through the
    jerk channel) starts right.
    """
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    jitter = float(rng.uniform(-5.0, 5.0)) if ic.delta_v == 0.0 else 0.0
    x = initial_joint_state(ic, human_lane="left", road=road, jitter=jitter)

    v_left, v_right = ic.lane_speeds()
    dv_left = v_left - v_right
    driver_h = ScriptedDriver(params_pair[0], v_left, road.lane_center("right"),
                              dv_left, ic.t_co, rng)
    driver_r = ScriptedDriver(params_pair[1], v_right, road.lane_center("left"),
                              -dv_left, ic.t_co, rng)

    trajectory = [x]
    actions: list[tuple[HumanAction, RobotAction]] = []
    dt = road.dt
    for k in range(MAX_TRIAL_STEPS):
        t = k * dt
        h, r = x.human, x.robot
        a_h = driver_h.act(t, (h.s, h.tau, h.s_dot, h.tau_dot),
                           (r.s, r.tau, r.s_dot, r.tau_dot))
        a_r = driver_r.act(t, (r.s, r.tau, r.s_dot, r.tau_dot),
                           (h.s, h.tau, h.s_dot, h.tau_dot))
        u_h = HumanAction(*a_h).clamped()
        # The scripted lateral command is an acceleration; drive the robot's
        # triple integrator with the jerk that realizes it over one step.
        jerk = (min(max(a_r[1], -10.0), 10.0) - r.tau_ddot) / dt
        u_r = RobotAction(s_ddot=min(max(a_r[0], -10.0), 10.0), tau_dddot=jerk)
        x = JointState(step_human(h, u_h, dt), step_robot(r, u_r, dt), x.t + 1)
        trajectory.append(x)
        actions.append((u_h, u_r))
        if x.robot.s >= 0.0:
            break

    outcome = label_outcome(trajectory, human_lane="left", road=road)
    return Trial(
        id=trial_id or f"trial-{seed}",
        ic=ic,
        trajectory=trajectory,
        actions=actions,
        outcome=outcome,
        metadata={
            "seed": seed,
            "jitter": jitter,
            "human_start_lane": "left",
            "intents": [driver_h.intent, driver_r.intent],
            "reaction_delays": [driver_h.reaction_delay, driver_r.reaction_delay],
        },
    )


def _mirror_joint_state(x: JointState, robot_prev_tau_ddot: float) -> JointState:
    """Swap agent roles: the robot-typed car becomes the 'human' and vice versa.

    The new robot state's tau_ddot carries the original human's most recent
    lateral acceleration command so the swapped triple-integrator view stays
    consistent under backward-differenced jerks.
    """
    return JointState(
        human=HumanState(s=x.robot.s, tau=x.robot.tau, s_dot=x.robot.s_dot,
                         tau_dot=x.robot.tau_dot),
        robot=RobotState(s=x.human.s, tau=x.human.tau, s_dot=x.human.s_dot,
                         tau_dot=x.human.tau_dot, tau_ddot=robot_prev_tau_ddot),
        t=x.t,
    )


def _mirror_actions(trial: Trial, road: RoadFrame) -> list[tuple[HumanAction, RobotAction]]:
    """Actions with roles swapped; see slice_exemplars."""
    dt = road.dt
    out = []
    prev_tdd = 0.0
    for i, (u_h, u_r) in enumerate(trial.actions):
        state_r = trial.trajectory[i].robot
        # Robot-typed car as human: effective per-step lateral acceleration.
        eff_tdd = state_r.tau_ddot + 0.5 * u_r.tau_dddot * dt
        new_h = HumanAction(s_ddot=u_r.s_ddot, tau_ddot=eff_tdd)
        # Human-typed car as robot: backward-differenced lateral jerk.
        new_r = RobotAction(s_ddot=u_h.s_ddot, tau_dddot=(u_h.tau_ddot - prev_tdd) / dt)
        prev_tdd = u_h.tau_ddot
        out.append((new_h, new_r))
    return out


def slice_exemplars(trial: Trial, n: int = HORIZON, stride: int = 1,
                    road: RoadFrame = DEFAULT_ROAD
                    ) -> list[tuple[ConditioningInput, HumanFuture]]:
    """Slice one trial into prediction exemplars, both agents as 'human'.

    For a trial with T recorded actions there are max(0, T - n) prediction
    times per agent: history covers steps 0..t and the future covers
    t+1..t+n, so t ranges over 0..T-n-1.
    """
    T = len(trial.actions)
    if T < n + 1:
        return []
    out: list[tuple[ConditioningInput, HumanFuture]] = []

    mirrored_actions = _mirror_actions(trial, road)
    mirrored_states: list[JointState] = []
    prev_tdd = 0.0
    for i, x in enumerate(trial.trajectory):
        if i > 0:
            prev_tdd = trial.actions[i - 1][0].tau_ddot
        mirrored_states.append(_mirror_joint_state(x, prev_tdd))

    for t in range(0, T - n, stride):
        hist_states = trial.trajectory[: t + 1]
        hist_actions = trial.actions[: t + 1]
        future = trial.actions[t + 1: t + 1 + n]
        x_direct = ConditioningInput(
            history_states=hist_states,
            history_actions=hist_actions,
            robot_future=[u_r for _, u_r in future],
        )
        y_direct = HumanFuture([u_h for u_h, _ in future])
        out.append((x_direct, y_direct))

        m_hist_states = mirrored_states[: t + 1]
        m_hist_actions = mirrored_actions[: t + 1]
        m_future = mirrored_actions[t + 1: t + 1 + n]
        x_mirror = ConditioningInput(
            history_states=m_hist_states,
            history_actions=m_hist_actions,
            robot_future=[u_r for _, u_r in m_future],
        )
        y_mirror = HumanFuture([u_h for u_h, _ in m_future])
        out.append((x_mirror, y_mirror))
    return out


def generate_dataset(n_trials: int, seed: int,
                     params_pair: tuple[ScriptedDriverParams, ScriptedDriverParams]
                     | None = None,
                     road: RoadFrame = DEFAULT_ROAD) -> list[Trial]:
    """Generate trials over randomly sampled initial conditions."""
    if params_pair is None:
        params_pair = (ScriptedDriverParams(), ScriptedDriverParams())
    trials = []
    for i in range(n_trials):
        ic = sample_initial_condition(seed * 1_000_003 + i)
        trials.append(generate_trial(ic, params_pair, seed=seed * 7_000_003 + i,
                                     road=road, trial_id=f"trial-{seed}-{i:05d}"))
    return trials
