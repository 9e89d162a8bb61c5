"""Road frame, agent state/action types and exact discrete-time propagation.

The two cars live in a straight two-lane road coordinate system: ``s`` is
longitudinal position (0 at the highway cutoff, negative before it) and
``tau`` is lateral position (0 at the left-most extent of the left lane,
negative to the right).  The human car is a double integrator in both axes;
the robot car is a double integrator longitudinally and a triple integrator
laterally so its steering command stays continuous.

All step functions integrate the piecewise-constant input exactly
(zero-order hold), so composing two half steps reproduces a full step to
machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

__all__ = [
    "RoadFrame",
    "HumanState",
    "HumanAction",
    "RobotState",
    "RobotAction",
    "JointState",
    "step_human",
    "step_robot",
    "rollout_joint",
    "is_terminal",
    "is_near_collision",
    "DEFAULT_ROAD",
]

# Sanity clamp on human accelerations; the scenario never needs more.
HUMAN_ACTION_LIMIT = 10.0


@dataclass(frozen=True)
class RoadFrame:
    """Geometry and timing constants of the weaving scenario."""

    cutoff_s: float = 0.0
    road_start_s: float = -135.0
    lane_width: float = 3.7
    left_lane_center_tau: float = -1.85
    dt: float = 0.1

    @property
    def right_lane_center_tau(self) -> float:
        return self.left_lane_center_tau - self.lane_width

    def lane_center(self, lane: str) -> float:
        if lane == "left":
            return self.left_lane_center_tau
        if lane == "right":
            return self.right_lane_center_tau
        raise ValueError(f"unknown lane {lane!r}")


DEFAULT_ROAD = RoadFrame()


def _require_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {v!r} in dynamics input")


@dataclass(frozen=True)
class HumanState:
    s: float
    tau: float
    s_dot: float
    tau_dot: float


@dataclass(frozen=True)
class HumanAction:
    s_ddot: float
    tau_ddot: float

    def clamped(self, limit: float = HUMAN_ACTION_LIMIT) -> "HumanAction":
        return HumanAction(
            min(max(self.s_ddot, -limit), limit),
            min(max(self.tau_ddot, -limit), limit),
        )


@dataclass(frozen=True)
class RobotState:
    s: float
    tau: float
    s_dot: float
    tau_dot: float
    tau_ddot: float


@dataclass(frozen=True)
class RobotAction:
    s_ddot: float
    tau_dddot: float


@dataclass(frozen=True)
class JointState:
    human: HumanState
    robot: RobotState
    t: int = 0


def step_human(x: HumanState, u: HumanAction, dt: float) -> HumanState:
    """Advance the human double integrator one step of length ``dt``.

    Exact zero-order-hold integration; forward speed is clamped at zero
    (the highway scenario never reverses).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    _require_finite(x.s, x.tau, x.s_dot, x.tau_dot, u.s_ddot, u.tau_ddot)
    s_dot_next = x.s_dot + u.s_ddot * dt
    if s_dot_next < 0.0:
        # Stop exactly at zero speed: integrate s only up to the stopping time.
        t_stop = -x.s_dot / u.s_ddot if u.s_ddot != 0.0 else 0.0
        s_next = x.s + x.s_dot * t_stop + 0.5 * u.s_ddot * t_stop * t_stop
        s_dot_next = 0.0
    else:
        s_next = x.s + x.s_dot * dt + 0.5 * u.s_ddot * dt * dt
    return HumanState(
        s=s_next,
        tau=x.tau + x.tau_dot * dt + 0.5 * u.tau_ddot * dt * dt,
        s_dot=s_dot_next,
        tau_dot=x.tau_dot + u.tau_ddot * dt,
    )


def step_robot(x: RobotState, u: RobotAction, dt: float) -> RobotState:
    """Advance the robot: ZOH double integrator in s, triple integrator in tau."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    _require_finite(x.s, x.tau, x.s_dot, x.tau_dot, x.tau_ddot, u.s_ddot, u.tau_dddot)
    s_dot_next = x.s_dot + u.s_ddot * dt
    if s_dot_next < 0.0:
        t_stop = -x.s_dot / u.s_ddot if u.s_ddot != 0.0 else 0.0
        s_next = x.s + x.s_dot * t_stop + 0.5 * u.s_ddot * t_stop * t_stop
        s_dot_next = 0.0
    else:
        s_next = x.s + x.s_dot * dt + 0.5 * u.s_ddot * dt * dt
    j = u.tau_dddot
    return RobotState(
        s=s_next,
        tau=x.tau + x.tau_dot * dt + 0.5 * x.tau_ddot * dt * dt + j * dt * dt * dt / 6.0,
        s_dot=s_dot_next,
        tau_dot=x.tau_dot + x.tau_ddot * dt + 0.5 * j * dt * dt,
        tau_ddot=x.tau_ddot + j * dt,
    )


def is_terminal(x: JointState) -> bool:
    """The interaction ends once the robot crosses the cutoff (s_r >= 0)."""
    return bool(x.robot.s >= 0.0)


def is_near_collision(x: JointState) -> bool:
    """Strict box predicate |ds| < 8 and |dtau| < 2 on the joint state."""
    ds = x.robot.s - x.human.s
    dtau = x.robot.tau - x.human.tau
    return bool(abs(ds) < 8.0 and abs(dtau) < 2.0)


def rollout_joint(
    x0: JointState,
    u_h_seq: Sequence[HumanAction],
    u_r_seq: Sequence[RobotAction],
    dt: float = DEFAULT_ROAD.dt,
) -> list[JointState]:
    """Propagate the joint state under given action sequences.

    Returns len(u_h_seq) + 1 states including ``x0``.  Once the terminal set
    is entered the state is held constant (but still emitted) so that
    fixed-horizon batches stay rectangular.
    """
    if len(u_h_seq) != len(u_r_seq):
        raise ValueError(
            f"action sequence length mismatch: {len(u_h_seq)} vs {len(u_r_seq)}"
        )
    out = [x0]
    x = x0
    for u_h, u_r in zip(u_h_seq, u_r_seq):
        if is_terminal(x):
            # Hold the terminal state (t included) so post-terminal indices
            # are exact copies of the entry state.
            out.append(x)
            continue
        x = JointState(step_human(x.human, u_h, dt), step_robot(x.robot, u_r, dt), x.t + 1)
        out.append(x)
    return out
