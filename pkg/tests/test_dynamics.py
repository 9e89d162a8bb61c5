"""State propagation: exactness, clamps, terminal semantics."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficweave.dynamics import (
    DEFAULT_ROAD,
    HumanAction,
    HumanState,
    JointState,
    RobotAction,
    RobotState,
    is_near_collision,
    is_terminal,
    rollout_joint,
    step_human,
    step_robot,
)

finite = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False,
                   allow_infinity=False)
speeds = st.floats(min_value=0.0, max_value=45.0, allow_nan=False)
accels = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)


def close(a: float, b: float, tol: float = 1e-12) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


@settings(max_examples=200, deadline=None)
@given(s=finite, tau=finite, sd=speeds, td=finite, a=accels, at=accels)
def test_human_step_composes_exactly(s, tau, sd, td, a, at):
    """Two half steps equal one full step to machine precision, including
    when the forward-speed clamp activates mid-step."""
    x = HumanState(s, tau, sd, td)
    u = HumanAction(a, at)
    full = step_human(x, u, 0.1)
    half = step_human(step_human(x, u, 0.05), u, 0.05)
    for f in ("s", "tau", "s_dot", "tau_dot"):
        assert close(getattr(full, f), getattr(half, f)), f


@settings(max_examples=200, deadline=None)
@given(s=finite, tau=finite, sd=speeds, td=finite, tdd=finite, a=accels, j=accels)
def test_robot_step_composes_exactly(s, tau, sd, td, tdd, a, j):
    x = RobotState(s, tau, sd, td, tdd)
    u = RobotAction(a, j)
    full = step_robot(x, u, 0.1)
    half = step_robot(step_robot(x, u, 0.05), u, 0.05)
    for f in ("s", "tau", "s_dot", "tau_dot", "tau_ddot"):
        assert close(getattr(full, f), getattr(half, f)), f


def test_human_matches_constant_acceleration_closed_form():
    x = HumanState(s=-100.0, tau=-1.85, s_dot=29.0, tau_dot=0.5)
    u = HumanAction(2.0, -1.0)
    nxt = step_human(x, u, 0.1)
    assert nxt.s == pytest.approx(-100.0 + 29.0 * 0.1 + 0.5 * 2.0 * 0.01, abs=1e-15)
    assert nxt.s_dot == pytest.approx(29.2)
    assert nxt.tau == pytest.approx(-1.85 + 0.05 - 0.005)
    assert nxt.tau_dot == pytest.approx(0.4)


def test_robot_lateral_triple_integrator_closed_form():
    x = RobotState(s=-100.0, tau=-5.55, s_dot=30.0, tau_dot=0.2, tau_ddot=0.4)
    u = RobotAction(0.0, 6.0)
    dt = 0.1
    nxt = step_robot(x, u, dt)
    assert nxt.tau == pytest.approx(
        -5.55 + 0.2 * dt + 0.5 * 0.4 * dt**2 + 6.0 * dt**3 / 6.0, abs=1e-15)
    assert nxt.tau_dot == pytest.approx(0.2 + 0.4 * dt + 0.5 * 6.0 * dt**2)
    assert nxt.tau_ddot == pytest.approx(0.4 + 0.6)


@settings(max_examples=200, deadline=None)
@given(sd=st.floats(min_value=0.0, max_value=1.0), a=accels)
def test_forward_speed_never_negative(sd, a):
    nxt = step_human(HumanState(0.0, 0.0, sd, 0.0), HumanAction(a, 0.0), 0.1)
    assert nxt.s_dot >= 0.0


def test_speed_clamp_stops_at_stopping_point():
    """Braking through zero speed must not move the car backwards: the
    position advances only to where the car actually stops."""
    x = HumanState(s=0.0, tau=0.0, s_dot=0.5, tau_dot=0.0)
    nxt = step_human(x, HumanAction(-10.0, 0.0), 0.1)
    # Stops at t = 0.05 s; distance = 0.5*0.05 - 0.5*10*0.05^2 = 0.0125
    assert nxt.s == pytest.approx(0.0125, abs=1e-15)
    assert nxt.s_dot == 0.0
    # A further braking step must not move it at all.
    again = step_human(nxt, HumanAction(-10.0, 0.0), 0.1)
    assert again.s == nxt.s


def test_step_rejects_nonpositive_dt_and_nonfinite():
    x = HumanState(0.0, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        step_human(x, HumanAction(0.0, 0.0), 0.0)
    with pytest.raises(ValueError):
        step_human(HumanState(math.nan, 0.0, 1.0, 0.0), HumanAction(0.0, 0.0), 0.1)
    with pytest.raises(ValueError):
        step_robot(RobotState(0.0, 0.0, 1.0, 0.0, 0.0),
                   RobotAction(math.inf, 0.0), 0.1)


def test_terminal_set_and_near_collision_boundaries():
    h = HumanState(0.0, -1.85, 30.0, 0.0)
    assert is_terminal(JointState(h, RobotState(0.0, -5.55, 30, 0, 0)))
    assert not is_terminal(JointState(h, RobotState(-1e-9, -5.55, 30, 0, 0)))
    # Strict box: exactly on the boundary is NOT a near collision.
    r_on_edge = RobotState(8.0, -1.85, 30, 0, 0)
    assert not is_near_collision(JointState(h, r_on_edge))
    r_tau_edge = RobotState(4.0, -1.85 - 2.0, 30, 0, 0)
    assert not is_near_collision(JointState(h, r_tau_edge))
    r_inside = RobotState(7.999, -1.85 + 1.999, 30, 0, 0)
    assert is_near_collision(JointState(h, r_inside))


def test_rollout_holds_terminal_state():
    x0 = JointState(HumanState(-5.0, -1.85, 30.0, 0.0),
                    RobotState(-0.5, -5.55, 30.0, 0.0, 0.0), t=0)
    u_h = [HumanAction(0.0, 0.0)] * 5
    u_r = [RobotAction(0.0, 0.0)] * 5
    traj = rollout_joint(x0, u_h, u_r, 0.1)
    assert len(traj) == 6
    # Robot crosses the cutoff on step 1; every later state is identical.
    assert traj[1].robot.s >= 0.0
    for x in traj[2:]:
        assert x == traj[1]


def test_rollout_rejects_mismatched_action_lengths():
    x0 = JointState(HumanState(-5, 0, 30, 0), RobotState(-5, 0, 30, 0, 0))
    with pytest.raises(ValueError):
        rollout_joint(x0, [HumanAction(0, 0)], [])


def test_road_frame_lane_centers():
    assert DEFAULT_ROAD.lane_center("left") == -1.85
    assert DEFAULT_ROAD.lane_center("right") == pytest.approx(-5.55)
    with pytest.raises(ValueError):
        DEFAULT_ROAD.lane_center("middle")


def test_action_clamp():
    a = HumanAction(25.0, -25.0).clamped()
    assert (a.s_ddot, a.tau_ddot) == (10.0, -10.0)
