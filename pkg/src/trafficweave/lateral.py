"""Free-final-time minimum-jerk steering profiles for the robot's lateral axis.

Each 0.3 s action window steers the lateral triple-integrator state
(tau, tau_dot, tau_ddot) toward rest on a target lane centerline
(tau_target, 0, 0).  The continuous-time problem minimizes

    cost(t_f) = t_f + integral_0^{t_f} jerk(t)^2 / 1000 dt

over the free final time t_f.  For a fixed t_f the optimal trajectory is
the quintic polynomial matching the boundary conditions; cost(t_f) has a
closed form, which we minimize by a coarse scan plus golden-section
refinement.  Only the first window (3 steps of 0.1 s) of the optimal
profile is executed before replanning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["LateralProfile", "lateral_profile", "profile_cost", "solve_tf_grid"]

TF_MIN = 0.1
TF_MAX = 10.0
JERK_COST_SCALE = 1000.0
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class LateralProfile:
    t_f: float
    jerks: tuple[float, ...]
    coeffs: tuple[float, float, float, float, float, float]


def _quintic_coeffs(tau: float, tau_dot: float, tau_ddot: float,
                    target: float, T: float) -> tuple[float, ...]:
    """Quintic p(t) from (tau, tau_dot, tau_ddot) at 0 to (target, 0, 0) at T."""
    d1 = target - tau - tau_dot * T - 0.5 * tau_ddot * T * T
    d2 = -tau_dot - tau_ddot * T
    d3 = -tau_ddot
    T2 = T * T
    T3 = T2 * T
    c3 = (20.0 * d1 - 8.0 * d2 * T + d3 * T2) / (2.0 * T3)
    c4 = (-15.0 * d1 + 7.0 * d2 * T - d3 * T2) / (T2 * T2)
    c5 = (12.0 * d1 - 6.0 * d2 * T + d3 * T2) / (2.0 * T3 * T2)
    return (tau, tau_dot, 0.5 * tau_ddot, c3, c4, c5)


def profile_cost(tau: float, tau_dot: float, tau_ddot: float,
                 target: float, T: float) -> float:
    """Closed-form cost T + integral of jerk^2 / 1000 for the fixed-T quintic."""
    _, _, _, c3, c4, c5 = _quintic_coeffs(tau, tau_dot, tau_ddot, target, T)
    # jerk(t) = A + B t + C t^2
    a = 6.0 * c3
    b = 24.0 * c4
    c = 60.0 * c5
    T2 = T * T
    integral = (
        a * a * T
        + a * b * T2
        + (b * b / 3.0 + 2.0 * a * c / 3.0) * T * T2
        + (b * c / 2.0) * T2 * T2
        + (c * c / 5.0) * T * T2 * T2
    )
    return T + integral / JERK_COST_SCALE


def solve_tf_grid(tau: float, tau_dot: float, tau_ddot: float, target: float,
                  grid_step: float = 1e-3) -> float:
    """Brute-force reference: minimize cost over a dense t_f grid."""
    best_tf, best_cost = TF_MIN, math.inf
    n = int(round((TF_MAX - TF_MIN) / grid_step))
    for i in range(n + 1):
        T = TF_MIN + i * grid_step
        c = profile_cost(tau, tau_dot, tau_ddot, target, T)
        if c < best_cost:
            best_cost, best_tf = c, T
    return best_tf


def _accel(coeffs: tuple[float, ...], t: float, T: float) -> float:
    if t >= T:
        return 0.0  # at rest on the target past t_f
    _, _, c2, c3, c4, c5 = coeffs
    return 2.0 * c2 + 6.0 * c3 * t + 12.0 * c4 * t * t + 20.0 * c5 * t * t * t


def lateral_profile(tau: float, tau_dot: float, tau_ddot: float, target: float,
                    dt: float = 0.1, n_steps: int = 3,
                    coarse_points: int = 128) -> LateralProfile:
    """Optimal free-final-time profile, discretized to per-step average jerks.

    The coarse scan brackets the global minimum (the closed-form cost can be
    multimodal for awkward boundary conditions), then golden-section search
    refines within the bracketing interval.
    """
    if not all(map(math.isfinite, (tau, tau_dot, tau_ddot, target))):
        raise ValueError("non-finite lateral boundary condition")

    step = (TF_MAX - TF_MIN) / coarse_points
    costs = [profile_cost(tau, tau_dot, tau_ddot, target, TF_MIN + i * step)
             for i in range(coarse_points + 1)]
    k = min(range(len(costs)), key=costs.__getitem__)
    lo = max(TF_MIN, TF_MIN + (k - 1) * step)
    hi = min(TF_MAX, TF_MIN + (k + 1) * step)

    # Golden-section refinement on [lo, hi].
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc = profile_cost(tau, tau_dot, tau_ddot, target, c)
    fd = profile_cost(tau, tau_dot, tau_ddot, target, d)
    while b - a > 1e-6:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = profile_cost(tau, tau_dot, tau_ddot, target, c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = profile_cost(tau, tau_dot, tau_ddot, target, d)
    t_f = 0.5 * (a + b)

    coeffs = _quintic_coeffs(tau, tau_dot, tau_ddot, target, t_f)
    jerks = []
    for i in range(n_steps):
        a0 = _accel(coeffs, i * dt, t_f)
        a1 = _accel(coeffs, (i + 1) * dt, t_f)
        jerks.append((a1 - a0) / dt)
    return LateralProfile(t_f=t_f, jerks=tuple(jerks), coeffs=coeffs)
