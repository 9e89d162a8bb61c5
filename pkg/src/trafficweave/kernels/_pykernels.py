"""Pure-numpy implementations of the planner's hot inner loops.

These mirror the compiled Cython kernels in ``_ckernels.pyx`` exactly; the
active backend is chosen in ``trafficweave.kernels``.  All batched arrays
are float32 and C-contiguous.
"""

from __future__ import annotations

import numpy as np

HUMAN_ACTION_LIMIT = 10.0


def lstm_cell(pre: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fused LSTM cell activation.

    pre: (B, 4H) gate preactivations in [input, forget, cell, output] order.
    c:   (B, H) previous cell state.
    Returns (h_new, c_new).
    """
    H = c.shape[1]
    i = _sigmoid(pre[:, :H])
    f = _sigmoid(pre[:, H:2 * H])
    g = np.tanh(pre[:, 2 * H:3 * H])
    o = _sigmoid(pre[:, 3 * H:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def gmm_sample(weights: np.ndarray, means: np.ndarray, scales: np.ndarray,
               corrs: np.ndarray, u: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Draw one correlated bivariate action per row from a per-row GMM.

    weights: (B, M) simplex rows; means/scales: (B, M, 2); corrs: (B, M);
    u: (B,) uniforms selecting the component; eps: (B, 2) standard normals.
    """
    cum = np.cumsum(weights, axis=1)
    # Right-continuous inverse CDF; guard against cum[-1] slightly < u.
    comp = np.minimum(
        (u[:, None] > cum).sum(axis=1), weights.shape[1] - 1
    )
    rows = np.arange(weights.shape[0])
    m = means[rows, comp]
    s = scales[rows, comp]
    r = corrs[rows, comp]
    out = np.empty_like(m)
    out[:, 0] = m[:, 0] + s[:, 0] * eps[:, 0]
    out[:, 1] = m[:, 1] + s[:, 1] * (r * eps[:, 0] + np.sqrt(1.0 - r * r) * eps[:, 1])
    return out


def score_rollouts(
    human0: np.ndarray,
    human_actions: np.ndarray,
    plan_idx: np.ndarray,
    robot_traj: np.ndarray,
    terminal_idx: np.ndarray,
    tau_goal: float,
    gamma: float,
    dt: float,
    w: np.ndarray,
    human_traj_out: np.ndarray | None = None,
) -> np.ndarray:
    """Roll out sampled human futures against fixed robot trajectories and
    accumulate the discounted running cost per row.

    human0:        (4,) shared current human state [s, tau, s_dot, tau_dot].
    human_actions: (B, N, 2) sampled accelerations, clamped to +-10 in here.
    plan_idx:      (B,) int32 row -> robot plan index.
    robot_traj:    (P, N, 4) per step AFTER stepping: [s, tau, s_dot, s_ddot_u].
    terminal_idx:  (P,) int32 first step index i in 1..N with robot s >= 0,
                   or N+1 if the horizon ends before the cutoff.
    w:             (11,) float64 cost constants:
                   [coll_scale, coll_box_s, coll_box_tau, coll_radius,
                    ctrl_scale, lane_scale, lane_offset, lane_slope,
                    lane_sign, disamb_scale, term_coll_scale].
    Running cost at step i uses the post-step state; steps at/after the
    terminal entry contribute zero except the terminal step itself, which
    contributes the one-off terminal cost.
    Optionally writes the human (s, tau) trajectory into human_traj_out (B, N, 2).
    """
    B, N, _ = human_actions.shape
    (coll_scale, box_s, box_tau, coll_radius, ctrl_scale, lane_scale,
     lane_offset, lane_slope, lane_sign, disamb_scale, term_coll) = w

    s = np.full(B, human0[0], dtype=np.float32)
    tau = np.full(B, human0[1], dtype=np.float32)
    sd = np.full(B, human0[2], dtype=np.float32)
    td = np.full(B, human0[3], dtype=np.float32)

    term = terminal_idx[plan_idx]  # (B,)
    costs = np.zeros(B, dtype=np.float64)
    disc = 1.0
    for i in range(N):
        step = i + 1
        a = np.clip(human_actions[:, i, 0], -HUMAN_ACTION_LIMIT, HUMAN_ACTION_LIMIT)
        at = np.clip(human_actions[:, i, 1], -HUMAN_ACTION_LIMIT, HUMAN_ACTION_LIMIT)
        sd_next = sd + a * np.float32(dt)
        stopping = sd_next < 0.0
        # Integrate s only up to the stopping time where speed hits zero.
        t_stop = np.where(a != 0.0, -sd / np.where(a != 0.0, a, 1.0), 0.0)
        t_int = np.where(stopping, t_stop, np.float32(dt))
        s = s + sd * t_int + np.float32(0.5) * a * t_int * t_int
        sd = np.maximum(sd_next, 0.0)
        tau = tau + td * np.float32(dt) + np.float32(0.5 * dt * dt) * at
        td = td + at * np.float32(dt)
        if human_traj_out is not None:
            human_traj_out[:, i, 0] = s
            human_traj_out[:, i, 1] = tau

        rt = robot_traj[plan_idx, i]  # (B, 4)
        disc *= gamma
        active = step < term
        at_term = step == term
        if not (active.any() or at_term.any()):
            continue
        ds = rt[:, 0] - s
        dtau = rt[:, 1] - tau
        dsd = rt[:, 2] - sd
        # Running cost on the post-step state.
        inside = (np.abs(ds) < box_s) & (np.abs(dtau) < box_tau)
        j_c = np.where(inside, coll_scale * (coll_radius - np.sqrt(ds * ds + dtau * dtau)), 0.0)
        j_a = ctrl_scale * rt[:, 3] * rt[:, 3]
        urgency = np.minimum(lane_offset + rt[:, 0] * lane_slope, 1.0)
        j_l = lane_sign * lane_scale * urgency * np.abs(rt[:, 1] - tau_goal)
        j_d = -disamb_scale * np.minimum(np.maximum(ds * dsd, 0.0), 1.0)
        running = (j_c + j_a + j_l + j_d).astype(np.float64)
        # One-off terminal cost at the entry step.
        near = inside  # same strict box as the near-collision predicate
        j_f = (lane_scale * np.abs(rt[:, 1] - tau_goal)
               + np.where(near, term_coll, 0.0)).astype(np.float64)
        costs += disc * (np.where(active, running, 0.0) + np.where(at_term, j_f, 0.0))
    return costs
