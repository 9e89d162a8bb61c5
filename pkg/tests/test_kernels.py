"""Hot-loop kernels: compiled/fallback parity and reference semantics."""

import numpy as np
import pytest

from trafficweave import kernels
from trafficweave.kernels import _pykernels
from trafficweave.dynamics import (
    HumanAction,
    HumanState,
    JointState,
    RobotAction,
    RobotState,
    rollout_joint,
)
from trafficweave.planner import CostWeights, running_cost, terminal_cost

try:
    from trafficweave.kernels import _ckernels
    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False

RNG = np.random.Generator(np.random.Philox(key=np.uint64(42)))


def _lstm_inputs(B=17, H=9):
    pre = RNG.normal(0, 2, size=(B, 4 * H)).astype(np.float32)
    c = RNG.normal(0, 1, size=(B, H)).astype(np.float32)
    return pre, c


def test_lstm_cell_matches_torch():
    """The fused kernel reproduces torch.nn.LSTMCell given the same
    preactivations (torch gate order: input, forget, cell, output)."""
    import torch
    B, H = 5, 8
    pre, c = _lstm_inputs(B, H)
    h, c_new = kernels.lstm_cell(pre, c.copy())
    cell = torch.nn.LSTMCell(1, H)
    with torch.no_grad():
        cell.weight_ih.zero_()
        cell.weight_hh.zero_()
        cell.bias_hh.zero_()
    h_ref = []
    c_ref = []
    for b in range(B):
        with torch.no_grad():
            cell.bias_ih.copy_(torch.as_tensor(pre[b]))
            hh, cc = cell(torch.zeros(1, 1),
                          (torch.zeros(1, H), torch.as_tensor(c[b]).view(1, H)))
        h_ref.append(hh[0].numpy())
        c_ref.append(cc[0].numpy())
    np.testing.assert_allclose(h, np.stack(h_ref), rtol=0, atol=1e-6)
    np.testing.assert_allclose(c_new, np.stack(c_ref), rtol=0, atol=1e-6)


def _gmm_inputs(B=64, M=3):
    w = RNG.random((B, M)).astype(np.float32) + 0.1
    w /= w.sum(axis=1, keepdims=True)
    means = RNG.normal(0, 2, size=(B, M, 2)).astype(np.float32)
    scales = (0.1 + RNG.random((B, M, 2))).astype(np.float32)
    corrs = (RNG.random((B, M)).astype(np.float32) * 1.8 - 0.9)
    u = RNG.random(B, dtype=np.float32)
    eps = RNG.standard_normal((B, 2)).astype(np.float32)
    return w, means, scales, corrs, u, eps


def test_gmm_sample_reference_semantics():
    """Component choice is the inverse CDF of the weights; the draw is the
    standard correlated bivariate construction."""
    w, means, scales, corrs, u, eps = _gmm_inputs()
    out = kernels.gmm_sample(w, means, scales, corrs, u, eps)
    cum = np.cumsum(w, axis=1)
    for b in range(w.shape[0]):
        k = int(np.searchsorted(cum[b], u[b], side="right"))
        k = min(k, w.shape[1] - 1)
        m, s, r = means[b, k], scales[b, k], corrs[b, k]
        a1 = m[0] + s[0] * eps[b, 0]
        a2 = m[1] + s[1] * (r * eps[b, 0] + np.sqrt(1 - r * r) * eps[b, 1])
        assert out[b, 0] == pytest.approx(a1, abs=1e-6)
        assert out[b, 1] == pytest.approx(a2, abs=1e-6)


def test_gmm_sample_degenerate_weight_edge():
    """u == 1.0 (or cumulative weights summing slightly under 1) still picks
    the last component instead of indexing out of range."""
    w = np.array([[0.3, 0.7 - 1e-7]], dtype=np.float32)
    means = np.zeros((1, 2, 2), dtype=np.float32)
    means[0, 1] = 5.0
    scales = np.full((1, 2, 2), 0.1, dtype=np.float32)
    corrs = np.zeros((1, 2), dtype=np.float32)
    out = kernels.gmm_sample(w, means, scales, corrs,
                             np.array([1.0], dtype=np.float32),
                             np.zeros((1, 2), dtype=np.float32))
    assert out[0, 0] == pytest.approx(5.0)


def _rollout_inputs(B=40, N=15, P=6, seed=3):
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    human0 = np.array([-120.0, -1.85, 29.0, 0.0])
    actions = rng.normal(0, 3, size=(B, N, 2)).astype(np.float32)
    actions[0, :, 0] = -15.0  # exercise the action clamp and speed floor
    plan_idx = (np.arange(B) % P).astype(np.int32)

    # Build plausible robot trajectories by integrating random controls.
    robot_traj = np.empty((P, N, 4), dtype=np.float32)
    terminal_idx = np.empty(P, dtype=np.int32)
    controls = rng.normal(0, 2, size=(P, N, 2))
    for p in range(P):
        # Spread start positions so some plans cross the cutoff mid-horizon.
        x = RobotState(-121.0 + 40.0 * p / P * 3, -5.55, 30.0 + p, 0.0, 0.0)
        term = N + 1
        for i in range(N):
            x = _step_robot_np(x, controls[p, i])
            robot_traj[p, i] = [x.s, x.tau, x.s_dot, controls[p, i, 0]]
            if x.s >= 0 and term == N + 1:
                term = i + 1
        terminal_idx[p] = term
    return human0, actions, plan_idx, robot_traj, terminal_idx, controls


def _step_robot_np(x: RobotState, u) -> RobotState:
    from trafficweave.dynamics import step_robot
    return step_robot(x, RobotAction(float(u[0]), float(u[1])), 0.1)


def scalar_rollout_cost(human0, actions, robot_traj, terminal_idx, controls,
                        tau_goal, gamma, w: CostWeights):
    """Independent oracle: python-scalar rollout + per-step cost functions."""
    N = actions.shape[0]
    x_h = HumanState(*map(float, human0))
    total = 0.0
    disc = 1.0
    for i in range(N):
        u = HumanAction(float(actions[i, 0]), float(actions[i, 1])).clamped()
        from trafficweave.dynamics import step_human
        x_h = step_human(x_h, u, 0.1)
        disc *= gamma
        step = i + 1
        x_r = RobotState(float(robot_traj[i, 0]), float(robot_traj[i, 1]),
                         float(robot_traj[i, 2]), 0.0, 0.0)
        joint = JointState(x_h, x_r)
        if step < terminal_idx:
            u_r = RobotAction(float(controls[i, 0]), float(controls[i, 1]))
            total += disc * running_cost(joint, u_r, joint, w, tau_goal)
        elif step == terminal_idx:
            total += disc * terminal_cost(joint, w, tau_goal)
    return total


def test_score_rollouts_matches_scalar_oracle():
    human0, actions, plan_idx, robot_traj, terminal_idx, controls = _rollout_inputs()
    w = CostWeights()
    costs = kernels.score_rollouts(human0, actions, plan_idx, robot_traj,
                                   terminal_idx, -1.85, w.gamma, 0.1,
                                   w.to_array())
    for b in range(0, actions.shape[0], 7):
        p = plan_idx[b]
        ref = scalar_rollout_cost(human0, actions[b], robot_traj[p],
                                  int(terminal_idx[p]), controls[p],
                                  -1.85, w.gamma, w)
        assert costs[b] == pytest.approx(ref, rel=1e-4, abs=1e-3), b


def test_score_rollouts_human_trajectory_output():
    human0, actions, plan_idx, robot_traj, terminal_idx, _ = _rollout_inputs(B=8)
    out = np.empty((8, 15, 2), dtype=np.float32)
    kernels.score_rollouts(human0, actions, plan_idx, robot_traj,
                           terminal_idx, -1.85, 0.9, 0.1,
                           CostWeights().to_array(), out)
    # Re-integrate one row with the exact scalar dynamics.
    from trafficweave.dynamics import step_human
    x = HumanState(*map(float, human0))
    for i in range(15):
        u = HumanAction(float(actions[3, i, 0]), float(actions[3, i, 1])).clamped()
        x = step_human(x, u, 0.1)
        assert out[3, i, 0] == pytest.approx(x.s, rel=1e-5)
        assert out[3, i, 1] == pytest.approx(x.tau, rel=1e-4, abs=1e-4)


def test_zero_after_terminal_and_terminal_cost_once():
    """A plan already past the cutoff at step 1 accrues only the one-off
    terminal cost, discounted once."""
    human0 = np.array([-100.0, -1.85, 29.0, 0.0])
    actions = np.zeros((1, 15, 2), dtype=np.float32)
    robot_traj = np.zeros((1, 15, 4), dtype=np.float32)
    robot_traj[0, :, 0] = 5.0      # past cutoff the whole horizon
    robot_traj[0, :, 1] = -5.55    # 3.7 m from the left-lane goal
    robot_traj[0, :, 2] = 30.0
    terminal_idx = np.array([1], dtype=np.int32)
    w = CostWeights()
    costs = kernels.score_rollouts(human0, actions, np.zeros(1, np.int32),
                                   robot_traj, terminal_idx, -1.85, 0.9, 0.1,
                                   w.to_array())
    assert costs[0] == pytest.approx(0.9 * 500.0 * 3.7, rel=1e-5)


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled backend unavailable")
class TestBackendParity:
    def test_lstm_cell_parity(self):
        pre, c = _lstm_inputs(33, 16)
        h1, c1 = _ckernels.lstm_cell(pre, c.copy())
        h2, c2 = _pykernels.lstm_cell(pre, c.copy())
        np.testing.assert_allclose(h1, h2, rtol=0, atol=1e-6)
        np.testing.assert_allclose(c1, c2, rtol=0, atol=1e-6)

    def test_gmm_sample_parity(self):
        args = _gmm_inputs(256, 2)
        np.testing.assert_allclose(_ckernels.gmm_sample(*args),
                                   _pykernels.gmm_sample(*args),
                                   rtol=0, atol=2e-6)

    def test_score_rollouts_parity(self):
        human0, actions, plan_idx, robot_traj, terminal_idx, _ = _rollout_inputs(
            B=128, seed=11)
        w = CostWeights().to_array()
        c1 = _ckernels.score_rollouts(human0, actions, plan_idx, robot_traj,
                                      terminal_idx, -1.85, 0.9, 0.1, w)
        c2 = _pykernels.score_rollouts(human0, actions, plan_idx, robot_traj,
                                       terminal_idx, -1.85, 0.9, 0.1, w)
        np.testing.assert_allclose(c1, c2, rtol=1e-6, atol=1e-4)

    def test_backend_flag_consistent(self):
        assert kernels.BACKEND in ("cython", "python")
