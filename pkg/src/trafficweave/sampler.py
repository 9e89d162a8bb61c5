"""Batched numpy sampling path for the trained behavior model.

Training and exact likelihood run in torch; planning-time sampling runs
here on float32 numpy arrays so tens of thousands of human futures can be
drawn per planning cycle on the CPU.  The history encoding is computed once
per cycle and shared across all candidate robot futures; only the
robot-future encoder branch and the autoregressive decoder re-run per plan.

All randomness is counter-based: every (plan, stage) pair owns a Philox
substream keyed by the plan's canonical code, so costs are independent of
plan enumeration order and of how work is distributed across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .features import ConditioningInput, history_features, robot_future_array
from .model import BehaviorModel


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def plan_noise(seed: int, stage: int, plan_codes: np.ndarray, samples: int,
               horizon: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-plan Philox noise for sampling: z uniforms, component uniforms,
    and standard normals, keyed by (seed, stage, plan code)."""
    P = len(plan_codes)
    zu = np.empty((P, samples), dtype=np.float32)
    comp_u = np.empty((P, samples, horizon), dtype=np.float32)
    eps = np.empty((P, samples, horizon, 2), dtype=np.float32)
    for i, code in enumerate(plan_codes):
        key = np.array([np.uint64(seed), np.uint64((stage << 48) + int(code))],
                       dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        zu[i] = rng.random(samples, dtype=np.float32)
        comp_u[i] = rng.random((samples, horizon), dtype=np.float32)
        eps[i] = rng.standard_normal((samples, horizon, 2), dtype=np.float32)
    return zu, comp_u, eps


@dataclass
class PlanContext:
    """Per-cycle encoding shared by both scoring stages."""

    h_x: np.ndarray        # (P, 2H)
    rfut_std: np.ndarray   # (P, N, 2)
    prior: np.ndarray      # (P, K)
    prev0_std: np.ndarray  # (2,)


class FastSampler:
    """Float32 numpy mirror of the torch model's generative path."""

    def __init__(self, model: BehaviorModel) -> None:
        cfg = model.config
        self.config = cfg
        sd = {k: v.detach().numpy().astype(np.float32) for k, v in model.state_dict().items()}
        self.feat_mean = sd["feat_mean"]
        self.feat_std = sd["feat_std"]
        self.act_mean = self.feat_mean[12:14]
        self.act_std = self.feat_std[12:14]
        self.ract_mean = self.feat_mean[14:16]
        self.ract_std = self.feat_std[14:16]
        self.class_onehot = sd["class_onehot"]

        self.ehist_wih = sd["enc_hist.weight_ih"]
        self.ehist_whh = sd["enc_hist.weight_hh"]
        self.ehist_b = sd["enc_hist.bias_ih"] + sd["enc_hist.bias_hh"]
        self.efut_wih = sd["enc_fut.weight_ih"]
        self.efut_whh = sd["enc_fut.weight_hh"]
        self.efut_b = sd["enc_fut.bias_ih"] + sd["enc_fut.bias_hh"]
        self.prior_w1 = sd["prior_head.0.weight"]
        self.prior_b1 = sd["prior_head.0.bias"]
        self.prior_w2 = sd["prior_head.2.weight"]
        self.prior_b2 = sd["prior_head.2.bias"]

        Z = cfg.latent.onehot_width
        dec_wih = sd["decoder.weight_ih"]  # (4H, 4 + Z + 2H)
        self.dec_w_prev = dec_wih[:, 0:2]
        self.dec_w_rob = dec_wih[:, 2:4]
        self.dec_w_onehot = dec_wih[:, 4:4 + Z]
        self.dec_w_hx = dec_wih[:, 4 + Z:]
        self.dec_whh = sd["decoder.weight_hh"]
        self.dec_b = sd["decoder.bias_ih"] + sd["decoder.bias_hh"]
        self.head_w = sd["gmm_head.weight"]
        self.head_b = sd["gmm_head.bias"]

    # -- encoding ----------------------------------------------------------

    def _run_lstm(self, seq: np.ndarray, wih: np.ndarray, whh: np.ndarray,
                  b: np.ndarray) -> np.ndarray:
        """seq (B, L, D) -> final hidden (B, H)."""
        B = seq.shape[0]
        H = whh.shape[1]
        h = np.zeros((B, H), dtype=np.float32)
        c = np.zeros((B, H), dtype=np.float32)
        for i in range(seq.shape[1]):
            pre = seq[:, i] @ wih.T + h @ whh.T + b
            h, c = kernels.lstm_cell(np.ascontiguousarray(pre), c)
        return h

    def encode_history(self, hist_feats_raw: np.ndarray) -> np.ndarray:
        """(L, 16) raw features -> history summary (H,)."""
        std = ((hist_feats_raw - self.feat_mean) / self.feat_std).astype(np.float32)
        return self._run_lstm(std[None], self.ehist_wih, self.ehist_whh, self.ehist_b)[0]

    def plan_context(self, h_hist: np.ndarray, rfut_raw: np.ndarray,
                     prev_action_raw: np.ndarray) -> PlanContext:
        """Encode P candidate robot futures against one shared history summary."""
        rfut_std = ((rfut_raw - self.ract_mean) / self.ract_std).astype(np.float32)
        h_fut = self._run_lstm(rfut_std, self.efut_wih, self.efut_whh, self.efut_b)
        P = rfut_std.shape[0]
        h_x = np.concatenate([np.broadcast_to(h_hist, (P, h_hist.shape[0])), h_fut], axis=1)
        h_x = np.ascontiguousarray(h_x)
        hidden = np.tanh(h_x @ self.prior_w1.T + self.prior_b1)
        logits = hidden @ self.prior_w2.T + self.prior_b2
        lat = self.config.latent
        factor_p = _softmax(logits.reshape(P, lat.n_z, lat.k_z), axis=2)
        prior = factor_p[:, 0]
        for j in range(1, lat.n_z):
            prior = (prior[:, :, None] * factor_p[:, j][:, None, :]).reshape(P, -1)
        prev0_std = ((prev_action_raw - self.act_mean) / self.act_std).astype(np.float32)
        return PlanContext(h_x=h_x, rfut_std=rfut_std, prior=prior, prev0_std=prev0_std)

    # -- sampling ----------------------------------------------------------

    def sample_actions(self, ctx: PlanContext, plan_codes: np.ndarray, samples: int,
                       seed: int, stage: int) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``samples`` human action futures per plan.

        Returns (actions (P*samples, N, 2) raw units, latents (P, samples)).
        Row r corresponds to plan r // samples, sample r % samples.
        """
        cfg = self.config
        P = ctx.h_x.shape[0]
        N = ctx.rfut_std.shape[1]  # planning horizon follows the robot futures
        M = cfg.m_gmm
        S = samples
        R = P * S
        zu, comp_u, eps = plan_noise(seed, stage, plan_codes, S, N)

        cdf = np.cumsum(ctx.prior, axis=1)
        z = np.minimum((zu[:, :, None] > cdf[:, None, :]).sum(axis=2),
                       cfg.latent.cardinality - 1)  # (P, S)

        onehot = self.class_onehot[z.reshape(R)]
        h_x_rows = np.repeat(ctx.h_x, S, axis=0)
        g_static = onehot @ self.dec_w_onehot.T + h_x_rows @ self.dec_w_hx.T + self.dec_b
        g_rob = ctx.rfut_std.reshape(P * N, 2) @ self.dec_w_rob.T
        g_rob = g_rob.reshape(P, N, -1)

        H = self.dec_whh.shape[1]
        h = np.zeros((R, H), dtype=np.float32)
        c = np.zeros((R, H), dtype=np.float32)
        prev = np.broadcast_to(ctx.prev0_std, (R, 2)).astype(np.float32)
        actions = np.empty((R, N, 2), dtype=np.float32)
        comp_u_rows = comp_u.reshape(R, N)
        eps_rows = eps.reshape(R, N, 2)
        for i in range(N):
            pre = g_static + np.repeat(g_rob[:, i], S, axis=0) \
                + prev @ self.dec_w_prev.T + h @ self.dec_whh.T
            h, c = kernels.lstm_cell(np.ascontiguousarray(pre), c)
            raw = (h @ self.head_w.T + self.head_b).reshape(R, M, 6)
            weights = _softmax(raw[..., 0], axis=1)
            means = self.act_mean + raw[..., 1:3] * self.act_std
            scales = cfg.scale_floor + _softplus(raw[..., 3:5]) * self.act_std
            corrs = cfg.corr_limit * np.tanh(raw[..., 5])
            a = kernels.gmm_sample(
                np.ascontiguousarray(weights), np.ascontiguousarray(means),
                np.ascontiguousarray(scales), np.ascontiguousarray(corrs),
                np.ascontiguousarray(comp_u_rows[:, i]),
                np.ascontiguousarray(eps_rows[:, i]))
            actions[:, i] = a
            prev = (a - self.act_mean) / self.act_std
        return actions, z

    def step_params(self, ctx: PlanContext, plan_row: int, z: int,
                    prev_action_raw: np.ndarray, step: int,
                    state: tuple[np.ndarray, np.ndarray] | None = None):
        """Single-step mixture params (numpy path), for parity tests."""
        cfg = self.config
        H = self.dec_whh.shape[1]
        h, c = state if state is not None else (
            np.zeros((1, H), dtype=np.float32), np.zeros((1, H), dtype=np.float32))
        prev = ((prev_action_raw - self.act_mean) / self.act_std).astype(np.float32)
        pre = (self.class_onehot[z][None] @ self.dec_w_onehot.T
               + ctx.h_x[plan_row][None] @ self.dec_w_hx.T + self.dec_b
               + ctx.rfut_std[plan_row, step][None] @ self.dec_w_rob.T
               + prev[None] @ self.dec_w_prev.T + h @ self.dec_whh.T)
        h, c = kernels.lstm_cell(np.ascontiguousarray(pre), c)
        raw = (h @ self.head_w.T + self.head_b).reshape(1, cfg.m_gmm, 6)
        weights = _softmax(raw[..., 0], axis=1)[0]
        means = (self.act_mean + raw[..., 1:3] * self.act_std)[0]
        scales = (cfg.scale_floor + _softplus(raw[..., 3:5]) * self.act_std)[0]
        corrs = (cfg.corr_limit * np.tanh(raw[..., 5]))[0]
        return (weights, means, scales, corrs), (h, c)

    # -- public one-shot sampling (spec surface) ----------------------------

    def sample_futures(self, x: ConditioningInput, count: int, seed: int
                       ) -> tuple[np.ndarray, np.ndarray]:
        if count < 1:
            raise ValueError("count must be >= 1")
        hist = history_features(x)
        rfut = robot_future_array(x.robot_future)[None]
        prev0 = np.array([x.history_actions[-1][0].s_ddot,
                          x.history_actions[-1][0].tau_ddot])
        h_hist = self.encode_history(hist)
        ctx = self.plan_context(h_hist, rfut, prev0)
        actions, z = self.sample_actions(
            ctx, np.array([0], dtype=np.int64), count, seed, stage=0)
        return actions, z[0]
