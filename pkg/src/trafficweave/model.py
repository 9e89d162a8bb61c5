"""Conditional generative model of human driver action sequences.

The model is a discrete-latent conditional autoencoder: an LSTM encoder
summarizes the joint interaction history, a second LSTM encodes the
candidate robot action future, a factored-categorical prior head maps the
combined summary ``h_x`` to a distribution over latent behavior classes,
and an autoregressive LSTM decoder with a bivariate Gaussian-mixture output
head emits one action distribution per future step.  Because the latent
cardinality is small (at most 64 classes), the data likelihood

    p(y | x) = sum_z p(z | x) * p(y | x, z)

is computed by exact enumeration over classes rather than a sampled
variational bound.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dynamics import HumanAction, RobotAction
from .features import (
    FEATURE_DIM,
    HORIZON,
    ConditioningInput,
    HumanFuture,
    Normalizer,
    history_features,
    human_future_array,
    robot_future_array,
)

MODEL_FORMAT = "trafficweave-model"
SCHEMA_VERSION = 1

LOG_2PI = math.log(2.0 * math.pi)


class ModelIOError(RuntimeError):
    """Raised for corrupt or incompatible model files."""


@dataclass(frozen=True)
class LatentSpec:
    """Factored categorical latent: n_z independent factors of k_z classes."""

    n_z: int = 2
    k_z: int = 4

    def __post_init__(self) -> None:
        if self.n_z < 1 or self.k_z < 1:
            raise ValueError("latent factors and categories must be >= 1")
        if self.cardinality > 64:
            raise ValueError("latent cardinality exceeds exact-marginalization budget (64)")

    @property
    def cardinality(self) -> int:
        return self.k_z ** self.n_z

    @property
    def onehot_width(self) -> int:
        return self.n_z * self.k_z

    def class_digits(self, z: int) -> tuple[int, ...]:
        """Big-endian mixed-radix digits of class index z."""
        if not 0 <= z < self.cardinality:
            raise ValueError(f"latent class {z} out of range [0, {self.cardinality})")
        digits = []
        for j in range(self.n_z):
            digits.append((z // self.k_z ** (self.n_z - 1 - j)) % self.k_z)
        return tuple(digits)


@dataclass(frozen=True)
class ModelConfig:
    latent: LatentSpec = field(default_factory=LatentSpec)
    m_gmm: int = 2
    hidden: int = 32
    horizon: int = HORIZON
    feat_dim: int = FEATURE_DIM
    scale_floor: float = 1e-4
    corr_limit: float = 0.99

    def to_json(self) -> str:
        d = self.__dict__.copy()
        d["latent"] = {"n_z": self.latent.n_z, "k_z": self.latent.k_z}
        return json.dumps(d)

    @staticmethod
    def from_json(s: str) -> "ModelConfig":
        d = json.loads(s)
        d["latent"] = LatentSpec(**d["latent"])
        return ModelConfig(**d)


@dataclass(frozen=True)
class GmmParams:
    """One decode step's mixture over the 2-D human action (raw units)."""

    weights: np.ndarray  # (M,)
    means: np.ndarray    # (M, 2)
    scales: np.ndarray   # (M, 2)
    corrs: np.ndarray    # (M,)

    def __post_init__(self) -> None:
        if abs(float(self.weights.sum()) - 1.0) > 1e-6:
            raise ValueError("mixture weights must sum to 1")
        if (self.scales < 1e-4 - 1e-12).any():
            raise ValueError("mixture scales below floor")
        if (np.abs(self.corrs) > 0.99 + 1e-12).any():
            raise ValueError("mixture correlation out of range")


def gmm_from_raw(raw: torch.Tensor, act_mean: torch.Tensor, act_std: torch.Tensor,
                 scale_floor: float, corr_limit: float
                 ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Map raw head outputs (..., M, 6) to mixture parameters in raw action units.

    Layout per component: [weight logit, mu_s, mu_tau, logscale_s,
    logscale_tau, corr preactivation].
    """
    log_w = F.log_softmax(raw[..., 0], dim=-1)
    means = act_mean + raw[..., 1:3] * act_std
    scales = scale_floor + F.softplus(raw[..., 3:5]) * act_std
    corrs = corr_limit * torch.tanh(raw[..., 5])
    return log_w, means, scales, corrs


def bvn_log_density(y: torch.Tensor, means: torch.Tensor, scales: torch.Tensor,
                    corrs: torch.Tensor) -> torch.Tensor:
    """Correlated bivariate normal log-density per mixture component.

    y: (..., 2) broadcast against means/scales (..., M, 2), corrs (..., M).
    Returns (..., M).
    """
    z = (y.unsqueeze(-2) - means) / scales
    one_m_r2 = 1.0 - corrs * corrs
    q = (z[..., 0] ** 2 - 2.0 * corrs * z[..., 0] * z[..., 1] + z[..., 1] ** 2) / one_m_r2
    return (-LOG_2PI - torch.log(scales[..., 0]) - torch.log(scales[..., 1])
            - 0.5 * torch.log(one_m_r2) - 0.5 * q)


@dataclass
class Batch:
    """Packed training/evaluation batch (standardized where noted)."""

    hist: torch.Tensor      # (B, L, F) standardized history features
    lengths: torch.Tensor   # (B,) int64 valid history lengths
    rfut: torch.Tensor      # (B, N, 2) standardized robot future actions
    prev0: torch.Tensor     # (B, 2) standardized human action at history end
    y: torch.Tensor         # (B, N, 2) raw human future actions


class BehaviorModel(nn.Module):
    def __init__(self, config: ModelConfig | None = None,
                 normalizer: Normalizer | None = None,
                 dtype: torch.dtype = torch.float64,
                 seed: int | None = None) -> None:
        super().__init__()
        self.config = config or ModelConfig()
        normalizer = normalizer or Normalizer.identity()
        if seed is not None:
            torch.manual_seed(seed)
        cfg = self.config
        H = cfg.hidden
        ctx_width = 2 + 2 + cfg.latent.onehot_width + 2 * H
        self.enc_hist = nn.LSTMCell(cfg.feat_dim, H)
        self.enc_fut = nn.LSTMCell(2, H)
        self.prior_head = nn.Sequential(
            nn.Linear(2 * H, H), nn.Tanh(),
            nn.Linear(H, cfg.latent.onehot_width),
        )
        self.decoder = nn.LSTMCell(ctx_width, H)
        self.gmm_head = nn.Linear(H, cfg.m_gmm * 6)
        self.register_buffer("feat_mean", torch.as_tensor(normalizer.mean, dtype=dtype))
        self.register_buffer("feat_std", torch.as_tensor(normalizer.std, dtype=dtype))
        onehot = torch.zeros(cfg.latent.cardinality, cfg.latent.onehot_width, dtype=dtype)
        for z in range(cfg.latent.cardinality):
            for j, d in enumerate(cfg.latent.class_digits(z)):
                onehot[z, j * cfg.latent.k_z + d] = 1.0
        self.register_buffer("class_onehot", onehot)
        self.to(dtype)

    # -- convenience accessors -------------------------------------------------

    @property
    def dtype(self) -> torch.dtype:
        return self.feat_mean.dtype

    @property
    def normalizer(self) -> Normalizer:
        return Normalizer(self.feat_mean.numpy().copy(), self.feat_std.numpy().copy())

    def _act_stats(self) -> tuple[torch.Tensor, torch.Tensor]:
        return self.feat_mean[12:14], self.feat_std[12:14]

    def _robot_act_stats(self) -> tuple[torch.Tensor, torch.Tensor]:
        return self.feat_mean[14:16], self.feat_std[14:16]

    # -- batch packing ---------------------------------------------------------

    def pack_batch(self, exemplars: list[tuple[ConditioningInput, HumanFuture]]) -> Batch:
        feats = [history_features(x) for x, _ in exemplars]
        lengths = torch.tensor([f.shape[0] for f in feats], dtype=torch.int64)
        L = int(lengths.max())
        B = len(exemplars)
        hist = torch.zeros(B, L, self.config.feat_dim, dtype=self.dtype)
        for b, f in enumerate(feats):
            hist[b, : f.shape[0]] = torch.as_tensor(f, dtype=self.dtype)
        hist = (hist - self.feat_mean) / self.feat_std
        rfut_raw = torch.stack([
            torch.as_tensor(robot_future_array(x.robot_future), dtype=self.dtype)
            for x, _ in exemplars
        ])
        ra_mean, ra_std = self._robot_act_stats()
        rfut = (rfut_raw - ra_mean) / ra_std
        a_mean, a_std = self._act_stats()
        prev0_raw = torch.stack([
            torch.tensor([x.history_actions[-1][0].s_ddot, x.history_actions[-1][0].tau_ddot],
                         dtype=self.dtype)
            for x, _ in exemplars
        ])
        prev0 = (prev0_raw - a_mean) / a_std
        y = torch.stack([
            torch.as_tensor(human_future_array(fut), dtype=self.dtype)
            for _, fut in exemplars
        ])
        return Batch(hist=hist, lengths=lengths, rfut=rfut, prev0=prev0, y=y)

    # -- encoder ---------------------------------------------------------------

    def encode_batch(self, hist: torch.Tensor, lengths: torch.Tensor,
                     rfut: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (h_x (B, 2H), factored prior log-probs (B, n_z, k_z))."""
        B, L, _ = hist.shape
        H = self.config.hidden
        h = hist.new_zeros(B, H)
        c = hist.new_zeros(B, H)
        for i in range(L):
            h_new, c_new = self.enc_hist(hist[:, i], (h, c))
            keep = (lengths > i).unsqueeze(1).to(hist.dtype)
            h = keep * h_new + (1.0 - keep) * h
            c = keep * c_new + (1.0 - keep) * c
        hf = hist.new_zeros(B, H)
        cf = hist.new_zeros(B, H)
        for i in range(rfut.shape[1]):
            hf, cf = self.enc_fut(rfut[:, i], (hf, cf))
        h_x = torch.cat([h, hf], dim=1)
        logits = self.prior_head(h_x).view(B, self.config.latent.n_z, self.config.latent.k_z)
        return h_x, F.log_softmax(logits, dim=2)

    def class_log_prior(self, factor_logp: torch.Tensor) -> torch.Tensor:
        """Combine factored log-probs (B, n_z, k_z) into class log-probs (B, K)."""
        B = factor_logp.shape[0]
        lp = factor_logp.new_zeros(B, 1)
        for j in range(self.config.latent.n_z):
            lp = (lp.unsqueeze(2) + factor_logp[:, j].unsqueeze(1)).reshape(B, -1)
        return lp

    # -- decoder ---------------------------------------------------------------

    def decode_logp(self, h_x: torch.Tensor, rfut: torch.Tensor, prev0: torch.Tensor,
                    y: torch.Tensor, ss_mask: torch.Tensor | None = None,
                    dropout_rate: float = 0.0,
                    generator: torch.Generator | None = None) -> torch.Tensor:
        """Teacher-forced per-class decode log-likelihood, (B, K).

        ss_mask (B, N) boolean: where True (never at step 0 in effect, since
        the mask gates the input to step i computed from step i-1's
        prediction), the decoder input is the most-likely-component mean of
        the previous step's predicted mixture instead of the true action.
        """
        cfg = self.config
        B, N, _ = y.shape
        K = cfg.latent.cardinality
        H = cfg.hidden
        R = B * K

        h_x_r = h_x.unsqueeze(1).expand(B, K, 2 * H).reshape(R, 2 * H)
        onehot = self.class_onehot.unsqueeze(0).expand(B, K, -1).reshape(R, -1)
        a_mean, a_std = self._act_stats()
        y_std = (y - a_mean) / a_std

        h = h_x.new_zeros(R, H)
        c = h_x.new_zeros(R, H)
        drop_mask = None
        if dropout_rate > 0.0 and self.training:
            keep = 1.0 - dropout_rate
            drop_mask = torch.bernoulli(
                h_x.new_full((R, H), keep), generator=generator) / keep

        prev = prev0.unsqueeze(1).expand(B, K, 2).reshape(R, 2)
        logp = h_x.new_zeros(R)
        pred_prev_std: torch.Tensor | None = None
        for i in range(N):
            if ss_mask is not None and pred_prev_std is not None:
                use_pred = ss_mask[:, i].unsqueeze(1).expand(B, K).reshape(R, 1).to(h_x.dtype)
                prev = use_pred * pred_prev_std + (1.0 - use_pred) * prev
            rob_i = rfut[:, i].unsqueeze(1).expand(B, K, 2).reshape(R, 2)
            inp = torch.cat([prev, rob_i, onehot, h_x_r], dim=1)
            h, c = self.decoder(inp, (h, c))
            if drop_mask is not None:
                h = h * drop_mask
            raw = self.gmm_head(h).view(R, cfg.m_gmm, 6)
            log_w, means, scales, corrs = gmm_from_raw(
                raw, a_mean, a_std, cfg.scale_floor, cfg.corr_limit)
            y_i = y[:, i].unsqueeze(1).expand(B, K, 2).reshape(R, 2)
            comp_logp = bvn_log_density(y_i, means, scales, corrs)
            logp = logp + torch.logsumexp(log_w + comp_logp, dim=1)
            if ss_mask is not None:
                top = log_w.argmax(dim=1)
                top_mean = means[torch.arange(R), top]
                pred_prev_std = (top_mean - a_mean) / a_std
            prev = y_std[:, i].unsqueeze(1).expand(B, K, 2).reshape(R, 2)
        return logp.view(B, K)

    def batch_log_likelihood(self, batch: Batch, ss_mask: torch.Tensor | None = None,
                             dropout_rate: float = 0.0,
                             generator: torch.Generator | None = None) -> torch.Tensor:
        """Exact log p(y|x) per exemplar, (B,), marginalized over classes."""
        h_x, factor_logp = self.encode_batch(batch.hist, batch.lengths, batch.rfut)
        log_prior = self.class_log_prior(factor_logp)
        logp_y = self.decode_logp(h_x, batch.rfut, batch.prev0, batch.y,
                                  ss_mask=ss_mask, dropout_rate=dropout_rate,
                                  generator=generator)
        return torch.logsumexp(log_prior + logp_y, dim=1)

    # -- spec surface ----------------------------------------------------------

    @torch.no_grad()
    def encode(self, x: ConditioningInput) -> tuple[np.ndarray, np.ndarray]:
        """Encoder summary h_x and the categorical prior over latent classes."""
        self.eval()
        batch = self.pack_batch([(x, _dummy_future(self.config.horizon))])
        h_x, factor_logp = self.encode_batch(batch.hist, batch.lengths, batch.rfut)
        prior = self.class_log_prior(factor_logp).exp()
        return h_x[0].numpy(), prior[0].numpy()

    @torch.no_grad()
    def decode_step(self, h_x: np.ndarray, z: int, prev_action: HumanAction,
                    robot_action: RobotAction,
                    decoder_state: tuple[np.ndarray, np.ndarray] | None = None
                    ) -> tuple[GmmParams, tuple[np.ndarray, np.ndarray]]:
        """Single decoder step for latent class ``z``; returns mixture params."""
        cfg = self.config
        if not 0 <= z < cfg.latent.cardinality:
            raise ValueError(f"latent class {z} out of range")
        self.eval()
        a_mean, a_std = self._act_stats()
        ra_mean, ra_std = self._robot_act_stats()
        prev = (torch.tensor([prev_action.s_ddot, prev_action.tau_ddot],
                             dtype=self.dtype) - a_mean) / a_std
        rob = (torch.tensor([robot_action.s_ddot, robot_action.tau_dddot],
                            dtype=self.dtype) - ra_mean) / ra_std
        if decoder_state is None:
            h = torch.zeros(1, cfg.hidden, dtype=self.dtype)
            c = torch.zeros(1, cfg.hidden, dtype=self.dtype)
        else:
            h = torch.as_tensor(decoder_state[0], dtype=self.dtype).view(1, -1)
            c = torch.as_tensor(decoder_state[1], dtype=self.dtype).view(1, -1)
        inp = torch.cat([prev, rob, self.class_onehot[z],
                         torch.as_tensor(h_x, dtype=self.dtype)]).unsqueeze(0)
        h, c = self.decoder(inp, (h, c))
        raw = self.gmm_head(h).view(1, cfg.m_gmm, 6)
        log_w, means, scales, corrs = gmm_from_raw(
            raw, a_mean, a_std, cfg.scale_floor, cfg.corr_limit)
        params = GmmParams(
            weights=log_w[0].exp().numpy(),
            means=means[0].numpy(),
            scales=scales[0].numpy(),
            corrs=corrs[0].numpy(),
        )
        return params, (h[0].numpy(), c[0].numpy())

    @torch.no_grad()
    def log_likelihood(self, x: ConditioningInput, y: HumanFuture) -> float:
        self.eval()
        batch = self.pack_batch([(x, y)])
        ll = self.batch_log_likelihood(batch)
        val = float(ll[0])
        if not math.isfinite(val):
            raise FloatingPointError(
                "non-finite log-likelihood (check model parameters and inputs)")
        return val

    def sample_futures(self, x: ConditioningInput, count: int, seed: int
                       ) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``count`` human futures; returns (count, N, 2) and latent ids."""
        from .sampler import FastSampler

        return FastSampler(self).sample_futures(x, count, seed)

    # -- persistence -----------------------------------------------------------

    def save(self, path: str) -> None:
        arrays = {k: v.detach().numpy() for k, v in self.state_dict().items()}
        meta = {
            "format": MODEL_FORMAT,
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_json(),
            "dtype": str(self.dtype).replace("torch.", ""),
        }
        # Write through a file handle so numpy keeps the exact filename.
        with open(path, "wb") as f:
            np.savez(f, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                     **arrays)

    @classmethod
    def load(cls, path: str) -> "BehaviorModel":
        try:
            data = np.load(path, allow_pickle=False)
        except (OSError, ValueError, zipfile.BadZipFile, io.UnsupportedOperation) as e:
            raise ModelIOError(f"cannot read model file {path}: {e}") from e
        if "__meta__" not in data:
            raise ModelIOError(f"{path} is not a trafficweave model file")
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != MODEL_FORMAT:
            raise ModelIOError(f"unknown model format {meta.get('format')!r}")
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise ModelIOError(
                f"unsupported model schema_version {meta.get('schema_version')!r} "
                f"(expected {SCHEMA_VERSION})")
        config = ModelConfig.from_json(meta["config"])
        dtype = getattr(torch, meta["dtype"])
        model = cls(config, dtype=dtype)
        state = {k: torch.as_tensor(data[k]) for k in data.files if k != "__meta__"}
        model.load_state_dict(state)
        return model


def _dummy_future(n: int) -> HumanFuture:
    return HumanFuture(tuple(HumanAction(0.0, 0.0) for _ in range(n)))
