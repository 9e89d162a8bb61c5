"""Shared fixtures: deterministic models, synthetic datasets, artifact cache.

Trained models used by several test modules are cached on disk under
``tests/_artifacts`` keyed by a config hash, so repeated test runs do not
retrain.  Delete the directory to force retraining.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np
import pytest
import torch

from trafficweave.dynamics import (
    DEFAULT_ROAD,
    HumanAction,
    HumanState,
    JointState,
    RobotAction,
    RobotState,
)
from trafficweave.features import ConditioningInput, HumanFuture, Normalizer
from trafficweave.model import BehaviorModel, LatentSpec, ModelConfig

ARTIFACT_DIR = os.path.join(os.path.dirname(__file__), "_artifacts")

# Single CPU core: intra-op threading only adds overhead, and keeping torch
# single-threaded makes fork-based worker pools safe to exercise in-process.
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def artifact_dir() -> str:
    os.makedirs(ARTIFACT_DIR, exist_ok=True)
    return ARTIFACT_DIR


def cache_key(*parts) -> str:
    return hashlib.sha256("|".join(map(str, parts)).encode()).hexdigest()[:16]


def nominal_state(t: int = 0) -> JointState:
    road = DEFAULT_ROAD
    return JointState(
        human=HumanState(s=-120.0 + 2.9 * t, tau=road.left_lane_center_tau,
                         s_dot=29.0, tau_dot=0.0),
        robot=RobotState(s=-125.0 + 3.0 * t, tau=road.right_lane_center_tau,
                         s_dot=30.0, tau_dot=0.0, tau_ddot=0.0),
        t=t,
    )


def make_exemplar(human_actions: np.ndarray,
                  robot_actions: np.ndarray | None = None,
                  history_len: int = 2) -> tuple[ConditioningInput, HumanFuture]:
    """Build a (conditioning, future) exemplar around the nominal state."""
    n = len(human_actions)
    if robot_actions is None:
        robot_actions = np.zeros((n, 2))
    states = [nominal_state(t) for t in range(history_len)]
    # Fixed +-1 alternating history actions: identical across exemplars (no
    # information leak into the conditioning) while keeping the fitted
    # action-column normalization non-degenerate.
    hist_actions = [(HumanAction(1.0 - 2.0 * (t % 2), 1.0 - 2.0 * (t % 2)),
                     RobotAction(1.0 - 2.0 * (t % 2), 1.0 - 2.0 * (t % 2)))
                    for t in range(history_len)]
    x = ConditioningInput(
        history_states=states,
        history_actions=hist_actions,
        robot_future=[RobotAction(float(a), float(j)) for a, j in robot_actions],
    )
    y = HumanFuture([HumanAction(float(a), float(b)) for a, b in human_actions])
    return x, y


def bimodal_exemplars(n: int, seed: int, horizon: int = 15,
                      p_up: float = 0.6, noise: float = 0.05):
    """Exemplars whose future lateral action is bimodal (+1 vs -1) at fixed
    conditioning; the longitudinal action is near zero in both modes."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    out = []
    for i in range(n):
        mode = 1.0 if rng.random() < p_up else -1.0
        acts = np.stack([
            rng.normal(0.0, noise, size=horizon),
            rng.normal(mode, noise, size=horizon),
        ], axis=1)
        out.append(make_exemplar(acts))
    return out


def constant_mean_model(mu_s: float, mu_tau: float,
                        config: ModelConfig | None = None,
                        seed: int = 0) -> BehaviorModel:
    """Model whose decoder emits a near-deterministic constant action: the
    mixture collapses to one effective component with mean (mu_s, mu_tau)
    and scales pinned at the 1e-4 floor."""
    cfg = config or ModelConfig(latent=LatentSpec(n_z=1, k_z=1), m_gmm=1,
                                hidden=8)
    model = BehaviorModel(cfg, Normalizer.identity(), seed=seed)
    with torch.no_grad():
        model.gmm_head.weight.zero_()
        bias = model.gmm_head.bias.view(cfg.m_gmm, 6)
        bias.zero_()
        bias[:, 1] = mu_s
        bias[:, 2] = mu_tau
        bias[:, 3] = -1e9  # softplus underflows to exactly 0 -> scale floor
        bias[:, 4] = -1e9
        bias[:, 5] = 0.0
    model.eval()
    return model


@pytest.fixture(scope="session")
def tiny_model() -> BehaviorModel:
    """Small randomly initialized model (untrained, deterministic seed)."""
    model = BehaviorModel(ModelConfig(latent=LatentSpec(2, 2), m_gmm=2, hidden=8),
                          Normalizer.identity(), seed=7)
    model.eval()
    return model
