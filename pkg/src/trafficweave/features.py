"""Conditioning inputs, prediction targets, and feature standardization.

Each history step is summarized by a 16-dimensional feature vector: both
agents' road-frame states, the relative longitudinal/lateral offsets, and
the actions both agents took at that step.  Features are standardized at
the model boundary with training-set statistics stored in the model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import HumanAction, JointState, RobotAction

FEATURE_DIM = 16
HORIZON = 15

# Column indices of the two action blocks inside the step feature vector.
HUMAN_ACTION_COLS = (12, 13)
ROBOT_ACTION_COLS = (14, 15)


@dataclass(frozen=True)
class ConditioningInput:
    """Joint interaction history plus one candidate robot action future."""

    history_states: Sequence[JointState]
    history_actions: Sequence[tuple[HumanAction, RobotAction]]
    robot_future: Sequence[RobotAction]

    def __post_init__(self) -> None:
        if len(self.history_states) < 1:
            raise ValueError("history must contain at least one step")
        if len(self.history_states) != len(self.history_actions):
            raise ValueError("history states/actions length mismatch")
        if len(self.robot_future) != HORIZON:
            raise ValueError(
                f"robot future must have length {HORIZON}, got {len(self.robot_future)}"
            )


@dataclass(frozen=True)
class HumanFuture:
    actions: Sequence[HumanAction]

    def __post_init__(self) -> None:
        if len(self.actions) != HORIZON:
            raise ValueError(
                f"human future must have length {HORIZON}, got {len(self.actions)}"
            )


def step_features(x: JointState, u_h: HumanAction, u_r: RobotAction) -> np.ndarray:
    h, r = x.human, x.robot
    return np.array(
        [
            h.s, h.tau, h.s_dot, h.tau_dot,
            r.s, r.tau, r.s_dot, r.tau_dot, r.tau_ddot,
            r.s - h.s, r.tau - h.tau, r.s_dot - h.s_dot,
            u_h.s_ddot, u_h.tau_ddot,
            u_r.s_ddot, u_r.tau_dddot,
        ],
        dtype=np.float64,
    )


def history_features(x: ConditioningInput) -> np.ndarray:
    """(L, 16) unstandardized feature matrix of the interaction history."""
    rows = [
        step_features(state, u_h, u_r)
        for state, (u_h, u_r) in zip(x.history_states, x.history_actions)
    ]
    out = np.stack(rows)
    if not np.isfinite(out).all():
        raise ValueError("non-finite value in conditioning history")
    return out


def robot_future_array(actions: Sequence[RobotAction]) -> np.ndarray:
    out = np.array([[a.s_ddot, a.tau_dddot] for a in actions], dtype=np.float64)
    if not np.isfinite(out).all():
        raise ValueError("non-finite robot future action")
    return out


def human_future_array(y: HumanFuture) -> np.ndarray:
    out = np.array([[a.s_ddot, a.tau_ddot] for a in y.actions], dtype=np.float64)
    if not np.isfinite(out).all():
        raise ValueError("non-finite human future action")
    return out


@dataclass(frozen=True)
class Normalizer:
    """Per-feature mean/std for history features; action stats are slices."""

    mean: np.ndarray  # (16,)
    std: np.ndarray   # (16,), strictly positive

    def __post_init__(self) -> None:
        if self.mean.shape != (FEATURE_DIM,) or self.std.shape != (FEATURE_DIM,):
            raise ValueError("normalizer must cover all step features")
        if not (self.std > 0).all():
            raise ValueError("normalizer std must be positive")

    @property
    def human_action_mean(self) -> np.ndarray:
        return self.mean[list(HUMAN_ACTION_COLS)]

    @property
    def human_action_std(self) -> np.ndarray:
        return self.std[list(HUMAN_ACTION_COLS)]

    @property
    def robot_action_mean(self) -> np.ndarray:
        return self.mean[list(ROBOT_ACTION_COLS)]

    @property
    def robot_action_std(self) -> np.ndarray:
        return self.std[list(ROBOT_ACTION_COLS)]

    @staticmethod
    def identity() -> "Normalizer":
        return Normalizer(np.zeros(FEATURE_DIM), np.ones(FEATURE_DIM))

    @staticmethod
    def fit(feature_rows: np.ndarray, floor: float = 1e-3) -> "Normalizer":
        """Fit from stacked (n, 16) feature rows; std is floored for constants."""
        mean = feature_rows.mean(axis=0)
        std = np.maximum(feature_rows.std(axis=0), floor)
        return Normalizer(mean, std)
