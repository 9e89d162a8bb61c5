"""Multimodal human driver prediction and sampling-based robot planning
for pairwise highway lane-weaving."""

from .dynamics import (
    DEFAULT_ROAD,
    HumanAction,
    HumanState,
    JointState,
    RoadFrame,
    RobotAction,
    RobotState,
    is_near_collision,
    is_terminal,
    rollout_joint,
    step_human,
    step_robot,
)
from .features import ConditioningInput, HumanFuture, Normalizer
from .model import BehaviorModel, LatentSpec, ModelConfig
from .planner import CostWeights, PlannerConfig, plan_cycle
from .sampler import FastSampler

__all__ = [
    "DEFAULT_ROAD",
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
    "ConditioningInput",
    "HumanFuture",
    "Normalizer",
    "BehaviorModel",
    "ModelConfig",
    "LatentSpec",
    "FastSampler",
    "PlannerConfig",
    "CostWeights",
    "plan_cycle",
]

__version__ = "0.1.0"
