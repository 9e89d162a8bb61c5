"""Maximum-likelihood training of the behavior model.

The loss is the exact negative log marginal likelihood, enumerating all
latent classes; no variational bound or latent sampling is involved.
Scheduled sampling feeds the decoder its own most-likely-component mean
instead of the true previous action at a fixed per-step rate.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .features import ConditioningInput, HumanFuture, Normalizer, history_features
from .model import Batch, BehaviorModel, ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 3e-3
    scheduled_sampling_rate: float = 0.1
    dropout_rate: float = 0.1
    grad_clip: float = 5.0
    val_fraction: float = 0.2
    seed: int = 0


@dataclass
class ExemplarDataset:
    """(x, y) exemplars tagged with their source trial for leak-free splits."""

    exemplars: list[tuple[ConditioningInput, HumanFuture]]
    trial_ids: list[str]

    def __post_init__(self) -> None:
        if len(self.exemplars) != len(self.trial_ids):
            raise ValueError("exemplars and trial ids must align")

    def __len__(self) -> int:
        return len(self.exemplars)


@dataclass
class EpochMetrics:
    epoch: int
    train_nll: float
    val_nll: float


@dataclass
class TrainResult:
    model: BehaviorModel
    curve: list[EpochMetrics] = field(default_factory=list)
    diverged: bool = False


def split_by_trial(dataset: ExemplarDataset, val_fraction: float, seed: int
                   ) -> tuple[list[int], list[int]]:
    """Train/validation exemplar indices split at trial granularity."""
    trials = sorted(set(dataset.trial_ids))
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    rng.shuffle(trials)
    n_val = max(1, int(round(len(trials) * val_fraction))) if len(trials) > 1 else 0
    val_trials = set(trials[:n_val])
    train_idx = [i for i, t in enumerate(dataset.trial_ids) if t not in val_trials]
    val_idx = [i for i, t in enumerate(dataset.trial_ids) if t in val_trials]
    return train_idx, val_idx


def fit_normalizer(dataset: ExemplarDataset, indices: list[int]) -> Normalizer:
    rows = np.concatenate([history_features(dataset.exemplars[i][0]) for i in indices])
    return Normalizer.fit(rows)


def mean_nll(model: BehaviorModel, exemplars: list[tuple[ConditioningInput, HumanFuture]],
             batch_size: int = 256) -> float:
    """Mean exact NLL (nats per exemplar) in evaluation mode."""
    if not exemplars:
        raise ValueError("cannot evaluate NLL on an empty exemplar set")
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(exemplars), batch_size):
            batch = model.pack_batch(exemplars[start:start + batch_size])
            ll = model.batch_log_likelihood(batch)
            total += float(-ll.sum())
    return total / len(exemplars)


def training_loss(model: BehaviorModel, batch: Batch,
                  ss_mask: torch.Tensor | None = None,
                  dropout_rate: float = 0.0,
                  generator: torch.Generator | None = None) -> torch.Tensor:
    """Mean exact negative log marginal likelihood of the batch."""
    ll = model.batch_log_likelihood(batch, ss_mask=ss_mask,
                                    dropout_rate=dropout_rate, generator=generator)
    return -ll.mean()


def train(dataset: ExemplarDataset, model_config: ModelConfig | None = None,
          config: TrainConfig | None = None,
          dtype: torch.dtype = torch.float64) -> TrainResult:
    """Fit a fresh model to the dataset; returns the best-validation checkpoint.

    If the loss goes non-finite, training aborts and the last finite
    checkpoint is returned with ``diverged=True``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    cfg = config or TrainConfig()
    train_idx, val_idx = split_by_trial(dataset, cfg.val_fraction, cfg.seed)
    if not val_idx:  # single-trial dataset: validate on the training set
        val_idx = list(train_idx)
    normalizer = fit_normalizer(dataset, train_idx)
    model = BehaviorModel(model_config, normalizer, dtype=dtype, seed=cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    shuffle_rng = np.random.Generator(np.random.Philox(key=np.uint64(cfg.seed + 1)))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

    train_ex = [dataset.exemplars[i] for i in train_idx]
    val_ex = [dataset.exemplars[i] for i in val_idx]

    curve: list[EpochMetrics] = []
    initial_val = mean_nll(model, val_ex)
    curve.append(EpochMetrics(epoch=0, train_nll=mean_nll(model, train_ex),
                              val_nll=initial_val))
    best_val = initial_val
    best_state = copy.deepcopy(model.state_dict())
    last_finite_state = copy.deepcopy(model.state_dict())
    diverged = False

    order = np.arange(len(train_ex))
    for epoch in range(1, cfg.epochs + 1):
        shuffle_rng.shuffle(order)
        model.train()
        epoch_loss = 0.0
        n_seen = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = model.pack_batch([train_ex[i] for i in idx])
            ss_mask = None
            if cfg.scheduled_sampling_rate > 0:
                ss_mask = torch.bernoulli(
                    torch.full((len(idx), model.config.horizon),
                               cfg.scheduled_sampling_rate, dtype=model.dtype),
                    generator=gen).bool()
            loss = training_loss(model, batch, ss_mask=ss_mask,
                                 dropout_rate=cfg.dropout_rate, generator=gen)
            if not torch.isfinite(loss):
                diverged = True
                break
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            epoch_loss += float(loss.detach()) * len(idx)
            n_seen += len(idx)
        if diverged:
            break
        last_finite_state = copy.deepcopy(model.state_dict())
        val_nll = mean_nll(model, val_ex)
        if not math.isfinite(val_nll):
            diverged = True
            break
        curve.append(EpochMetrics(epoch=epoch,
                                  train_nll=epoch_loss / max(n_seen, 1),
                                  val_nll=val_nll))
        if val_nll <= best_val:
            best_val = val_nll
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(last_finite_state if diverged else best_state)
    model.eval()
    return TrainResult(model=model, curve=curve, diverged=diverged)


def write_metrics_csv(curve: list[EpochMetrics], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_nll", "val_nll"])
        for row in curve:
            writer.writerow([row.epoch, f"{row.train_nll:.6f}", f"{row.val_nll:.6f}"])
