"""Training loop: summed-MSE loss, AdamW, warmup + linear decay, early stopping.

Early stopping watches the joint VA RMSE on the validation split; the best
epoch's parameters are restored before returning. All randomness (epoch
shuffles, dropout) is derived from the single config seed through named
sub-streams, so runs are reproducible with the stand-in encoder.
"""

from __future__ import annotations

import copy
import math
import zlib
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .data import VAPair
from .metrics import rmse_va
from .model import DimASRModel, ModelError


class TrainerError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 2e-5
    weight_decay: float = 0.01
    warmup_ratio: float = 0.10
    dropout: float = 0.1
    head_internal_dropout: bool = True
    max_epochs: int = 10
    patience: int = 3
    min_delta: float = 0.0
    grad_clip_norm: float = 1.0
    seed: int = 42
    max_len: int = 256
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size <= 0 or self.learning_rate <= 0 or self.max_epochs <= 0:
            raise TrainerError("batch_size, learning_rate, and max_epochs must be positive")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise TrainerError(f"warmup_ratio must be in [0, 1), got {self.warmup_ratio}")
        if self.patience <= 0 or self.patience > self.max_epochs:
            raise TrainerError("patience must satisfy 0 < patience <= max_epochs")
        if self.grad_clip_norm <= 0:
            raise TrainerError("grad_clip_norm must be positive")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in mapping.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_rmse_va: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_rows(self) -> list:
        return [
            {"epoch": r.epoch, "train_loss": r.train_loss, "val_rmse_va": r.val_rmse_va}
            for r in self.records
        ]


class EarlyStopper:
    """Strict-improvement patience counter over a validation metric."""

    def __init__(self, patience: int, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_index = 0
        self.since_improvement = 0
        self._n = 0

    def update(self, value: float) -> bool:
        """Record one epoch's metric; returns True when training should stop."""
        self._n += 1
        if value < self.best - self.min_delta:
            self.best = value
            self.best_index = self._n
            self.since_improvement = 0
        else:
            self.since_improvement += 1
        return self.since_improvement >= self.patience


def compute_loss(preds: Sequence[VAPair], golds: Sequence[VAPair]) -> float:
    """Sum of the per-dimension batch MSEs."""
    if len(preds) != len(golds):
        raise TrainerError(f"length mismatch: {len(preds)} preds vs {len(golds)} golds")
    if not preds:
        raise TrainerError("empty batch")
    pv = np.array([p.valence for p in preds])
    pa = np.array([p.arousal for p in preds])
    gv = np.array([g.valence for g in golds])
    ga = np.array([g.arousal for g in golds])
    return float(np.mean((pv - gv) ** 2) + np.mean((pa - ga) ** 2))


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Piecewise-linear schedule: ramp to peak over the warmup steps, decay to 0."""
    if total_steps < 1:
        raise TrainerError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise TrainerError(f"step {step} outside [0, {total_steps}]")
    warmup = math.ceil(config.warmup_ratio * total_steps)
    if warmup > 0 and step <= warmup:
        return config.learning_rate * step / warmup
    if total_steps == warmup:
        return config.learning_rate
    return config.learning_rate * (total_steps - step) / (total_steps - warmup)


def _substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode()), index])


class AdamW:
    def __init__(self, params: dict, config: TrainConfig):
        self.params = params
        self.config = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict, lr: float) -> None:
        self.t += 1
        cfg = self.config
        for name, p in self.params.items():
            # decoupled weight decay on weight matrices/embeddings, not biases
            wd = cfg.weight_decay if p.ndim >= 2 else 0.0
            kernels.adamw_update(
                p, grads[name], self.m[name], self.v[name],
                lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, wd, self.t,
            )


def evaluate_rmse(model: DimASRModel, instances, batch_size: int = 64) -> float:
    preds = []
    golds = []
    for start in range(0, len(instances), batch_size):
        chunk = instances[start : start + batch_size]
        preds.extend(model.predict_pairs(chunk))
        golds.extend(inst.gold for inst in chunk)
    return rmse_va(preds, golds)


def fit(
    model: DimASRModel,
    fit_set: Sequence,
    val_set: Sequence,
    config: TrainConfig,
    epoch_callback: Optional[Callable] = None,
):
    """Train `model` in place; returns (model, TrainHistory).

    `epoch_callback(epoch, model, record)` runs after each epoch's validation,
    before any early-stop decision (used for checkpoint streaming and tests).
    """
    if not val_set:
        raise TrainerError("validation set required for early stopping")
    if not fit_set:
        raise TrainerError("empty training set")
    for inst in list(fit_set) + list(val_set):
        if inst.gold is None:
            raise TrainerError(f"instance {inst.key} is missing its gold label")

    steps_per_epoch = math.ceil(len(fit_set) / config.batch_size)
    total_steps = config.max_epochs * steps_per_epoch
    params = model.parameters()
    optimizer = AdamW(params, config)
    dropout_rng = _substream(config.seed, "dropout")
    stopper = EarlyStopper(config.patience, config.min_delta)
    history = TrainHistory()
    best_state = None
    step = 0

    for epoch in range(1, config.max_epochs + 1):
        order = _substream(config.seed, "shuffle", epoch).permutation(len(fit_set))
        epoch_loss = 0.0
        for start in range(0, len(fit_set), config.batch_size):
            batch = [fit_set[i] for i in order[start : start + config.batch_size]]
            try:
                loss, grads, _ = model.loss_and_grads(batch, dropout_rng)
            except ModelError as exc:
                raise TrainerError(str(exc)) from exc
            if not np.isfinite(loss):
                raise TrainerError(
                    f"non-finite loss {loss} at epoch {epoch}, step {step} "
                    f"(batch keys {[b.key for b in batch[:3]]}...)"
                )
            kernels.clip_gradients(list(grads.values()), config.grad_clip_norm)
            step += 1
            optimizer.step(grads, lr_at(step, total_steps, config))
            epoch_loss += loss * len(batch)

        record = EpochRecord(
            epoch=epoch,
            train_loss=epoch_loss / len(fit_set),
            val_rmse_va=evaluate_rmse(model, val_set),
        )
        history.records.append(record)
        if epoch_callback is not None:
            epoch_callback(epoch, model, record)

        stop = stopper.update(record.val_rmse_va)
        if stopper.best_index == epoch:
            best_state = copy.deepcopy(model.state_arrays())
        if stop:
            history.stopped_early = True
            break

    history.best_epoch = stopper.best_index
    if best_state is not None:
        model.load_state(best_state)
    return model, history


def train_all(runs: Sequence[dict], run_one: Callable) -> dict:
    """Run independent per-dataset trainings; isolate failures.

    `runs` is a list of run descriptors (each at least carrying a "name");
    `run_one(descriptor)` performs one training and returns its result.
    Returns {"results": {name: result}, "failures": {name: message}}.
    """
    results = {}
    failures = {}
    for descriptor in runs:
        name = descriptor["name"]
        try:
            results[name] = run_one(descriptor)
        except Exception as exc:
            failures[name] = f"{type(exc).__name__}: {exc}"
    return {"results": results, "failures": failures}
