"""Optimizer, clipping, plateau decay and early stopping shared by every training stage."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..numerics import Module, ParameterSet


class TrainingDivergence(FloatingPointError):
    """Raised when a training loss turns non-finite."""

    def __init__(self, stage: str, epoch: int, batch: int, value: float):
        super().__init__(f"{stage}: non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.stage, self.epoch, self.batch, self.value = stage, epoch, batch, value


@dataclass(frozen=True)
class TrainSchedule:
    lr: float = 1e-3
    batch_size: int = 64
    weight_decay: float = 1e-5
    max_epochs: int = 200
    patience: int = 10
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_lr: float = 1e-6
    clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.lr <= 0 or self.max_epochs < 1 or self.patience < 1 or self.plateau_patience < 1:
            raise ValueError("invalid schedule")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")


class Adam:
    """Adam with decoupled weight decay, applied only to trainable parameters."""

    def __init__(self, params: ParameterSet, lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, p in self.params.items():
            if not p.trainable or p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            if self.weight_decay:
                p.data = p.data * (1 - self.lr * self.weight_decay)
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def grad_norm(params: ParameterSet) -> float:
    total = 0.0
    for p in params.values():
        if p.trainable and p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return math.sqrt(total)


def clip_gradients(params: ParameterSet, max_norm: float) -> tuple:
    """Rescale trainable gradients to a total L2 norm of at most ``max_norm``.

    Returns (norm before, norm after).
    """
    norm = grad_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.trainable and p.grad is not None:
                p.grad = p.grad * scale
        return norm, grad_norm(params)
    return norm, norm


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, optimizer: Adam, factor: float, patience: int, min_lr: float):
        self.opt, self.factor, self.patience, self.min_lr = optimizer, factor, patience, min_lr
        self.best = math.inf
        self.bad = 0

    def step(self, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.bad = 0
            return False
        self.bad += 1
        if self.bad >= self.patience:
            self.bad = 0
            new = max(self.opt.lr * self.factor, self.min_lr)
            changed = new < self.opt.lr
            self.opt.lr = new
            return changed
        return False


class EarlyStopping:
    """Stop once ``patience`` consecutive epochs fail to improve on the best value."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad = 0

    def step(self, value: float, epoch: int) -> tuple:
        """Returns (improved, should_stop)."""
        if value < self.best:
            self.best, self.best_epoch, self.bad = value, epoch, 0
            return True, False
        self.bad += 1
        return False, self.bad >= self.patience


def make_batches(n: int, batch_size: int, rng: np.random.Generator) -> list:
    """Shuffled index batches; a trailing singleton is merged into the previous batch."""
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


@dataclass
class TrainResult:
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_value: float = math.inf
    epochs_run: int = 0
    stopped_early: bool = False
    lr_events: list = field(default_factory=list)  # (epoch, new lr)
    grad_norms: list = field(default_factory=list)  # post-clip norm per step

    @property
    def columns(self) -> list:
        return list(self.log[0]) if self.log else []


def run_schedule(
    model: Module,
    params: ParameterSet,
    n_train: int,
    objective: Callable,
    monitor: Callable,
    schedule: TrainSchedule,
    stage: str = "train",
    set_mode: Callable = None,
    on_epoch: Callable = None,
) -> TrainResult:
    """Generic mini-batch loop.

    ``objective(batch_indices)`` returns (loss Tensor, dict of float components).
    ``monitor()`` returns (value to minimize, dict of validation metrics) and is
    evaluated in eval mode after each epoch. The model is restored to its best
    epoch before returning.
    """
    set_mode = set_mode or model.train
    opt = Adam(params, schedule.lr, schedule.weight_decay)
    plateau = PlateauScheduler(opt, schedule.plateau_factor, schedule.plateau_patience, schedule.min_lr)
    stopper = EarlyStopping(schedule.patience)
    rng = np.random.default_rng(schedule.seed)
    res = TrainResult()
    best_state = model.state_dict()
    for epoch in range(1, schedule.max_epochs + 1):
        set_mode(True)
        sums: dict = {}
        count = 0
        max_norm = 0.0
        for b, idx in enumerate(make_batches(n_train, schedule.batch_size, rng)):
            params.zero_grad()
            loss, parts = objective(idx)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDivergence(stage, epoch, b, value)
            loss.backward()
            _, after = clip_gradients(params, schedule.clip_norm)
            res.grad_norms.append(after)
            max_norm = max(max_norm, after)
            opt.step()
            w = len(idx)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + float(v) * w
            count += w
        set_mode(False)
        value, metrics = monitor()
        if not math.isfinite(value):
            raise TrainingDivergence(stage, epoch, -1, value)
        improved, stop = stopper.step(value, epoch)
        if improved:
            best_state = model.state_dict()
        row = {"epoch": epoch}
        row.update({k: v / count for k, v in sums.items()})
        row.update(metrics)
        row["lr"] = opt.lr
        row["grad_norm_max"] = max_norm
        if plateau.step(value):
            res.lr_events.append((epoch, opt.lr))
        res.log.append(row)
        res.epochs_run = epoch
        if on_epoch is not None:
            on_epoch(epoch, row)
        if stop:
            res.stopped_early = True
            break
    model.load_state_dict(best_state)
    set_mode(False)
    res.best_epoch, res.best_value = stopper.best_epoch, stopper.best
    return res
