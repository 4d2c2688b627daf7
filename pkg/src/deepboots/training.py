"""Adam on normalized-space MSE with early stopping on validation loss."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import WindowBatch, instance_normalize, iter_batches
from .metrics import MetricReport, compute_metrics
from .model import ModelConfig, ModelParams, _check_params, forward_normalized, predict
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    betas: tuple[float, float] = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    clip_norm: float | None = 5.0
    seed: int = 0
    eval_batch_size: int = 256

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("max_epochs, patience and batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_epoch: int = 0  # 1-based; 0 means no epoch completed
    stopped_early: bool = False

    @property
    def best_val_loss(self) -> float:
        return min(self.val_loss) if self.val_loss else float("inf")

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for i, row in enumerate(zip(self.train_loss, self.val_loss, self.seconds), start=1):
                w.writerow([i, *(repr(float(v)) for v in row)])


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: TrainHistory):
        super().__init__(message)
        self.history = history


class Adam:
    """Adam with bias-corrected moments; state is keyed by parameter name."""

    def __init__(self, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            # in place: denom = sqrt(v / bc2) + eps, then update = (lr / bc1) * m / denom
            denom = np.sqrt(v * (1.0 / bc2))
            denom += self.eps
            np.divide(m, denom, out=denom)
            denom *= self.lr / bc1
            p.data -= denom


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params.values() if p.grad is not None))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return total


def normalized_mse(params: ModelParams, config: ModelConfig, batch: WindowBatch, training: bool, rng=None) -> Tensor:
    """Loss in instance-normalized space: targets scaled by the input window's statistics."""
    z, stats = instance_normalize(batch.inputs)
    target = (batch.targets - stats.mean[:, None, :]) / stats.std[:, None, :]
    pred = forward_normalized(z, params, config, training, rng)
    return T.mean(T.square(T.sub(pred, target)))


def validation_loss(params: ModelParams, config: ModelConfig, data: WindowBatch, batch_size: int = 256) -> float:
    total, count = 0.0, 0
    with T.no_grad():
        for b in iter_batches(data, batch_size):
            total += normalized_mse(params, config, b, training=False).item() * b.targets.size
            count += b.targets.size
    return total / count


class EarlyStopping:
    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record an epoch; True when training should stop."""
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def _snapshot(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def train(
    params: ModelParams,
    config: ModelConfig,
    train_data: WindowBatch,
    val_data: WindowBatch,
    tc: TrainConfig | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Minimize normalized-space MSE; parameters of the best validation epoch are restored in place."""
    tc = tc or TrainConfig()
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("train and validation sets must be non-empty")
    _check_params(params, config)
    opt = Adam(tc.learning_rate, tc.betas, tc.adam_epsilon)
    hist = TrainHistory()
    hist.initial_val_loss = validation_loss(params, config, val_data, tc.eval_batch_size)
    stopper = EarlyStopping(tc.patience)
    best = _snapshot(params)
    for epoch in range(1, tc.max_epochs + 1):
        t0 = time.perf_counter()
        losses, sizes = [], []
        batches = iter_batches(train_data, tc.batch_size, shuffle=True, seed=(tc.seed, epoch))
        for step, batch in enumerate(batches):
            rng = np.random.default_rng((tc.seed, epoch, step))
            for p in params.values():
                p.grad = None
            loss = normalized_mse(params, config, batch, training=True, rng=rng)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}, step {step}", hist)
            T.backward(loss)
            if tc.clip_norm is not None:
                clip_grad_norm(params, tc.clip_norm)
            try:
                opt.step(params)
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc), hist) from exc
            losses.append(value)
            sizes.append(len(batch))
        train_loss = float(np.average(losses, weights=sizes))
        val = validation_loss(params, config, val_data, tc.eval_batch_size)
        if not math.isfinite(val):
            raise TrainingDiverged(f"validation loss became {val} at epoch {epoch}", hist)
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val)
        hist.seconds.append(time.perf_counter() - t0)
        log.info("epoch %d  train %.6f  val %.6f  (%.1fs)", epoch, train_loss, val, hist.seconds[-1])
        stop = stopper.update(epoch, val)
        if stopper.best_epoch == epoch:
            best = _snapshot(params)
        if stop:
            hist.stopped_early = epoch < tc.max_epochs
            break
    hist.best_epoch = stopper.best_epoch
    for k, v in best.items():
        params[k].data = v
    for p in params.values():
        p.grad = None
    return params, hist


def evaluate(
    params: ModelParams,
    config: ModelConfig,
    data: WindowBatch,
    metrics: Sequence[str] = ("mse", "mae"),
    batch_size: int = 256,
) -> MetricReport:
    """Metrics of denormalized predictions against raw targets, over all windows."""
    if len(data) == 0:
        raise ValueError("empty test set")
    pred = predict(data.inputs, params, config, batch_size)
    return compute_metrics(data.targets, pred, metrics)
