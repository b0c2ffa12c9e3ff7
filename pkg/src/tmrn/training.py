"""Adam, L1 loss, evaluation, and the epoch loop with early stopping."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import TmrnParams, forward, named_parameters
from .config import TmrnConfig
from .data import Batch, Sample, collate, make_batches
from .metrics import MetricsReport, compute_metrics

logger = logging.getLogger(__name__)


class Adam:
    """Adam with bias-corrected moments; a missing gradient counts as zero."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for k, t in self.params.items():
            g = t.grad
            if g is None:
                g = np.zeros_like(t.data)
            elif g.shape != t.data.shape:
                raise ad.DimensionError(f"gradient for {k} has shape {g.shape}, parameter {t.shape}")
            m = self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            v = self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            t.data = t.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()


def adam_step(state: Adam, grads: dict[str, np.ndarray] | None = None) -> None:
    """Functional entry point: optionally install ``grads`` then take one step."""
    if grads is not None:
        for k, g in grads.items():
            state.params[k].grad = np.asarray(g, dtype=np.float64)
    state.step()


def l1_loss(pred: Tensor, label: Tensor | np.ndarray) -> Tensor:
    label = label if isinstance(label, Tensor) else Tensor(label)
    if pred.shape != label.shape:
        raise ad.DimensionError(f"l1_loss: pred {pred.shape} vs label {label.shape}")
    if pred.size == 0:
        raise ValueError("l1_loss on an empty batch")
    return ad.mean_all(ad.absolute(ad.sub(pred, label)))


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> tuple[float, bool]:
    """Rescale gradients so their global L2 norm is at most ``max_norm``."""
    grads = [t.grad for t in params.values() if t.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm <= 0 or norm <= max_norm:
        return norm, False
    factor = max_norm / norm
    for t in params.values():
        if t.grad is not None:
            t.grad = t.grad * factor
    return norm, True


def batch_forward(params: TmrnParams, config: TmrnConfig, batch: Batch) -> Tensor:
    return forward(params, config, batch.features, batch.masks)


def predict(params: TmrnParams, config: TmrnConfig, samples: Sequence[Sample], batch_size: int = 256) -> np.ndarray:
    out = []
    with ad.no_grad():
        for lo in range(0, len(samples), batch_size):
            out.append(batch_forward(params, config, collate(samples[lo : lo + batch_size])).data)
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(params: TmrnParams, config: TmrnConfig, samples: Sequence[Sample], strict: bool = False) -> MetricsReport:
    return compute_metrics(predict(params, config, samples), [s.label for s in samples], strict=strict)


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    best_valid_mae: float
    history: list[dict] = field(default_factory=list)


def snapshot(params: TmrnParams) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in named_parameters(params).items()}


def restore(params: TmrnParams, state: dict[str, np.ndarray]) -> None:
    for k, t in named_parameters(params).items():
        t.data = state[k].copy()


def train(
    params: TmrnParams,
    config: TmrnConfig,
    train_set: Sequence[Sample],
    valid_set: Sequence[Sample],
    log_path: str | Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train in place, keeping the parameters with the lowest validation MAE.

    Shuffling uses ``config.seed + epoch``. Each epoch appends one JSON line
    to ``log_path``; ``wall_time`` is the only field that varies between
    identical runs. On return ``params`` hold the best epoch's values.
    """
    if not train_set or not valid_set:
        raise ValueError("train and valid sets must be non-empty")
    if config.lr < 0:
        raise ValueError("lr must be non-negative")
    named = named_parameters(params)
    opt = Adam(named, lr=config.lr)
    best = TrainResult(snapshot(params), 0, float("inf"))
    stale = 0
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            start = time.perf_counter()
            total, clipped = 0.0, 0
            for batch in make_batches(train_set, config.batch_size, seed=config.seed + epoch):
                opt.zero_grad()
                loss = l1_loss(batch_forward(params, config, batch), batch.labels)
                ad.backward(loss)
                norm, was_clipped = clip_grad_norm(named, config.clip_norm)
                if was_clipped:
                    clipped += 1
                    logger.debug("epoch %d: clipped gradient norm %.4g", epoch, norm)
                opt.step()
                total += loss.item() * len(batch)
            if clipped:
                logger.info("epoch %d: gradient clipping triggered on %d batches", epoch, clipped)
            report = evaluate(params, config, valid_set)
            record = {
                "epoch": epoch,
                "train_loss": total / len(train_set),
                "valid": report.to_dict(),
                "clipped_batches": clipped,
                "wall_time": time.perf_counter() - start,
            }
            best.history.append(record)
            if log:
                log.write(json.dumps(record) + "\n")
                log.flush()
            if on_epoch:
                on_epoch(record)
            if report.mae < best.best_valid_mae:
                best.best_state, best.best_epoch, best.best_valid_mae = snapshot(params), epoch, report.mae
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    logger.info("early stop at epoch %d (best %d)", epoch, best.best_epoch)
                    break
    finally:
        if log:
            log.close()
    restore(params, best.best_state)
    return best
