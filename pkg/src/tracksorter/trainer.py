"""Adam + cosine-annealed training loop with best-validation checkpointing."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .model import Batch, Checkpoint, TrackSorter, batch_loss, make_batch

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 371
    base_lr: float = 1e-3
    min_lr: float = 1e-5
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.min_lr <= self.base_lr:
            raise ValueError("need 0 < min_lr <= base_lr")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def cosine_lr(t: float, cfg: TrainConfig) -> float:
    return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1 + math.cos(math.pi * t / cfg.epochs))


@dataclass
class TrainState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    best_val_loss: float = math.inf


def adam_step(params: dict[str, T.Tensor], grads: dict[str, np.ndarray], state: TrainState, lr: float,
              cfg: TrainConfig) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name} at step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.data.dtype)


def _grads(model: TrackSorter, clip_norm: float | None) -> dict[str, np.ndarray]:
    grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
    if clip_norm is not None:
        total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
        if total > clip_norm:
            grads = {k: g * (clip_norm / total) for k, g in grads.items()}
    return grads


def batches(pairs: Sequence[tuple[Sequence[int], Sequence[int]]], batch_size: int,
            order: np.ndarray | None = None) -> list[Batch]:
    idx = np.arange(len(pairs)) if order is None else order
    return [make_batch([pairs[i] for i in idx[s : s + batch_size]]) for s in range(0, len(idx), batch_size)]


def evaluate_loss(model: TrackSorter, pairs, batch_size: int = 64) -> float:
    """Token-weighted mean teacher-forced loss."""
    total, n = 0.0, 0
    with T.no_grad():
        for b in batches(pairs, batch_size):
            k = b.n_tokens
            total += float(batch_loss(model, b).data) * k
            n += k
    return total / n


def train(model: TrackSorter, train_set, val_set, cfg: TrainConfig, log_path=None,
          on_epoch: Callable[[int, float, float, float], None] | None = None) -> Checkpoint:
    """Train in place; return the checkpoint with the lowest validation loss.

    ``train_set``/``val_set`` are sequences of ``(input_tokens, target_tokens)``.
    """
    if not train_set or not val_set:
        raise ValueError("train: datasets must be nonempty")
    rng = np.random.default_rng(cfg.seed)
    state = TrainState()
    best: Checkpoint | None = None
    rows = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg)
        order = rng.permutation(len(train_set))
        total, n = 0.0, 0
        for bi, batch in enumerate(batches(train_set, cfg.batch_size, order)):
            model.zero_grad()
            loss = batch_loss(model, batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {bi}")
            T.backward(loss)
            adam_step(model.params, _grads(model, cfg.clip_norm), state, lr, cfg)
            k = batch.n_tokens
            total += value * k
            n += k
        model.zero_grad()
        train_loss = total / n
        val_loss = evaluate_loss(model, val_set)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        rows.append((epoch, train_loss, val_loss, lr))
        log.info("epoch %d train %.5f val %.5f lr %.3g", epoch, train_loss, val_loss, lr)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss, lr)
        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            best = Checkpoint.from_model(
                model,
                moments={k: (state.m[k].astype(np.float32), state.v[k].astype(np.float32)) for k in state.m},
                step=state.step, epoch=epoch, val_loss=val_loss,
            )
    if log_path is not None:
        write_log(rows, log_path)
    assert best is not None
    return best


def write_log(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for epoch, tl, vl, lr in rows:
            w.writerow([epoch, repr(tl), repr(vl), repr(lr)])
