"""Desk-scale supervised training: AdamW, cosine decay, train/eval loops.

Reproducibility contract: (seed, config, dataset) fully determine the
metrics CSV bitwise. Wall-clock timing is therefore written as 0.0 unless
``timing`` is enabled explicitly; per-epoch durations always go to the
log stream instead.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .data import Dataset
from .errors import TrainingDiverged
from .fileio import atomic_write_text
from .model import SpikeTransformer
from .tensor import Tensor

METRICS_HEADER = ("epoch", "train_loss", "test_loss", "test_acc", "lr", "wall_seconds")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    base_lr: float = 5e-4
    weight_decay: float = 0.02
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    timing: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def to_kv(self) -> dict[str, str]:
        return {
            "epochs": str(self.epochs),
            "batch_size": str(self.batch_size),
            "base_lr": repr(self.base_lr),
            "weight_decay": repr(self.weight_decay),
            "seed": str(self.seed),
        }


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr at step 0 to zero at total_steps."""
    if total_steps <= 0:
        return base_lr
    step = min(max(step, 0), total_steps)
    return base_lr * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, params: list[Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data, dtype=np.float64) for p in params]
        self.v = [np.zeros_like(p.data, dtype=np.float64) for p in params]

    def step(self, lr: float) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if self.weight_decay:
                p.data *= p.data.dtype.type(1.0 - lr * self.weight_decay)
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= (lr * update).astype(p.data.dtype)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    test_loss: float
    test_acc: float
    lr: float
    wall_seconds: float

    def csv_row(self) -> tuple:
        return (self.epoch, f"{self.train_loss:.6f}", f"{self.test_loss:.6f}",
                f"{self.test_acc:.6f}", f"{self.lr:.8f}", f"{self.wall_seconds:.3f}")


def eval_loop(model: SpikeTransformer, dataset: Dataset, batch_size: int = 64) -> tuple[float, float]:
    """Deterministic eval: returns (mean loss, accuracy)."""
    was_training = model.training
    model.eval()
    total_loss, correct = 0.0, 0
    try:
        with T.no_grad():
            for start in range(0, len(dataset), batch_size):
                images = dataset.images[start:start + batch_size]
                labels = dataset.labels[start:start + batch_size]
                logits = model(images)
                total_loss += float(T.cross_entropy(logits, labels).data) * len(images)
                correct += int((logits.data.argmax(axis=1) == labels).sum())
    finally:
        if was_training:
            model.train()
    n = len(dataset)
    return total_loss / n, correct / n


def train_loop(model: SpikeTransformer, train_ds: Dataset, test_ds: Dataset,
               config: TrainConfig, out_dir: Optional[str] = None,
               log: Optional[Callable[[str], None]] = None,
               epoch_callback: Optional[Callable[[EpochMetrics], bool]] = None) -> list[EpochMetrics]:
    """Run the full training schedule; returns per-epoch metrics.

    Writes ``metrics.csv`` plus best/last checkpoints into ``out_dir`` when
    given. A non-finite loss aborts with a diagnostic dump of the attention
    value-range histograms. ``epoch_callback`` may return True to stop early
    (the metrics written so far stay valid).
    """
    from . import checkpoint as ckpt

    rng = np.random.default_rng(config.seed)
    opt = AdamW(model.parameters(), beta1=config.beta1, beta2=config.beta2,
                eps=config.eps, weight_decay=config.weight_decay)
    steps_per_epoch = max(1, math.ceil(len(train_ds) / config.batch_size))
    total_steps = steps_per_epoch * config.epochs
    history: list[EpochMetrics] = []
    best_acc = -1.0
    global_step = 0
    emit = log or (lambda msg: None)

    model.train()
    start_time = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_ds))
        epoch_loss, seen = 0.0, 0
        lr = config.base_lr
        for start in range(0, len(train_ds), config.batch_size):
            idx = order[start:start + config.batch_size]
            images = train_ds.images[idx]
            labels = train_ds.labels[idx]
            T.clear_tape()
            model.zero_grad()
            logits = model(images)
            loss = T.cross_entropy(logits, labels)
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                _dump_divergence(model, images, out_dir)
                raise TrainingDiverged(
                    f"non-finite loss {loss_value} at epoch {epoch} step {global_step}; "
                    f"value-range dump written" + (f" to {out_dir}" if out_dir else ""))
            loss.backward()
            lr = cosine_lr(global_step, total_steps, config.base_lr)
            opt.step(lr)
            global_step += 1
            epoch_loss += loss_value * len(idx)
            seen += len(idx)
        test_loss, test_acc = eval_loop(model, test_ds, batch_size=config.batch_size)
        elapsed = time.perf_counter() - start_time
        metrics = EpochMetrics(
            epoch=epoch, train_loss=epoch_loss / seen, test_loss=test_loss,
            test_acc=test_acc, lr=lr,
            wall_seconds=elapsed if config.timing else 0.0)
        history.append(metrics)
        emit(f"epoch {epoch}/{config.epochs}: train_loss={metrics.train_loss:.4f} "
             f"test_loss={test_loss:.4f} test_acc={test_acc:.4f} lr={lr:.6f} "
             f"[{elapsed:.1f}s]")
        if out_dir:
            write_metrics_csv(os.path.join(out_dir, "metrics.csv"), history)
            ckpt.save_model(os.path.join(out_dir, "last.ckpt"), model)
            if test_acc > best_acc:
                best_acc = test_acc
                ckpt.save_model(os.path.join(out_dir, "best.ckpt"), model)
        elif test_acc > best_acc:
            best_acc = test_acc
        if epoch_callback is not None and epoch_callback(metrics):
            break
    return history


def write_metrics_csv(path: str, history: list[EpochMetrics]) -> None:
    lines = [",".join(METRICS_HEADER)]
    lines.extend(",".join(str(v) for v in row.csv_row()) for row in history)
    atomic_write_text(path, "\n".join(lines) + "\n")


def _dump_divergence(model: SpikeTransformer, images: np.ndarray, out_dir: Optional[str]) -> None:
    """Best-effort diagnostic dump of the product value ranges (NaN abort path)."""
    if not out_dir:
        return
    try:
        from . import profiler
        from .fileio import write_csv
        probe = profiler.run_probe(model, images, batch_size=len(images), collect_values=True)
        dump_dir = os.path.join(out_dir, "nan_dump")
        ranges = [(name, rec["vmin"], rec["vmax"]) for name, rec in probe.attn.items()]
        write_csv(os.path.join(dump_dir, "value_ranges.csv"),
                  ("layer", "min", "max"), ranges)
        for name, (centers, counts) in probe.histograms().items():
            safe = name.replace(".", "_")
            write_csv(os.path.join(dump_dir, f"{safe}.csv"), ("bin_center", "count"),
                      zip(centers.tolist(), counts.tolist()))
    except Exception:
        pass
