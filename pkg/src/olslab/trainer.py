"""The training loop: supervise with the previous period's soft labels,
accumulate the next ones, step the optimizer, log metrics, checkpoint."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset, batches, shuffle_seed_for
from .errors import ConfigError, DivergenceError
from .labels import StrategySpec, TargetEngine
from .models import ModelSpec, build_model, checkpoint_from, save_checkpoint
from .optim import SgdConfig, sgd_step


@dataclass(frozen=True)
class Seeds:
    init: int = 0
    shuffle: int = 1
    noise: int = 2


@dataclass
class TrainConfig:
    model: ModelSpec
    optimizer: SgdConfig
    strategy: StrategySpec
    epochs: int
    batch_size: int = 128
    update_period: int | None = None     # iterations between soft-label updates; None = each epoch
    checkpoint_every: int | None = None  # epochs between checkpoints; None = never
    seeds: Seeds = field(default_factory=Seeds)
    out_dir: str | None = None
    dump_soft_labels: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.update_period is not None and self.update_period < 1:
            raise ConfigError(f"update_period must be >= 1, got {self.update_period}")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if (self.checkpoint_every or self.dump_soft_labels) and self.out_dir is None:
            raise ConfigError("out_dir is required for checkpoints or soft-label dumps")


@dataclass
class MetricsRecord:
    """Per-epoch statistics. Errors are percentages in [0, 100]. Train-side
    numbers come from the epoch's own (pre-update) forward passes;
    wall_seconds is informational and never written to artifacts."""

    epoch: int
    train_error: float
    test_error: float
    test_top5_error: float | None
    hard_loss: float
    soft_loss: float
    wrong_label_fit: float | None
    wall_seconds: float


@dataclass
class EvalResult:
    top1_error: float
    top5_error: float | None
    probs: np.ndarray


@dataclass
class TrainResult:
    network: "nn.Network"
    spec: ModelSpec
    metrics: list[MetricsRecord]
    checkpoint_paths: list[str]
    engine: TargetEngine


def topk_hits(probs: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Whether each row's label is among its k largest probabilities;
    ties resolve to the lower class index."""
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return (order == labels[:, None]).any(axis=1)


def evaluate(net: nn.Network, ds: Dataset, batch_size: int = 512) -> EvalResult:
    """Top-1 / top-5 error (percent) and per-sample probabilities."""
    chunks = []
    for start in range(0, ds.n, batch_size):
        logits = net.forward(ds.features[start:start + batch_size])
        chunks.append(nn.softmax(logits))
    probs = np.concatenate(chunks) if chunks else np.zeros((0, ds.n_classes))
    if ds.n == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    top1 = 100.0 * int((~topk_hits(probs, ds.labels, 1)).sum()) / ds.n
    top5 = None
    if ds.n_classes >= 5:
        top5 = 100.0 * int((~topk_hits(probs, ds.labels, 5)).sum()) / ds.n
    return EvalResult(top1, top5, probs)


def fit(cfg: TrainConfig, train_ds: Dataset, test_ds: Dataset) -> TrainResult:
    """Run the full training schedule; deterministic given (cfg, data).

    Per iteration: forward, build targets from the strategy, blended-CE
    backward, SGD step, then feed the pre-update predictions to the strategy.
    Soft-label state updates every `update_period` iterations, or at each
    epoch boundary when the period is unset.
    """
    if train_ds.n_classes != cfg.model.n_classes:
        raise ConfigError(
            f"dataset has {train_ds.n_classes} classes, model expects {cfg.model.n_classes}"
        )
    net = build_model(cfg.model, cfg.seeds.init)
    engine = TargetEngine(cfg.strategy, cfg.model.n_classes, selection_seed=cfg.seeds.shuffle)
    hard_weight = engine.hard_weight
    noisy = train_ds.labels != train_ds.clean_labels
    n_noisy = int(noisy.sum())

    ckpt_dir = None
    if cfg.checkpoint_every:
        ckpt_dir = os.path.join(cfg.out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
    if cfg.dump_soft_labels:
        os.makedirs(cfg.out_dir, exist_ok=True)

    metrics: list[MetricsRecord] = []
    checkpoint_paths: list[str] = []
    iteration = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        n_correct = 0
        n_wrong_fit = 0
        hard_sum = 0.0
        soft_sum = 0.0
        for xb, yb, idx in batches(train_ds, cfg.batch_size,
                                   shuffle_seed_for(cfg.seeds.shuffle, epoch)):
            iteration += 1
            probs = nn.softmax(net.forward(xb))
            targets = engine.batch_targets(yb, probs)
            total, hard, soft = nn.batch_combined_loss(probs, yb, targets, hard_weight)
            if not np.isfinite(total):
                raise DivergenceError(epoch, iteration)
            net.zero_grads()
            net.backward(nn.loss_logit_gradient(probs, yb, targets, hard_weight))
            sgd_step(net.parameters(), cfg.optimizer, epoch)
            preds = probs.argmax(axis=1)
            engine.observe(yb, probs, preds)
            if cfg.update_period is not None and iteration % cfg.update_period == 0:
                engine.end_period()
            n_correct += int((preds == yb).sum())
            if n_noisy:
                n_wrong_fit += int(((preds == yb) & noisy[idx]).sum())
            hard_sum += hard * len(yb)
            soft_sum += soft * len(yb)
        if cfg.update_period is None:
            engine.end_period()

        test_eval = evaluate(net, test_ds)
        record = MetricsRecord(
            epoch=epoch,
            train_error=100.0 * (train_ds.n - n_correct) / train_ds.n,
            test_error=test_eval.top1_error,
            test_top5_error=test_eval.top5_error,
            hard_loss=hard_sum / train_ds.n,
            soft_loss=soft_sum / train_ds.n,
            wrong_label_fit=100.0 * n_wrong_fit / n_noisy if n_noisy else None,
            wall_seconds=time.perf_counter() - t0,
        )
        metrics.append(record)

        if ckpt_dir and epoch % cfg.checkpoint_every == 0:
            path = os.path.join(ckpt_dir, f"epoch_{epoch:04d}.ckpt")
            rng_state = {
                "init": cfg.seeds.init, "shuffle": cfg.seeds.shuffle,
                "noise": cfg.seeds.noise, "epoch": epoch,
            }
            save_checkpoint(path, checkpoint_from(net, cfg.model, epoch,
                                                  bank=engine.bank, rng_state=rng_state))
            checkpoint_paths.append(path)
        if cfg.dump_soft_labels and engine.bank is not None:
            dump_path = os.path.join(cfg.out_dir, f"soft_labels_epoch_{epoch}.csv")
            np.savetxt(dump_path, engine.bank.s_prev, delimiter=",", fmt="%.17g")

    return TrainResult(net, cfg.model, metrics, checkpoint_paths, engine)


_CSV_COLUMNS = (
    "epoch", "train_error", "test_error", "test_top5_error",
    "hard_loss", "soft_loss", "wrong_label_fit",
)


def metrics_csv_text(records: list[MetricsRecord]) -> str:
    """Render metrics as CSV. wall_seconds is deliberately excluded so that
    identical runs produce byte-identical files."""
    lines = [",".join(_CSV_COLUMNS)]
    for r in records:
        row = []
        for col in _CSV_COLUMNS:
            value = getattr(r, col)
            if value is None:
                row.append("")
            elif col == "epoch":
                row.append(str(value))
            else:
                row.append(repr(float(value)))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_metrics_csv(path, records: list[MetricsRecord]):
    with open(path, "w", newline="") as fh:
        fh.write(metrics_csv_text(records))
