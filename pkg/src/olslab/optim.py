"""Momentum SGD with a milestone learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .nn import Parameter


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    milestones: tuple[int, ...] = ()
    decay_factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(self.milestones))
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigError(f"milestones must be strictly increasing, got {self.milestones}")


def learning_rate_at(cfg: SgdConfig, epoch: int) -> float:
    """Base rate decayed once for every milestone the (1-indexed) epoch has reached."""
    passed = sum(1 for m in cfg.milestones if epoch >= m)
    return cfg.learning_rate * cfg.decay_factor ** passed


def sgd_step(params: list[Parameter], cfg: SgdConfig, epoch: int):
    """In-place update: v <- momentum*v + grad + wd*param; param <- param - lr(epoch)*v."""
    lr = learning_rate_at(cfg, epoch)
    for p in params:
        p.momentum *= cfg.momentum
        p.momentum += p.grad
        if cfg.weight_decay:
            p.momentum += cfg.weight_decay * p.value
        p.value -= lr * p.momentum
