"""Gradient-sign attacks under an l-infinity budget, and robust evaluation.

The attack loss is always the hard-label cross entropy against the true
label, whatever strategy trained the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import Network, input_gradient
from .trainer import Dataset, topk_hits
from . import nn

_PGD_STREAM = 6


@dataclass(frozen=True)
class AttackConfig:
    """Gradient-sign attack settings. When a value_range is given, inputs are
    assumed to lie within it; the measured perturbation norm then stays within
    the bound and outputs stay within the range."""

    method: str                      # "fgsm" | "pgd"
    step: float                      # per-iteration step size
    bound: float                     # l-infinity radius around the input
    iterations: int = 1
    value_range: tuple[float, float] | None = None
    random_start: bool = True        # pgd only
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("fgsm", "pgd"):
            raise ConfigError(f"attack method must be 'fgsm' or 'pgd', got {self.method!r}")
        if self.step < 0 or self.bound < 0:
            raise ConfigError("attack step and bound must be non-negative")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.method == "fgsm" and (self.iterations != 1 or self.step != self.bound):
            raise ConfigError("fgsm requires iterations == 1 and step == bound")
        if self.value_range is not None:
            object.__setattr__(self, "value_range", tuple(self.value_range))
            lo, hi = self.value_range
            if lo >= hi:
                raise ConfigError(f"value range must satisfy lo < hi, got {self.value_range}")


def _clip_range(x: np.ndarray, value_range) -> np.ndarray:
    if value_range is None:
        return x
    return np.clip(x, value_range[0], value_range[1])


def _project_linf(adv: np.ndarray, x: np.ndarray, bound: float) -> np.ndarray:
    """Project onto the l-infinity ball so that the *measured* norm
    max|adv - x| never exceeds the bound.

    Clipping against x +/- bound leaves up to half an ulp of overshoot after
    rounding, so violating coordinates are nudged one representable value
    toward x until the recomputed difference satisfies the bound.
    """
    adv = x + np.clip(adv - x, -bound, bound)
    while True:
        over = np.abs(adv - x) > bound
        if not over.any():
            return adv
        adv[over] = np.nextafter(adv[over], x[over])


def fgsm_attack(net: Network, x: np.ndarray, labels: np.ndarray,
                cfg: AttackConfig) -> np.ndarray:
    """x + step * sign(grad_x CE), clipped to the value range."""
    x = np.asarray(x, dtype=np.float64)
    grad = input_gradient(net, x, labels)
    adv = _clip_range(x + cfg.step * np.sign(grad), cfg.value_range)
    return _project_linf(adv, x, cfg.step)


def pgd_attack(net: Network, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Iterated gradient-sign steps, each projected back onto the l-infinity
    ball around the original input (and the value range)."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.random_start:
        if rng is None:
            rng = np.random.default_rng([_PGD_STREAM, cfg.seed])
        adv = _clip_range(x + rng.uniform(-cfg.bound, cfg.bound, size=x.shape),
                          cfg.value_range)
        adv = _project_linf(adv, x, cfg.bound)
    else:
        adv = x.copy()
    for _ in range(cfg.iterations):
        grad = input_gradient(net, adv, labels)
        adv = adv + cfg.step * np.sign(grad)
        adv = _clip_range(adv, cfg.value_range)
        adv = _project_linf(adv, x, cfg.bound)
    return adv


def attack_inputs(net: Network, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    if cfg.method == "fgsm":
        return fgsm_attack(net, x, labels, cfg)
    return pgd_attack(net, x, labels, cfg, rng=rng)


def robust_error(net: Network, ds: Dataset, cfg: AttackConfig,
                 batch_size: int = 256) -> float:
    """Top-1 error (percent) on attacked inputs; deterministic per cfg.seed."""
    rng = np.random.default_rng([_PGD_STREAM, cfg.seed]) if cfg.method == "pgd" else None
    wrong = 0
    for start in range(0, ds.n, batch_size):
        xb = ds.features[start:start + batch_size]
        yb = ds.labels[start:start + batch_size]
        adv = attack_inputs(net, xb, yb, cfg, rng=rng)
        probs = nn.softmax(net.forward(adv))
        wrong += int((~topk_hits(probs, yb, 1)).sum())
    return 100.0 * wrong / ds.n
