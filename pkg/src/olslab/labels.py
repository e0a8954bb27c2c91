"""Label-target strategies, soft-target losses, and the online soft-label bank.

Conventions: a target distribution is a length-K float64 vector summing to 1.
The bank stores one K x K matrix per role, where column y is the soft label
for class y. Supervision always reads the matrix finalized at the previous
update boundary; the accumulator for the current period is separate state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import LOG_FLOOR, one_hot

STRATEGY_KINDS = (
    "hard",
    "uniform_ls",
    "tfkd",
    "bootstrap_soft",
    "bootstrap_hard",
    "ols",
    "ols_single",
)

# Stream tag for the ols_single selection RNG (keeps it disjoint from other
# consumers of the shuffle seed).
_SINGLE_DRAW_STREAM = 5


def _check_class(y: int, n_classes: int):
    if not 0 <= y < n_classes:
        raise IndexError(f"class index {y} out of range for {n_classes} classes")


def hard_target(y: int, n_classes: int) -> np.ndarray:
    """One-hot distribution at class y."""
    _check_class(y, n_classes)
    out = np.zeros(n_classes)
    out[y] = 1.0
    return out


def uniform_ls_target(y: int, n_classes: int, smoothing: float) -> np.ndarray:
    """Label-smoothed target: 1 - smoothing + smoothing/K at y, smoothing/K elsewhere."""
    _check_class(y, n_classes)
    if not 0.0 <= smoothing <= 1.0:
        raise ConfigError(f"smoothing must be in [0, 1], got {smoothing}")
    out = np.full(n_classes, smoothing / n_classes)
    out[y] = 1.0 - smoothing + smoothing / n_classes
    return out


def tfkd_target(y: int, n_classes: int, confidence: float) -> np.ndarray:
    """Hand-designed teacher: `confidence` at y, the remainder spread evenly."""
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    _check_class(y, n_classes)
    if not 0.0 < confidence <= 1.0:
        raise ConfigError(f"confidence must be in (0, 1], got {confidence}")
    out = np.full(n_classes, (1.0 - confidence) / (n_classes - 1))
    out[y] = confidence
    return out


def bootstrap_target(y: int, probs: np.ndarray, label_weight: float,
                     mode: str = "soft") -> np.ndarray:
    """Blend of the one-hot label with the model's own prediction.

    soft: label_weight*onehot(y) + (1-label_weight)*probs
    hard: label_weight*onehot(y) + (1-label_weight)*onehot(argmax probs)
    """
    probs = np.asarray(probs, dtype=np.float64)
    _check_class(y, probs.shape[0])
    if not 0.0 <= label_weight <= 1.0:
        raise ConfigError(f"label_weight must be in [0, 1], got {label_weight}")
    if abs(probs.sum() - 1.0) > 1e-6:
        raise ValueError(f"probs must sum to 1, got {probs.sum()}")
    if mode == "soft":
        other = probs
    elif mode == "hard":
        other = np.zeros_like(probs)
        other[int(probs.argmax())] = 1.0
    else:
        raise ConfigError(f"bootstrap mode must be 'soft' or 'hard', got {mode!r}")
    onehot = np.zeros_like(probs)
    onehot[y] = 1.0
    return label_weight * onehot + (1.0 - label_weight) * other


def soft_ce_loss(probs: np.ndarray, target: np.ndarray) -> float:
    """Cross entropy of a prediction against a soft target: -sum_k t_k log p_k."""
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return float(-(target * np.log(np.maximum(probs, LOG_FLOOR))).sum())


def combined_loss(probs: np.ndarray, y: int, target: np.ndarray,
                  hard_weight: float) -> tuple[float, float, float]:
    """Blend of hard-label CE and soft-target CE for one sample.

    Returns (total, hard, soft) with total = hw*hard + (1-hw)*soft.
    """
    if not 0.0 <= hard_weight <= 1.0:
        raise ConfigError(f"hard_weight must be in [0, 1], got {hard_weight}")
    probs = np.asarray(probs, dtype=np.float64)
    _check_class(y, probs.shape[0])
    hard = float(-np.log(max(probs[y], LOG_FLOOR)))
    soft = soft_ce_loss(probs, target)
    return hard_weight * hard + (1.0 - hard_weight) * soft, hard, soft


class SoftLabelBank:
    """Per-class soft labels accumulated online from correct predictions.

    `s_prev` (column y = supervision distribution for class y) is what
    training reads; `s_accum` and `counts` collect the current period's
    correct predictions until `finalize` normalizes them into `s_prev`.
    """

    def __init__(self, n_classes: int):
        if n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {n_classes}")
        self.n_classes = n_classes
        self.s_prev = np.full((n_classes, n_classes), 1.0 / n_classes)
        self.s_accum = np.zeros((n_classes, n_classes))
        self.counts = np.zeros(n_classes, dtype=np.int64)

    def target(self, y: int) -> np.ndarray:
        """Copy of the supervision column for class y."""
        _check_class(y, self.n_classes)
        return self.s_prev[:, y].copy()

    def targets(self, labels: np.ndarray) -> np.ndarray:
        """(n, K) matrix of supervision rows for a batch of labels."""
        return self.s_prev[:, labels].T.copy()

    def accumulate(self, y: int, probs: np.ndarray, predicted: int):
        """Add one prediction to class y's accumulator, but only if it was correct."""
        _check_class(y, self.n_classes)
        if predicted != y:
            return
        self.s_accum[:, y] += probs
        self.counts[y] += 1

    def accumulate_batch(self, labels: np.ndarray, probs: np.ndarray, predicted: np.ndarray):
        correct = predicted == labels
        if not correct.any():
            return
        ys = labels[correct]
        np.add.at(self.s_accum.T, ys, probs[correct])
        np.add.at(self.counts, ys, 1)

    def finalize(self):
        """Normalize accumulated columns into `s_prev`; reset the accumulator.

        A class with no correct predictions this period keeps its previous
        column, so supervision degrades gracefully instead of dividing by zero.
        """
        seen = self.counts > 0
        if seen.any():
            sums = self.s_accum[:, seen].sum(axis=0)
            self.s_prev[:, seen] = self.s_accum[:, seen] / sums
        self.s_accum.fill(0.0)
        self.counts.fill(0)


def bank_init(n_classes: int) -> SoftLabelBank:
    return SoftLabelBank(n_classes)


class PredictionPool:
    """Previous-epoch per-sample predictions, grouped by training label.

    Bounded by construction: each training sample contributes one vector per
    period, so a class's pool never exceeds its sample count.
    """

    def __init__(self, n_classes: int):
        self.n_classes = n_classes
        self._previous = [[] for _ in range(n_classes)]
        self._current = [[] for _ in range(n_classes)]

    def record_batch(self, labels: np.ndarray, probs: np.ndarray):
        for y, p in zip(labels, probs):
            self._current[int(y)].append(p.copy())

    def candidates(self, y: int) -> list[np.ndarray]:
        _check_class(y, self.n_classes)
        return self._previous[y]

    def draw(self, y: int, rng: np.random.Generator) -> np.ndarray:
        return ols_single_target(self.candidates(y), self.n_classes, rng)

    def roll(self):
        """Make the current period's recordings the selection pool."""
        self._previous = self._current
        self._current = [[] for _ in range(self.n_classes)]


def ols_single_target(candidates, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    """One uniformly chosen same-class prediction; uniform 1/K if none exist yet."""
    if not candidates:
        return np.full(n_classes, 1.0 / n_classes)
    return candidates[int(rng.integers(len(candidates)))].copy()


@dataclass(frozen=True)
class StrategySpec:
    """Tagged choice of label-target rule plus its parameters.

    smoothing    - uniform_ls: probability mass moved off the true class
    confidence   - tfkd: probability kept on the true class
    label_weight - bootstrap_*: weight on the one-hot label in the blend
    hard_weight  - ols / ols_single: weight on the hard-CE term of the loss
    """

    kind: str
    smoothing: float = 0.1
    confidence: float = 0.95
    label_weight: float = 0.95
    hard_weight: float = 0.5

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy kind {self.kind!r}; pick one of {STRATEGY_KINDS}")
        if not 0.0 <= self.smoothing <= 1.0:
            raise ConfigError(f"smoothing must be in [0, 1], got {self.smoothing}")
        if not 0.0 < self.confidence <= 1.0:
            raise ConfigError(f"confidence must be in (0, 1], got {self.confidence}")
        if not 0.0 <= self.label_weight <= 1.0:
            raise ConfigError(f"label_weight must be in [0, 1], got {self.label_weight}")
        if not 0.0 <= self.hard_weight <= 1.0:
            raise ConfigError(f"hard_weight must be in [0, 1], got {self.hard_weight}")


class TargetEngine:
    """Binds a strategy to its training-time state (bank or prediction pool).

    The trainer calls, per batch: `batch_targets` (after the forward pass,
    before the update), then `observe` with the same pre-update
    probabilities; `end_period` fires at every update boundary.
    """

    def __init__(self, spec: StrategySpec, n_classes: int, selection_seed: int = 0):
        self.spec = spec
        self.n_classes = n_classes
        self.bank = SoftLabelBank(n_classes) if spec.kind == "ols" else None
        self.pool = PredictionPool(n_classes) if spec.kind == "ols_single" else None
        self._rng = (
            np.random.default_rng([_SINGLE_DRAW_STREAM, selection_seed])
            if spec.kind == "ols_single" else None
        )
        if spec.kind == "hard":
            self._table = np.eye(n_classes)
        elif spec.kind == "uniform_ls":
            self._table = np.stack(
                [uniform_ls_target(y, n_classes, spec.smoothing) for y in range(n_classes)]
            )
        elif spec.kind == "tfkd":
            self._table = np.stack(
                [tfkd_target(y, n_classes, spec.confidence) for y in range(n_classes)]
            )
        else:
            self._table = None

    @property
    def hard_weight(self) -> float:
        """Weight of the hard-CE term: 1 for hard labels, the configured blend
        for the online strategies, 0 for strategies whose target is the loss."""
        if self.spec.kind == "hard":
            return 1.0
        if self.spec.kind in ("ols", "ols_single"):
            return self.spec.hard_weight
        return 0.0

    def batch_targets(self, labels: np.ndarray, probs: np.ndarray | None) -> np.ndarray:
        kind = self.spec.kind
        if self._table is not None:
            return self._table[labels]
        if kind == "ols":
            return self.bank.targets(labels)
        if kind == "ols_single":
            return np.stack([self.pool.draw(int(y), self._rng) for y in labels])
        if probs is None:
            raise ValueError(f"strategy {kind!r} needs the current predictions")
        onehot = one_hot(labels, self.n_classes)
        w = self.spec.label_weight
        if kind == "bootstrap_soft":
            return w * onehot + (1.0 - w) * probs
        pred_onehot = one_hot(probs.argmax(axis=1), self.n_classes)
        return w * onehot + (1.0 - w) * pred_onehot

    def observe(self, labels: np.ndarray, probs: np.ndarray, predicted: np.ndarray):
        if self.bank is not None:
            self.bank.accumulate_batch(labels, probs, predicted)
        if self.pool is not None:
            self.pool.record_batch(labels, probs)

    def end_period(self):
        if self.bank is not None:
            self.bank.finalize()
        if self.pool is not None:
            self.pool.roll()
