"""Post-hoc analysis: calibration error, divergence from a reference
distribution set, and epoch ensembling."""

from __future__ import annotations

import csv

import numpy as np

from .errors import ConfigError
from .models import Checkpoint, network_from_checkpoint
from .nn import LOG_FLOOR, Network, softmax
from .trainer import Dataset, topk_hits


def expected_calibration_error(probs: np.ndarray, labels: np.ndarray,
                               bins: int = 15) -> float:
    """ECE in percent over equal-width confidence bins covering (0, 1].

    Bin m is the half-open interval (m/bins, (m+1)/bins]; each sample lands
    in the bin containing its top confidence.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError("need a non-empty (n, K) probability matrix")
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")
    confidence = probs.max(axis=1)
    correct = topk_hits(probs, labels, 1)
    bin_idx = np.clip(np.ceil(confidence * bins).astype(int) - 1, 0, bins - 1)
    n = probs.shape[0]
    total = 0.0
    for m in range(bins):
        members = bin_idx == m
        size = int(members.sum())
        if size == 0:
            continue
        acc = correct[members].sum() / size
        conf = confidence[members].sum() / size
        total += (size / n) * abs(acc - conf)
    return 100.0 * total


def kl_to_reference(probs: np.ndarray, refs: np.ndarray, labels: np.ndarray,
                    only_correct: bool = True) -> float:
    """Mean KL(reference || model) over samples, optionally restricted to the
    correctly predicted ones."""
    probs = np.asarray(probs, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    if probs.shape != refs.shape:
        raise ConfigError(f"probs shape {probs.shape} != reference shape {refs.shape}")
    if only_correct:
        keep = topk_hits(probs, np.asarray(labels), 1)
        if not keep.any():
            raise ValueError("no correctly predicted samples to average over")
        probs, refs = probs[keep], refs[keep]
    ratio = np.log(np.maximum(refs, LOG_FLOOR)) - np.log(np.maximum(probs, LOG_FLOOR))
    return float((refs * ratio).sum(axis=1).mean())


def load_reference_distributions(path, n_classes: int) -> np.ndarray:
    """Read an (n, K) reference probability matrix from CSV (no header)."""
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    refs = np.asarray(rows, dtype=np.float64)
    if refs.ndim != 2 or refs.shape[1] != n_classes:
        raise ConfigError(f"reference file must have {n_classes} columns, got {refs.shape}")
    bad = np.nonzero(np.abs(refs.sum(axis=1) - 1.0) > 1e-6)[0]
    if bad.size:
        raise ConfigError(f"reference row {bad[0]} does not sum to 1")
    return refs


def ensemble_predict(checkpoints: list[Checkpoint], x: np.ndarray) -> np.ndarray:
    """Mean of the member models' softmax outputs."""
    nets = _ensemble_networks(checkpoints)
    return _mean_probs(nets, x)


def _ensemble_networks(checkpoints: list[Checkpoint]) -> list[Network]:
    if not checkpoints:
        raise ConfigError("ensemble needs at least one checkpoint")
    spec = checkpoints[0].spec
    if any(c.spec != spec for c in checkpoints[1:]):
        raise ConfigError("ensemble members must share one model spec")
    return [network_from_checkpoint(c) for c in checkpoints]


def _mean_probs(nets: list[Network], x: np.ndarray) -> np.ndarray:
    stacked = np.stack([softmax(net.forward(x)) for net in nets])
    return stacked.mean(axis=0)


def ensemble_error(checkpoints: list[Checkpoint], ds: Dataset,
                   batch_size: int = 512) -> float:
    """Top-1 error (percent) of the averaged-softmax ensemble on a dataset."""
    nets = _ensemble_networks(checkpoints)
    wrong = 0
    for start in range(0, ds.n, batch_size):
        probs = _mean_probs(nets, ds.features[start:start + batch_size])
        wrong += int((~topk_hits(probs, ds.labels[start:start + batch_size], 1)).sum())
    return 100.0 * wrong / ds.n


def uniform_member_indices(available: int, size: int) -> list[int]:
    """Evenly spaced member positions over the available checkpoints, always
    anchored at the most recent one (size 1 picks exactly the last)."""
    if size < 1 or size > available:
        raise ConfigError(f"ensemble size {size} not in [1, {available}]")
    positions = np.linspace(available - 1, 0, size)
    return sorted({int(round(p)) for p in positions})
