"""JSON experiment configs: schema validation, default materialization, and
builders for the runtime objects.

Unknown keys are hard errors (a silently ignored typo can invalidate a whole
sweep), and every run's summary embeds the fully resolved config. Dataset
generation and label corruption both draw from the named `noise` seed, on
disjoint streams.
"""

from __future__ import annotations

import copy
import hashlib
import json

from .attacks import AttackConfig
from .data import (CIFAR10_MEAN, CIFAR10_STD, Dataset, NoiseSpec,
                   inject_symmetric_noise, load_cifar10, make_synthetic)
from .errors import ConfigError
from .labels import StrategySpec
from .models import ModelSpec
from .optim import SgdConfig
from .trainer import Seeds

_REQUIRED = object()

_ATTACK_SCHEMA = {
    "method": _REQUIRED,
    "step": None,        # default: bound for fgsm, bound/4 for pgd
    "bound": _REQUIRED,
    "iterations": 1,
    "random_start": True,
    "seed": 0,
    "value_range": None,
}

SCHEMA = {
    "model": {
        "arch": _REQUIRED,
        "widths": _REQUIRED,
        "input_shape": _REQUIRED,
        "classes": _REQUIRED,
    },
    "optimizer": {
        "learning_rate": 0.05,
        "momentum": 0.9,
        "weight_decay": 1e-4,
        "milestones": [],
        "decay_factor": 0.1,
    },
    "train": {
        "epochs": _REQUIRED,
        "batch_size": 128,
        "update_period": None,
        "checkpoint_every": None,
    },
    "strategy": {
        "kind": _REQUIRED,
        "smoothing": 0.1,
        "confidence": 0.95,
        "label_weight": 0.95,
        "hard_weight": 0.5,
    },
    "data": {
        "source": _REQUIRED,        # "synthetic" | "cifar10"
        "classes": _REQUIRED,
        "per_class_train": 500,
        "per_class_test": 100,
        "dim": 2,
        "layout": "ring",
        "ring_radius": 6.0,
        "noise_rate": 0.0,
        "cifar_dir": None,
        "channel_mean": list(CIFAR10_MEAN),
        "channel_std": list(CIFAR10_STD),
    },
    "seeds": {"init": 0, "shuffle": 1, "noise": 2},
    "eval": {
        "ece": False,
        "ece_bins": 15,
        "kl_reference": None,
        "attacks": [],
        "ensemble_sizes": [1, 6, 10],
    },
    "sweep": {
        "hard_weight": [],
        "update_period": [],
        "noise_rate": [],
        "seeds": [],
    },
}

_OPTIONAL_SECTIONS = ("optimizer", "seeds", "eval", "sweep")


def _resolve_section(name: str, raw: dict, schema: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(unknown)}")
    out = {}
    for key, default in schema.items():
        if key in raw:
            out[key] = raw[key]
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {name + '.' + key!r}")
        else:
            out[key] = copy.deepcopy(default)
    return out


def resolve_config(raw: dict) -> dict:
    """Validate a raw config dict and materialize every default."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    resolved = {}
    for section, schema in SCHEMA.items():
        if section not in raw and section in _OPTIONAL_SECTIONS:
            raw_section = {}
        elif section not in raw:
            raise ConfigError(f"missing required key {section!r}")
        else:
            raw_section = raw[section]
        resolved[section] = _resolve_section(section, raw_section, schema)
    resolved["eval"]["attacks"] = [
        _resolve_section(f"eval.attacks[{i}]", entry, _ATTACK_SCHEMA)
        for i, entry in enumerate(resolved["eval"]["attacks"])
    ]
    return resolved


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return resolve_config(raw)


def run_id(resolved: dict) -> str:
    """Short content hash of the resolved config, used as the run identity."""
    canonical = json.dumps(resolved, sort_keys=True).encode("utf-8")
    return hashlib.sha256(canonical).hexdigest()[:12]


def model_spec_from(resolved: dict) -> ModelSpec:
    m = resolved["model"]
    return ModelSpec(arch=m["arch"], widths=tuple(m["widths"]),
                     input_shape=tuple(m["input_shape"]), n_classes=int(m["classes"]))


def sgd_from(resolved: dict) -> SgdConfig:
    o = resolved["optimizer"]
    return SgdConfig(learning_rate=o["learning_rate"], momentum=o["momentum"],
                     weight_decay=o["weight_decay"], milestones=tuple(o["milestones"]),
                     decay_factor=o["decay_factor"])


def strategy_from(resolved: dict) -> StrategySpec:
    s = resolved["strategy"]
    return StrategySpec(kind=s["kind"], smoothing=s["smoothing"],
                        confidence=s["confidence"], label_weight=s["label_weight"],
                        hard_weight=s["hard_weight"])


def seeds_from(resolved: dict) -> Seeds:
    s = resolved["seeds"]
    return Seeds(init=int(s["init"]), shuffle=int(s["shuffle"]), noise=int(s["noise"]))


def datasets_from(resolved: dict) -> tuple[Dataset, Dataset]:
    d = resolved["data"]
    seeds = seeds_from(resolved)
    if d["source"] == "synthetic":
        train, test = make_synthetic(
            int(d["classes"]), int(d["per_class_train"]), int(d["dim"]),
            layout=d["layout"], ring_radius=d["ring_radius"],
            per_class_test=int(d["per_class_test"]), seed=seeds.noise,
        )
    elif d["source"] == "cifar10":
        if not d["cifar_dir"]:
            raise ConfigError("data.cifar_dir is required when data.source is 'cifar10'")
        train, test = load_cifar10(d["cifar_dir"], channel_mean=d["channel_mean"],
                                   channel_std=d["channel_std"])
    else:
        raise ConfigError(f"data.source must be 'synthetic' or 'cifar10', got {d['source']!r}")
    if int(d["classes"]) != train.n_classes:
        raise ConfigError(f"data.classes {d['classes']} != dataset classes {train.n_classes}")
    if d["noise_rate"]:
        train = inject_symmetric_noise(train, NoiseSpec(rate=d["noise_rate"], seed=seeds.noise))
    return train, test


def attack_configs_from(resolved: dict) -> list[AttackConfig]:
    out = []
    for entry in resolved["eval"]["attacks"]:
        vr = entry["value_range"]
        step = entry["step"]
        if step is None:
            step = entry["bound"] if entry["method"] == "fgsm" else entry["bound"] / 4.0
        out.append(AttackConfig(
            method=entry["method"], step=step, bound=entry["bound"],
            iterations=int(entry["iterations"]), random_start=bool(entry["random_start"]),
            seed=int(entry["seed"]), value_range=None if vr is None else tuple(vr),
        ))
    return out
