"""Config-driven experiment runner.

Subcommands: train, eval, attack, ensemble, sweep. Exit codes: 0 success,
2 configuration/data errors, 3 training divergence, 1 anything else. Given
the same config and inputs, every artifact is reproduced byte-identically
(timing is kept out of artifacts for that reason).
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import config as cfgmod
from .errors import (CheckpointFormatError, ConfigError, DataFormatError,
                     DivergenceError)
from .evaluation import (ensemble_error, expected_calibration_error,
                         kl_to_reference, load_reference_distributions,
                         uniform_member_indices)
from .attacks import robust_error
from .models import load_checkpoint, network_from_checkpoint
from .trainer import TrainConfig, evaluate, fit, write_metrics_csv


def _write_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _final_metrics_dict(record) -> dict:
    return {
        "epoch": record.epoch,
        "train_error": record.train_error,
        "test_error": record.test_error,
        "test_top5_error": record.test_top5_error,
        "hard_loss": record.hard_loss,
        "soft_loss": record.soft_loss,
        "wrong_label_fit": record.wrong_label_fit,
    }


def _eval_extras(resolved, net, test_ds) -> dict:
    """ECE / KL fields for summaries, when the eval toggles ask for them."""
    extras = {}
    ev = resolved["eval"]
    if ev["ece"] or ev["kl_reference"]:
        result = evaluate(net, test_ds)
        if ev["ece"]:
            extras["ece"] = expected_calibration_error(
                result.probs, test_ds.labels, bins=int(ev["ece_bins"])
            )
        if ev["kl_reference"]:
            refs = load_reference_distributions(ev["kl_reference"], test_ds.n_classes)
            extras["kl_to_reference"] = kl_to_reference(result.probs, refs, test_ds.labels)
    return extras


def _run_training(resolved: dict, out_dir: str, dump_soft_labels: bool) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    train_ds, test_ds = cfgmod.datasets_from(resolved)
    tc = resolved["train"]
    cfg = TrainConfig(
        model=cfgmod.model_spec_from(resolved),
        optimizer=cfgmod.sgd_from(resolved),
        strategy=cfgmod.strategy_from(resolved),
        epochs=int(tc["epochs"]),
        batch_size=int(tc["batch_size"]),
        update_period=tc["update_period"],
        checkpoint_every=tc["checkpoint_every"],
        seeds=cfgmod.seeds_from(resolved),
        out_dir=out_dir,
        dump_soft_labels=dump_soft_labels,
    )
    result = fit(cfg, train_ds, test_ds)
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), result.metrics)
    summary = {
        "run_id": cfgmod.run_id(resolved),
        "config": resolved,
        "final": _final_metrics_dict(result.metrics[-1]),
        "checkpoints": [os.path.basename(p) for p in result.checkpoint_paths],
    }
    summary.update(_eval_extras(resolved, result.network, test_ds))
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


def _cmd_train(args) -> int:
    resolved = cfgmod.load_config(args.config)
    _run_training(resolved, args.out, args.dump_soft_labels)
    return 0


def _cmd_eval(args) -> int:
    resolved = cfgmod.load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    ckpt = load_checkpoint(args.checkpoint)
    net = network_from_checkpoint(ckpt)
    _, test_ds = cfgmod.datasets_from(resolved)
    result = evaluate(net, test_ds)
    summary = {
        "run_id": cfgmod.run_id(resolved),
        "config": resolved,
        "checkpoint": os.path.basename(args.checkpoint),
        "checkpoint_epoch": ckpt.epoch,
        "test_error": result.top1_error,
        "test_top5_error": result.top5_error,
    }
    summary.update(_eval_extras(resolved, net, test_ds))
    _write_json(os.path.join(args.out, "eval_summary.json"), summary)
    return 0


def _cmd_attack(args) -> int:
    resolved = cfgmod.load_config(args.config)
    attack_cfgs = cfgmod.attack_configs_from(resolved)
    if not attack_cfgs:
        raise ConfigError("eval.attacks is empty; nothing to run")
    os.makedirs(args.out, exist_ok=True)
    ckpt = load_checkpoint(args.checkpoint)
    net = network_from_checkpoint(ckpt)
    _, test_ds = cfgmod.datasets_from(resolved)
    clean = evaluate(net, test_ds).top1_error
    rows = []
    for atk in attack_cfgs:
        rows.append({
            "method": atk.method,
            "step": atk.step,
            "bound": atk.bound,
            "iterations": atk.iterations,
            "random_start": atk.random_start,
            "seed": atk.seed,
            "value_range": list(atk.value_range) if atk.value_range else None,
            "clean_error": clean,
            "attacked_error": robust_error(net, test_ds, atk),
        })
    _write_json(os.path.join(args.out, "attack_report.json"), {
        "run_id": cfgmod.run_id(resolved),
        "config": resolved,
        "checkpoint": os.path.basename(args.checkpoint),
        "attacks": rows,
    })
    return 0


def _cmd_ensemble(args) -> int:
    resolved = cfgmod.load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    paths = sorted(glob.glob(args.checkpoints))
    if not paths:
        raise ConfigError(f"no checkpoints match {args.checkpoints!r}")
    checkpoints = [load_checkpoint(p) for p in paths]
    _, test_ds = cfgmod.datasets_from(resolved)
    sizes = [int(s) for s in resolved["eval"]["ensemble_sizes"]]
    errors = {}
    for size in sizes:
        members = [checkpoints[i] for i in uniform_member_indices(len(checkpoints), size)]
        errors[str(size)] = ensemble_error(members, test_ds)
    _write_json(os.path.join(args.out, "ensemble_report.json"), {
        "run_id": cfgmod.run_id(resolved),
        "config": resolved,
        "checkpoints": [os.path.basename(p) for p in paths],
        "single_model_error": ensemble_error(checkpoints[-1:], test_ds),
        "ensemble_errors": errors,
    })
    return 0


def _sweep_combos(resolved: dict) -> list[dict]:
    axes = resolved["sweep"]
    if not any(axes[name] for name in ("hard_weight", "update_period", "noise_rate", "seeds")):
        raise ConfigError("sweep requires at least one non-empty sweep axis")

    def axis(name, fallback):
        return list(axes[name]) if axes[name] else [fallback]

    combos = []
    for hw in axis("hard_weight", resolved["strategy"]["hard_weight"]):
        for up in axis("update_period", resolved["train"]["update_period"]):
            for nr in axis("noise_rate", resolved["data"]["noise_rate"]):
                for seed in axis("seeds", None):
                    combos.append({"hard_weight": hw, "update_period": up,
                                   "noise_rate": nr, "seed": seed})
    return combos


def _combo_dir_name(combo: dict) -> str:
    parts = [f"hw{combo['hard_weight']}", f"up{combo['update_period']}",
             f"nr{combo['noise_rate']}", f"s{combo['seed']}"]
    return "run_" + "_".join(parts).replace("/", "-")


def _cmd_sweep(args) -> int:
    base = cfgmod.load_config(args.config)
    combos = _sweep_combos(base)
    os.makedirs(args.out, exist_ok=True)

    def one(combo):
        resolved = json.loads(json.dumps(base))  # deep copy, JSON-clean
        resolved["sweep"] = {k: [] for k in resolved["sweep"]}
        resolved["strategy"]["hard_weight"] = combo["hard_weight"]
        resolved["train"]["update_period"] = combo["update_period"]
        resolved["data"]["noise_rate"] = combo["noise_rate"]
        if combo["seed"] is not None:
            resolved["seeds"] = {k: int(combo["seed"]) for k in ("init", "shuffle", "noise")}
        run_dir = os.path.join(args.out, _combo_dir_name(combo))
        summary = _run_training(resolved, run_dir, args.dump_soft_labels)
        return combo, run_dir, summary

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(one, combos))
    else:
        results = [one(c) for c in combos]

    lines = ["hard_weight,update_period,noise_rate,seed,final_train_error,final_test_error,run_dir"]
    for combo, run_dir, summary in results:
        lines.append(",".join([
            str(combo["hard_weight"]), str(combo["update_period"]),
            str(combo["noise_rate"]), str(combo["seed"]),
            repr(float(summary["final"]["train_error"])),
            repr(float(summary["final"]["test_error"])),
            os.path.basename(run_dir),
        ]))
    with open(os.path.join(args.out, "sweep_summary.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="olslab",
                                     description="Label-smoothing training lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, checkpoints=False):
        p.add_argument("--config", required=True, help="path to a JSON experiment config")
        p.add_argument("--out", required=True, help="output directory for artifacts")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint file to load")
        if checkpoints:
            p.add_argument("--checkpoints", required=True,
                           help="glob matching the checkpoint files to ensemble")

    p = sub.add_parser("train", help="train a model and write metrics/summary/checkpoints")
    common(p)
    p.add_argument("--dump-soft-labels", action="store_true",
                   help="write the soft-label matrix to CSV after every epoch")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (errors, ECE, KL)")
    common(p, checkpoint=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("attack", help="run the configured adversarial attacks on a checkpoint")
    common(p, checkpoint=True)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("ensemble", help="evaluate uniform checkpoint ensembles")
    common(p, checkpoints=True)
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("sweep", help="run the configured sweep axes")
    common(p)
    p.add_argument("--dump-soft-labels", action="store_true")
    p.add_argument("--threads", type=int, default=1,
                   help="independent runs to execute in parallel")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, DataFormatError, CheckpointFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
