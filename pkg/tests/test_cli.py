import json
import subprocess
import sys

import numpy as np
import pytest

from olslab.cli import main
from olslab.config import load_config, resolve_config, run_id
from olslab.errors import ConfigError


def base_config(**overrides):
    cfg = {
        "model": {"arch": "mlp", "widths": [2, 16, 5], "input_shape": [2], "classes": 5},
        "optimizer": {"learning_rate": 0.02, "momentum": 0.9, "weight_decay": 0.0},
        "train": {"epochs": 2, "batch_size": 32},
        "strategy": {"kind": "ols", "hard_weight": 0.5},
        "data": {"source": "synthetic", "classes": 5, "per_class_train": 30,
                 "per_class_test": 10, "ring_radius": 6.0},
        "seeds": {"init": 1, "shuffle": 2, "noise": 3},
    }
    for section, keys in overrides.items():
        cfg.setdefault(section, {}).update(keys)
    return cfg


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


class TestConfigSchema:
    def test_missing_required_key_names_it(self):
        cfg = base_config()
        del cfg["strategy"]["kind"]
        with pytest.raises(ConfigError, match="strategy.kind"):
            resolve_config(cfg)

    def test_missing_section_names_it(self):
        cfg = base_config()
        del cfg["train"]
        with pytest.raises(ConfigError, match="train"):
            resolve_config(cfg)

    def test_unknown_key_listed(self):
        cfg = base_config()
        cfg["train"]["epoches"] = 3
        with pytest.raises(ConfigError, match="epoches"):
            resolve_config(cfg)

    def test_unknown_section_listed(self):
        cfg = base_config()
        cfg["training"] = {}
        with pytest.raises(ConfigError, match="training"):
            resolve_config(cfg)

    def test_defaults_materialized(self):
        resolved = resolve_config(base_config())
        assert resolved["train"]["update_period"] is None
        assert resolved["eval"]["ece_bins"] == 15
        assert resolved["optimizer"]["decay_factor"] == 0.1

    def test_run_id_stable_and_content_sensitive(self):
        a = resolve_config(base_config())
        b = resolve_config(base_config())
        assert run_id(a) == run_id(b)
        c = resolve_config(base_config(train={"epochs": 3}))
        assert run_id(a) != run_id(c)

    def test_invalid_json_is_config_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_attack_step_defaults(self):
        from olslab.config import attack_configs_from
        cfg = base_config(eval={"attacks": [
            {"method": "fgsm", "bound": 0.1},
            {"method": "pgd", "bound": 0.2, "iterations": 20},
        ]})
        fgsm, pgd = attack_configs_from(resolve_config(cfg))
        assert fgsm.step == 0.1           # fgsm: step == bound
        assert pgd.step == 0.05           # pgd: step == bound / 4


class TestTrainCommand:
    def test_exit_codes_for_bad_config(self, tmp_path):
        cfg = base_config()
        del cfg["model"]["arch"]
        code = main(["train", "--config", write_config(tmp_path, cfg),
                     "--out", str(tmp_path / "out")])
        assert code == 2

    def test_divergence_exit_code(self, tmp_path):
        cfg = base_config(optimizer={"learning_rate": 1e100})
        with np.errstate(over="ignore", invalid="ignore"):
            code = main(["train", "--config", write_config(tmp_path, cfg),
                         "--out", str(tmp_path / "out")])
        assert code == 3

    def test_identical_runs_byte_identical_metrics(self, tmp_path):
        cfg_path = write_config(tmp_path, base_config())
        assert main(["train", "--config", cfg_path, "--out", str(tmp_path / "a")]) == 0
        assert main(["train", "--config", cfg_path, "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a/metrics.csv").read_bytes() == \
               (tmp_path / "b/metrics.csv").read_bytes()

    def test_summary_embeds_resolved_config(self, tmp_path):
        cfg_path = write_config(tmp_path, base_config())
        main(["train", "--config", cfg_path, "--out", str(tmp_path / "out")])
        summary = json.loads((tmp_path / "out/summary.json").read_text())
        assert summary["config"]["eval"]["ece_bins"] == 15
        assert summary["run_id"] == run_id(load_config(cfg_path))
        assert "test_error" in summary["final"]

    def test_soft_label_dump(self, tmp_path):
        cfg_path = write_config(tmp_path, base_config())
        main(["train", "--config", cfg_path, "--out", str(tmp_path / "out"),
              "--dump-soft-labels"])
        dump = np.loadtxt(tmp_path / "out/soft_labels_epoch_2.csv", delimiter=",")
        assert dump.shape == (5, 5)
        assert np.abs(dump.sum(axis=0) - 1.0).max() < 1e-9

    def test_ece_flag_adds_field(self, tmp_path):
        cfg_path = write_config(tmp_path, base_config(eval={"ece": True}))
        main(["train", "--config", cfg_path, "--out", str(tmp_path / "out")])
        summary = json.loads((tmp_path / "out/summary.json").read_text())
        assert 0.0 <= summary["ece"] <= 100.0

    def test_kl_flag_produces_finite_value(self, tmp_path):
        refs = tmp_path / "refs.csv"
        refs.write_text("\n".join(",".join(["0.2"] * 5) for _ in range(50)) + "\n")
        cfg_path = write_config(tmp_path, base_config(eval={"kl_reference": str(refs)}))
        main(["train", "--config", cfg_path, "--out", str(tmp_path / "out")])
        summary = json.loads((tmp_path / "out/summary.json").read_text())
        assert summary["kl_to_reference"] >= 0.0
        assert np.isfinite(summary["kl_to_reference"])

    def test_module_entry_point(self, tmp_path):
        cfg_path = write_config(tmp_path, base_config())
        proc = subprocess.run(
            [sys.executable, "-m", "olslab", "train", "--config", cfg_path,
             "--out", str(tmp_path / "out")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "out/metrics.csv").exists()


class TestEvalAttackEnsemble:
    @pytest.fixture()
    def trained(self, tmp_path):
        cfg = base_config(train={"epochs": 3, "checkpoint_every": 1})
        cfg_path = write_config(tmp_path, cfg)
        out = tmp_path / "train"
        assert main(["train", "--config", cfg_path, "--out", str(out)]) == 0
        last = out / "checkpoints" / "epoch_0003.ckpt"
        return cfg, cfg_path, out, last

    def test_eval_subcommand(self, tmp_path, trained):
        cfg, cfg_path, out, last = trained
        eval_out = tmp_path / "eval"
        assert main(["eval", "--config", cfg_path, "--checkpoint", str(last),
                     "--out", str(eval_out)]) == 0
        summary = json.loads((eval_out / "eval_summary.json").read_text())
        train_summary = json.loads((out / "summary.json").read_text())
        assert summary["test_error"] == train_summary["final"]["test_error"]

    def test_attack_zero_step_reproduces_clean_error(self, tmp_path, trained):
        cfg, _, out, last = trained
        cfg["eval"] = {"attacks": [{"method": "fgsm", "step": 0.0, "bound": 0.0}]}
        cfg_path = write_config(tmp_path, cfg, "atk.json")
        atk_out = tmp_path / "atk"
        assert main(["attack", "--config", cfg_path, "--checkpoint", str(last),
                     "--out", str(atk_out)]) == 0
        report = json.loads((atk_out / "attack_report.json").read_text())
        entry = report["attacks"][0]
        assert entry["attacked_error"] == entry["clean_error"]

    def test_ensemble_single_model_equals_last_checkpoint(self, tmp_path, trained):
        cfg, _, out, last = trained
        cfg["eval"] = {"ensemble_sizes": [1, 3]}
        cfg_path = write_config(tmp_path, cfg, "ens.json")
        ens_out = tmp_path / "ens"
        glob_pat = str(out / "checkpoints" / "*.ckpt")
        assert main(["ensemble", "--config", cfg_path, "--checkpoints", glob_pat,
                     "--out", str(ens_out)]) == 0
        report = json.loads((ens_out / "ensemble_report.json").read_text())
        assert report["ensemble_errors"]["1"] == report["single_model_error"]
        assert "3" in report["ensemble_errors"]

    def test_ensemble_no_matches_is_error(self, tmp_path, trained):
        _, cfg_path, out, _ = trained
        code = main(["ensemble", "--config", cfg_path,
                     "--checkpoints", str(out / "nothing*.ckpt"),
                     "--out", str(tmp_path / "e")])
        assert code == 2


class TestSweep:
    def test_axes_produce_runs_and_combined_table(self, tmp_path):
        cfg = base_config()
        cfg["sweep"] = {"hard_weight": [0.5, 1.0], "seeds": [1, 2]}
        cfg_path = write_config(tmp_path, cfg)
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", cfg_path, "--out", str(out),
                     "--threads", "2"]) == 0
        table = (out / "sweep_summary.csv").read_text().strip().split("\n")
        assert len(table) == 5  # header + 4 combos
        run_dirs = [d for d in out.iterdir() if d.is_dir()]
        assert len(run_dirs) == 4
        for d in run_dirs:
            assert (d / "metrics.csv").exists()
            assert (d / "summary.json").exists()

    def test_empty_axes_rejected(self, tmp_path):
        cfg_path = write_config(tmp_path, base_config())
        code = main(["sweep", "--config", cfg_path, "--out", str(tmp_path / "s")])
        assert code == 2

    def test_hard_weight_sweep_emits_summary_per_value(self, tmp_path):
        cfg = base_config(train={"epochs": 1})
        cfg["sweep"] = {"hard_weight": [0.1, 0.5, 0.9]}
        cfg_path = write_config(tmp_path, cfg)
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", cfg_path, "--out", str(out)]) == 0
        summaries = sorted(out.glob("*/summary.json"))
        assert len(summaries) == 3
        hws = sorted(json.loads(p.read_text())["config"]["strategy"]["hard_weight"]
                     for p in summaries)
        assert hws == [0.1, 0.5, 0.9]
