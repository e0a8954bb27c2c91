import numpy as np
import pytest

from olslab import nn
from olslab.attacks import (AttackConfig, attack_inputs, fgsm_attack,
                            pgd_attack, robust_error)
from olslab.data import make_synthetic
from olslab.errors import ConfigError
from olslab.labels import StrategySpec
from olslab.models import ModelSpec, build_model
from olslab.nn import Linear, Network
from olslab.optim import SgdConfig
from olslab.trainer import Seeds, TrainConfig, evaluate, fit, topk_hits


def trained_toy(seed=0):
    train, test = make_synthetic(3, 30, 2, ring_radius=5.0, per_class_test=30, seed=seed)
    cfg = TrainConfig(model=ModelSpec("mlp", (2, 16, 3), (2,), 3),
                      optimizer=SgdConfig(learning_rate=0.05, momentum=0.9),
                      strategy=StrategySpec("hard"), epochs=10, batch_size=16,
                      seeds=Seeds(seed, seed, seed))
    return fit(cfg, train, test).network, test


class TestAttackConfig:
    def test_fgsm_requires_step_equal_bound(self):
        with pytest.raises(ConfigError):
            AttackConfig(method="fgsm", step=0.1, bound=0.2)
        with pytest.raises(ConfigError):
            AttackConfig(method="fgsm", step=0.1, bound=0.1, iterations=3)

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            AttackConfig(method="cw", step=0.1, bound=0.1)


class TestFgsm:
    def test_zero_step_is_identity(self):
        net, test = trained_toy()
        cfg = AttackConfig(method="fgsm", step=0.0, bound=0.0)
        adv = fgsm_attack(net, test.features, test.labels, cfg)
        assert np.array_equal(adv, test.features)

    def test_perturbation_in_sign_set(self):
        net, test = trained_toy()
        cfg = AttackConfig(method="fgsm", step=0.1, bound=0.1)
        adv = fgsm_attack(net, test.features, test.labels, cfg)
        delta = np.abs(adv - test.features)
        # each coordinate moves by 0 or +/- step (up to the rounding of x+step),
        # and the measured norm never exceeds the step
        assert (np.minimum(delta, np.abs(delta - 0.1)) < 1e-12).all()
        assert delta.max() <= 0.1

    def test_single_linear_closed_form(self):
        rng = np.random.default_rng(3)
        net = Network([Linear(2, 3, name="fc", rng=rng)])
        x = rng.standard_normal((5, 2))
        y = rng.integers(0, 3, 5)
        probs = nn.softmax(net.forward(x))
        grad = (probs - nn.one_hot(y, 3)) @ net.layers[0].weight.value.T
        expected = x + 0.05 * np.sign(grad)
        cfg = AttackConfig(method="fgsm", step=0.05, bound=0.05)
        adv = fgsm_attack(net, x, y, cfg)
        # the attack may nudge a coordinate one ulp to keep the measured norm
        # within the step, so compare up to that correction
        assert np.abs(adv - expected).max() < 1e-12
        assert np.abs(adv - x).max() <= 0.05

    def test_value_range_clipped(self):
        # in-range inputs (pixel-style): both the range and the norm bound hold
        net, test = trained_toy()
        rng = np.random.default_rng(0)
        x = rng.uniform(0.0, 1.0, size=test.features.shape)
        cfg = AttackConfig(method="fgsm", step=0.3, bound=0.3, value_range=(0.0, 1.0))
        adv = fgsm_attack(net, x, test.labels, cfg)
        assert adv.min() >= 0.0 and adv.max() <= 1.0
        assert np.abs(adv - x).max() <= 0.3


class TestPgd:
    def test_one_iteration_without_random_start_equals_fgsm(self):
        net, test = trained_toy()
        fgsm_cfg = AttackConfig(method="fgsm", step=0.1, bound=0.1)
        pgd_cfg = AttackConfig(method="pgd", step=0.1, bound=0.1, iterations=1,
                               random_start=False)
        a = fgsm_attack(net, test.features, test.labels, fgsm_cfg)
        b = pgd_attack(net, test.features, test.labels, pgd_cfg)
        assert np.array_equal(a, b)

    def test_iterates_stay_in_ball(self):
        for seed in range(3):
            net, test = trained_toy(seed)
            cfg = AttackConfig(method="pgd", step=0.07, bound=0.2, iterations=8,
                               seed=seed)
            adv = pgd_attack(net, test.features, test.labels, cfg)
            assert np.abs(adv - test.features).max() <= 0.2

    def test_seeded_random_start_deterministic(self):
        net, test = trained_toy()
        cfg = AttackConfig(method="pgd", step=0.05, bound=0.1, iterations=4, seed=9)
        a = pgd_attack(net, test.features, test.labels, cfg)
        b = pgd_attack(net, test.features, test.labels, cfg)
        assert np.array_equal(a, b)

    def test_attack_does_not_help_accuracy(self):
        for seed in range(3):
            net, test = trained_toy(seed)
            clean = evaluate(net, test).top1_error
            cfg = AttackConfig(method="pgd", step=0.1, bound=0.3, iterations=10,
                               seed=seed)
            assert robust_error(net, test, cfg) >= clean


class TestRobustError:
    def test_zero_step_equals_clean_error(self):
        net, test = trained_toy()
        cfg = AttackConfig(method="fgsm", step=0.0, bound=0.0)
        assert robust_error(net, test, cfg) == evaluate(net, test).top1_error

    def test_monotone_spot_check(self):
        net, test = trained_toy()
        weak = AttackConfig(method="fgsm", step=0.0, bound=0.0)
        strong = AttackConfig(method="fgsm", step=0.1, bound=0.1)
        assert robust_error(net, test, strong) >= robust_error(net, test, weak)

    def test_consistent_with_per_sample_recomputation(self):
        net, test = trained_toy()
        cfg = AttackConfig(method="fgsm", step=0.1, bound=0.1)
        reported = robust_error(net, test, cfg)
        adv = attack_inputs(net, test.features, test.labels, cfg)
        probs = nn.softmax(net.forward(adv))
        recomputed = 100.0 * int((~topk_hits(probs, test.labels, 1)).sum()) / test.n
        assert reported == recomputed
