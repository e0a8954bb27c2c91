import numpy as np
import pytest

from olslab.data import make_synthetic
from olslab.errors import ConfigError
from olslab.evaluation import (ensemble_error, ensemble_predict,
                               expected_calibration_error, kl_to_reference,
                               load_reference_distributions,
                               uniform_member_indices)
from olslab.models import ModelSpec, build_model, checkpoint_from
from olslab.nn import softmax

import oracles


def _dyadic_probs(rng, n, k):
    """Probability rows whose entries are exact multiples of 1/64, so any
    summation order produces bit-identical totals."""
    grid = rng.integers(1, 32, size=(n, k)).astype(np.float64)
    rows = []
    for row in grid:
        scaled = np.floor(row / row.sum() * 64.0)
        scaled[0] += 64.0 - scaled.sum()
        rows.append(scaled / 64.0)
    return np.asarray(rows)


class TestEce:
    def test_all_confident_and_correct(self):
        probs = np.eye(4)[np.array([0, 1, 2, 3])]
        assert expected_calibration_error(probs, np.array([0, 1, 2, 3])) == 0.0

    def test_all_confident_half_correct(self):
        probs = np.eye(2)[np.array([0, 0, 0, 0])]
        labels = np.array([0, 0, 1, 1])
        assert expected_calibration_error(probs, labels) == 50.0

    def test_hand_computed_two_bin_fixture(self):
        # bin (0, .5]: one correct sample at conf .5 -> gap .5, weight 1/4
        # bin (.5, 1]: three samples, acc 2/3, mean conf 2.05/3 -> gap .016667
        probs = np.array([
            [0.9, 0.1],
            [0.6, 0.4],
            [0.45, 0.55],
            [0.5, 0.5],
        ])
        labels = np.array([0, 1, 1, 0])
        got = expected_calibration_error(probs, labels, bins=2)
        assert abs(got - 13.75) < 1e-9

    def test_matches_oracle_exactly_on_dyadic_fixtures(self):
        rng = np.random.default_rng(0)
        for n in (16, 100, 1000):
            probs = _dyadic_probs(rng, n, 5)
            labels = rng.integers(0, 5, n)
            impl = expected_calibration_error(probs, labels, bins=15)
            ref = oracles.ece_binned(probs, labels, bins=15)
            assert impl == ref

    def test_matches_oracle_on_random_fixtures(self):
        rng = np.random.default_rng(1)
        for n in (10, 333, 1000):
            probs = rng.random((n, 7))
            probs /= probs.sum(axis=1, keepdims=True)
            labels = rng.integers(0, 7, n)
            impl = expected_calibration_error(probs, labels, bins=15)
            ref = oracles.ece_binned(probs, labels, bins=15)
            assert abs(impl - ref) < 1e-12

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            expected_calibration_error(np.zeros((0, 3)), np.zeros(0, dtype=int))


class TestKl:
    def test_identical_distributions_zero(self):
        rng = np.random.default_rng(0)
        probs = rng.random((6, 4))
        probs /= probs.sum(axis=1, keepdims=True)
        labels = probs.argmax(axis=1)
        assert kl_to_reference(probs, probs, labels) == 0.0

    def test_no_correct_samples_is_error(self):
        probs = np.array([[0.9, 0.1], [0.8, 0.2]])
        labels = np.array([1, 1])
        with pytest.raises(ValueError):
            kl_to_reference(probs, probs.copy(), labels, only_correct=True)

    def test_two_sample_fixture_direct_sum(self):
        probs = np.array([[0.7, 0.3], [0.4, 0.6]])
        refs = np.array([[0.5, 0.5], [0.9, 0.1]])
        labels = np.array([0, 1])  # both predicted correctly
        expected = np.mean([oracles.kl_direct(refs[i], probs[i]) for i in range(2)])
        got = kl_to_reference(probs, refs, labels, only_correct=True)
        assert abs(got - expected) < 1e-12

    def test_only_correct_filters(self):
        probs = np.array([[0.7, 0.3], [0.4, 0.6]])
        refs = np.array([[0.5, 0.5], [0.9, 0.1]])
        labels = np.array([0, 0])  # second sample mispredicted
        expected = oracles.kl_direct(refs[0], probs[0])
        assert abs(kl_to_reference(probs, refs, labels) - expected) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            kl_to_reference(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros(2, dtype=int))


class TestReferenceFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        refs = rng.random((5, 3))
        refs /= refs.sum(axis=1, keepdims=True)
        path = tmp_path / "refs.csv"
        with open(path, "w") as fh:
            for row in refs:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        loaded = load_reference_distributions(path, 3)
        assert np.array_equal(loaded, refs)

    def test_bad_row_sum(self, tmp_path):
        path = tmp_path / "refs.csv"
        path.write_text("0.5,0.6\n")
        with pytest.raises(ConfigError):
            load_reference_distributions(path, 2)


SPEC = ModelSpec("mlp", (2, 8, 3), (2,), 3)


def _ckpt(seed):
    return checkpoint_from(build_model(SPEC, seed), SPEC, epoch=seed)


class TestEnsemble:
    def test_single_checkpoint_equals_model(self):
        net = build_model(SPEC, 1)
        x = np.random.default_rng(0).standard_normal((4, 2))
        assert np.array_equal(ensemble_predict([_ckpt(1)], x),
                              softmax(net.forward(x)))

    def test_duplicated_members_identical(self):
        x = np.random.default_rng(0).standard_normal((4, 2))
        single = ensemble_predict([_ckpt(2)], x)
        assert np.array_equal(ensemble_predict([_ckpt(2)] * 2, x), single)
        assert np.array_equal(ensemble_predict([_ckpt(2)] * 4, x), single)

    def test_two_models_hand_average(self):
        x = np.random.default_rng(1).standard_normal((5, 2))
        pa = softmax(build_model(SPEC, 1).forward(x))
        pb = softmax(build_model(SPEC, 2).forward(x))
        got = ensemble_predict([_ckpt(1), _ckpt(2)], x)
        assert np.abs(got - (pa + pb) / 2).max() < 1e-15

    def test_output_on_simplex(self):
        x = np.random.default_rng(2).standard_normal((6, 2))
        probs = ensemble_predict([_ckpt(s) for s in range(4)], x)
        assert (probs >= 0).all()
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9

    def test_mixed_specs_rejected(self):
        other = ModelSpec("mlp", (2, 4, 3), (2,), 3)
        bad = checkpoint_from(build_model(other, 0), other, 0)
        with pytest.raises(ConfigError):
            ensemble_predict([_ckpt(0), bad], np.zeros((1, 2)))

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            ensemble_predict([], np.zeros((1, 2)))

    def test_ensemble_error_counts(self):
        _, test = make_synthetic(3, 10, 2, per_class_test=10, seed=0)
        err = ensemble_error([_ckpt(0), _ckpt(1)], test)
        assert 0.0 <= err <= 100.0


class TestUniformMemberSelection:
    def test_size_one_picks_latest(self):
        assert uniform_member_indices(10, 1) == [9]

    def test_full_size_picks_all(self):
        assert uniform_member_indices(4, 4) == [0, 1, 2, 3]

    def test_spread(self):
        picked = uniform_member_indices(10, 6)
        assert len(picked) == 6
        assert picked[-1] == 9 and picked[0] == 0

    def test_invalid_sizes(self):
        with pytest.raises(ConfigError):
            uniform_member_indices(3, 4)
        with pytest.raises(ConfigError):
            uniform_member_indices(3, 0)
