import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltcnf import data, ensemble, training
from ltcnf.errors import ContractError, ConfigError, ShapeError
from ltcnf.ensemble import (
    LogisticRegressionParams,
    LogRegConfig,
    coefficients_report,
    predict_logistic_regression,
    train_logistic_regression,
)


# ---------------------------------------------------------------- logistic regression


def test_logreg_separable_1d():
    x = np.array([[-1.0], [1.0]])
    y = np.array([0, 1])
    params = train_logistic_regression(x, y, LogRegConfig(epochs=500))
    pred = predict_logistic_regression(params, x).argmax(axis=1)
    assert np.array_equal(pred, y)
    assert params.weights[0] > 0


def test_logreg_constant_labels_predict_majority():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, 3))
    params = train_logistic_regression(x, np.ones(30), LogRegConfig(l2=1e-2))
    assert np.all(predict_logistic_regression(params, rng.normal(size=(10, 3))).argmax(axis=1) == 1)


def test_logreg_zero_epochs():
    params = train_logistic_regression(np.ones((3, 2)), np.array([0, 1, 1]), LogRegConfig(epochs=0))
    assert np.array_equal(params.weights, [0.0, 0.0]) and params.bias == 0.0
    np.testing.assert_array_equal(predict_logistic_regression(params, np.ones((3, 2))), 0.5)


def test_logreg_log3():
    params = LogisticRegressionParams(np.array([1.0]), 0.0)
    assert predict_logistic_regression(params, np.array([[math.log(3)]]))[0, 1] == pytest.approx(0.75, abs=1e-15)


def test_logreg_errors():
    with pytest.raises(ShapeError):
        train_logistic_regression(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ShapeError):
        train_logistic_regression(np.zeros((2, 2)), np.array([0, 2]))
    with pytest.raises(ShapeError):
        predict_logistic_regression(LogisticRegressionParams(np.zeros(2), 0.0), np.zeros((1, 3)))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_logreg_probabilities_open_interval(seed):
    rng = np.random.default_rng(seed)
    params = LogisticRegressionParams(rng.normal(scale=3, size=4), float(rng.normal()))
    p = predict_logistic_regression(params, rng.normal(scale=10, size=(20, 4)))
    assert np.all((p > 0) & (p < 1))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-15)


# ---------------------------------------------------------------- coefficients


def test_coefficients_sorted_by_magnitude():
    params = LogisticRegressionParams(np.array([0.1, -2.0, 0.5]), 0.0)
    rows = coefficients_report(params, ["f1", "f2", "f3"])
    assert [name for name, _ in rows] == ["f2", "f3", "f1"]
    assert rows[0][1] == -2.0


def test_coefficients_zero_weights_keep_order():
    rows = coefficients_report(LogisticRegressionParams(np.zeros(4), 0.0), list("abcd"))
    assert [name for name, _ in rows] == list("abcd")


def test_coefficients_length_mismatch():
    with pytest.raises(ShapeError):
        coefficients_report(LogisticRegressionParams(np.zeros(2), 0.0), ["a"])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12))
def test_coefficients_is_permutation(weights):
    names = [f"g{i}" for i in range(len(weights))]
    rows = coefficients_report(LogisticRegressionParams(np.array(weights), 0.0), names)
    assert sorted(n for n, _ in rows) == sorted(names)
    mags = [abs(w) for _, w in rows]
    assert mags == sorted(mags, reverse=True)


def test_informative_feature_ranks_first():
    rng = np.random.default_rng(4)
    y = rng.integers(0, 2, 400)
    x = rng.normal(size=(400, 6))
    x[:, 0] += 2.0 * (2 * y - 1)
    params = train_logistic_regression(x, y)
    assert coefficients_report(params, [f"g{i}" for i in range(6)])[0][0] == "g0"


# ---------------------------------------------------------------- stacking


@pytest.fixture(scope="module")
def prepared():
    table = data.synth_generate(data.SynthConfig(num_samples=300, num_features=6, class_separation=3.0, seed=8))
    return data.prepare(table, data.PreprocessConfig(seed=8))


def test_stacked_width_and_blocks(prepared):
    a = ensemble.LogRegBase().fit(prepared.train)
    b = ensemble.NetworkBase("ltc").fit(prepared.train, prepared.val, ensemble.NetConfig(units=4, unfold_steps=2),
                                        training.TrainConfig(epochs=2))
    stacked = ensemble.build_stacked_dataset([a, b], prepared.val.features, prepared.val.labels)
    assert stacked.meta_features.shape == (len(prepared.val), 4)
    for block in (stacked.meta_features[:, :2], stacked.meta_features[:, 2:]):
        np.testing.assert_allclose(block.sum(axis=1), 1.0, atol=1e-6)
    again = ensemble.build_stacked_dataset([a, b], prepared.val.features, prepared.val.labels)
    assert again.meta_features.tobytes() == stacked.meta_features.tobytes()


def test_single_base_meta_features_are_its_probabilities(prepared):
    a = ensemble.LogRegBase().fit(prepared.train)
    stacked = ensemble.build_stacked_dataset([a], prepared.test.features, prepared.test.labels)
    assert np.array_equal(stacked.meta_features, a.predict_proba(prepared.test.features))


def test_untrained_base_is_contract_error(prepared):
    with pytest.raises(ContractError):
        ensemble.build_stacked_dataset([ensemble.LogRegBase()], prepared.val.features, prepared.val.labels)
    with pytest.raises(ContractError):
        ensemble.build_stacked_dataset([ensemble.NetworkBase("ltc")], prepared.val.features, prepared.val.labels)
    with pytest.raises(ContractError):
        ensemble.build_stacked_dataset([], prepared.val.features, prepared.val.labels)


def test_combiner_config_validation():
    with pytest.raises(ConfigError):
        ensemble.CombinerConfig(bases=("ltc", "forest"))
    with pytest.raises(ConfigError):
        ensemble.CombinerConfig(bases=())


def test_pipeline_identical_bases_converge():
    table = data.synth_generate(data.SynthConfig(num_samples=300, num_features=6, class_separation=3.0, seed=8))
    result = ensemble.run_combiner_pipeline(table, ensemble.CombinerConfig(bases=("logreg", "logreg")))
    x = result.model.bases[0].predict_proba(np.ones((1, 1, 6)))
    y = result.model.bases[1].predict_proba(np.ones((1, 1, 6)))
    assert np.array_equal(x, y)
    assert result.meta_feature_width == 4
    assert np.all(np.isfinite(result.model.meta.weights))
    assert result.metrics.accuracy >= 0.8
    assert len(result.feature_coefficients) == 6
