import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltcnf import data
from ltcnf.errors import ConfigError, DataError, ParseError


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


# ---------------------------------------------------------------- CSV


def test_load_basic(tmp_path):
    path = write(tmp_path, "g1,g2,CANCER_TYPE\n1,2,NF1\n3,4,Glioma\n5,6,NF1\n")
    table = data.load_csv(path)
    assert table.columns == ["g1", "g2"]
    assert table.values.shape == (3, 2)
    assert table.labels == ["NF1", "Glioma", "NF1"]


def test_load_missing_markers(tmp_path):
    path = write(tmp_path, "g1,g2,CANCER_TYPE\n1,2,a\n,4,b\nNA,nan,c\n7,NaN,d\n")
    table = data.load_csv(path)
    assert math.isnan(table.values[1, 0]) and table.values[1, 1] == 4.0
    assert np.isnan(table.values[2]).all()
    assert math.isnan(table.values[3, 1])


def test_load_ragged_row_names_line(tmp_path):
    path = write(tmp_path, "g1,g2,CANCER_TYPE\n1,2,a\n1,2,3,b\n")
    with pytest.raises(ParseError, match="line 3"):
        data.load_csv(path)


def test_load_missing_label_column(tmp_path):
    path = write(tmp_path, "g1,g2,TYPE\n1,2,a\n")
    with pytest.raises(ConfigError, match="CANCER_TYPE"):
        data.load_csv(path)
    assert data.load_csv(path, label_column="TYPE").labels == ["a"]


def test_load_non_numeric_cell(tmp_path):
    path = write(tmp_path, "g1,CANCER_TYPE\nabc,a\n")
    with pytest.raises(ParseError, match="line 2"):
        data.load_csv(path)


def test_csv_roundtrip(tmp_path):
    table = data.synth_generate(data.SynthConfig(num_samples=20, num_features=3, missing_fraction=0.2, seed=1))
    path = tmp_path / "s.csv"
    data.write_csv(table, path)
    back = data.load_csv(path)
    np.testing.assert_array_equal(np.isnan(back.values), np.isnan(table.values))
    np.testing.assert_array_equal(np.nan_to_num(back.values), np.nan_to_num(table.values))
    assert back.labels == table.labels


# ---------------------------------------------------------------- imputation


def test_impute_identity_without_missing():
    t = data.RawTable(["a", "b"], np.array([[1.0, 2.0], [3.0, 4.0]]), ["x", "y"])
    assert np.array_equal(data.impute_nan_zero(t).values, t.values)


def test_impute_single_cell():
    t = data.RawTable(["a", "b"], np.array([[1.0, np.nan], [3.0, 4.0]]), ["x", "y"])
    np.testing.assert_array_equal(data.impute_nan_zero(t).values, [[1.0, 0.0], [3.0, 4.0]])


def test_impute_all_missing_column():
    t = data.RawTable(["a", "b"], np.array([[np.nan, 1.0], [np.nan, 2.0]]), ["x", "y"])
    np.testing.assert_array_equal(data.impute_nan_zero(t).values[:, 0], [0.0, 0.0])


# ---------------------------------------------------------------- z-score


def test_zscore_hand_values():
    stats = data.zscore_fit(np.array([[1.0], [2.0], [3.0]]))
    assert stats.mean[0] == pytest.approx(2.0)
    assert stats.std[0] == pytest.approx(math.sqrt(2 / 3))
    assert stats.std[0] == pytest.approx(0.816497, abs=1e-6)
    out = data.zscore_apply(np.array([[1.0], [2.0], [3.0]]), stats)
    np.testing.assert_allclose(out[:, 0], [-1.224745, 0.0, 1.224745], atol=1e-6)


def test_zscore_apply_outside_value():
    stats = data.zscore_fit(np.array([[1.0], [2.0], [3.0]]))
    assert data.zscore_apply(np.array([[4.0]]), stats)[0, 0] == pytest.approx(2.449490, abs=1e-6)


def test_zscore_constant_column_maps_to_zero():
    x = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]])
    out = data.zscore_apply(x, data.zscore_fit(x))
    np.testing.assert_array_equal(out[:, 0], 0.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), rows=st.integers(2, 50), cols=st.integers(1, 6))
def test_zscore_self_fit_moments(seed, rows, cols):
    rng = np.random.default_rng(seed)
    x = rng.normal(loc=rng.uniform(-100, 100, cols), scale=rng.uniform(0.1, 10, cols), size=(rows, cols))
    out = data.zscore_apply(x, data.zscore_fit(x))
    assert np.all(np.abs(out.mean(axis=0)) <= 1e-9)
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-9)


# ---------------------------------------------------------------- labels


def test_binarize_labels():
    np.testing.assert_array_equal(data.binarize_labels(["NF1", "Glioma", "", "nf1", "NF1 "]), [1, 0, 0, 0, 0])
    np.testing.assert_array_equal(data.binarize_labels(["X", "NF1"], positive_token="X"), [1, 0])


def test_one_hot():
    np.testing.assert_array_equal(data.one_hot([1], 2), [[0, 1]])
    np.testing.assert_array_equal(data.one_hot([0], 2), [[1, 0]])
    v = np.array([0, 1, 2, 1, 0])
    np.testing.assert_array_equal(data.one_hot(v, 3).argmax(axis=1), v)
    with pytest.raises(DataError):
        data.one_hot([2], 2)


# ---------------------------------------------------------------- reshape


def test_reshape_full_feature_width():
    assert data.reshape_sequences(np.zeros((4, 973)), 1).shape == (4, 1, 973)
    with pytest.raises(ConfigError, match="973"):
        data.reshape_sequences(np.zeros((4, 973)), 2)


def test_reshape_chunk_order():
    x = np.arange(12.0).reshape(2, 6)
    out = data.reshape_sequences(x, 3)
    assert out.shape == (2, 3, 2)
    np.testing.assert_array_equal(out[0], [[0, 1], [2, 3], [4, 5]])


# ---------------------------------------------------------------- split


def test_split_small_sizes():
    s = data.split_dataset(10, (0.64, 0.16, 0.20), seed=0)
    assert (len(s.train), len(s.val), len(s.test)) == (6, 2, 2)


def test_split_large_cohort_sizes():
    s = data.split_dataset(71_572, (0.8, 0.0, 0.2), seed=0)
    assert (len(s.train), len(s.val), len(s.test)) == (57_257, 0, 14_315)


def test_split_deterministic_and_seed_sensitive():
    a = data.split_dataset(100, seed=3)
    b = data.split_dataset(100, seed=3)
    c = data.split_dataset(100, seed=4)
    assert a.train.tolist() == b.train.tolist() and a.test.tolist() == b.test.tolist()
    assert a.test.tolist() != c.test.tolist()


@settings(max_examples=100, deadline=None)
@given(n=st.integers(10, 500), seed=st.integers(0, 1000))
def test_split_partitions(n, seed):
    s = data.split_dataset(n, (0.64, 0.16, 0.20), seed)
    combined = np.concatenate([s.train, s.val, s.test])
    assert sorted(combined.tolist()) == list(range(n))
    assert abs(len(s.test) - n * 0.2) <= 1 and abs(len(s.val) - n * 0.16) <= 1


def test_split_errors():
    with pytest.raises(ConfigError):
        data.split_dataset(10, (0.5, 0.2, 0.2))
    with pytest.raises(ConfigError):
        data.split_dataset(2, (0.64, 0.16, 0.20))


# ---------------------------------------------------------------- synthetic


def test_synth_deterministic():
    cfg = data.SynthConfig(num_samples=50, num_features=4, seed=9)
    a, b = data.synth_generate(cfg), data.synth_generate(cfg)
    assert data.table_to_csv(a) == data.table_to_csv(b)


def test_synth_class_mean_distance():
    table = data.synth_generate(data.SynthConfig(2000, 32, 2.0, 0.5, 0.0, 42))
    y = data.binarize_labels(table.labels)
    diff = table.values[y == 1].mean(axis=0) - table.values[y == 0].mean(axis=0)
    assert abs(np.linalg.norm(diff) - 2.0) <= 0.2
    assert y.sum() == 1000


def test_synth_zero_separation_is_indistinguishable():
    table = data.synth_generate(data.SynthConfig(4000, 4, 0.0, 0.5, 0.0, 1))
    y = data.binarize_labels(table.labels)
    diff = table.values[y == 1].mean(axis=0) - table.values[y == 0].mean(axis=0)
    # standard error of each mean difference is sqrt(2/2000) ~ 0.032
    assert np.all(np.abs(diff) < 0.15)


def test_synth_missing_fraction():
    table = data.synth_generate(data.SynthConfig(1000, 20, seed=3))
    frac = np.isnan(table.values).mean()
    assert 0.005 < frac < 0.015


# ---------------------------------------------------------------- pipeline


def test_prepare_pipeline_and_repeatability():
    table = data.synth_generate(data.SynthConfig(200, 6, seed=2))
    a = data.prepare(table, data.PreprocessConfig(timesteps=3, seed=7))
    b = data.prepare(table, data.PreprocessConfig(timesteps=3, seed=7))
    assert a.train.features.shape == (128, 3, 2)
    for part in ("train", "val", "test"):
        assert getattr(a, part).features.tobytes() == getattr(b, part).features.tobytes()
        np.testing.assert_array_equal(getattr(a, part).labels_onehot.sum(axis=1), 1.0)
    assert not np.isnan(a.train.features).any()
    flat = a.train.features.reshape(len(a.train), -1)
    np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-9)


def test_prepare_fit_on_all():
    table = data.synth_generate(data.SynthConfig(200, 6, seed=2))
    p = data.prepare(table, data.PreprocessConfig(fit_on="all"))
    all_rows = data.impute_nan_zero(table).values
    np.testing.assert_allclose(p.stats.mean, all_rows.mean(axis=0))
