import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advae.data import (
    BENCHMARKS,
    DataError,
    Dataset,
    Scaler,
    SplitSpec,
    apply_scaler,
    find_benchmark,
    load_csv,
    load_dataset,
    load_from_manifest,
    read_manifest,
    save_csv,
    split,
)


def _shaped(name, seed=0):
    rows, d, anoms = BENCHMARKS[name]
    r = np.random.default_rng(seed)
    labels = np.r_[np.zeros(rows - anoms), np.ones(anoms)]
    return Dataset(name, r.random((rows, d)), r.permutation(labels))


def test_load_headerless_and_headered(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2,0\n3,4,1\n5,6,0\n")
    ds = load_csv(p)
    assert ds.features.tolist() == [[1, 2], [3, 4], [5, 6]]
    assert ds.labels.tolist() == [0, 1, 0]
    assert ds.name == "a"
    p.write_text("y,a,b\n0,1,2\n1,3,4\n")
    ds = load_csv(p, label_column="y")
    assert ds.features.tolist() == [[1, 2], [3, 4]] and ds.labels.tolist() == [0, 1]
    assert load_csv(p, label_column=0).labels.tolist() == [0, 1]


def test_load_errors(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(DataError, match="empty"):
        load_csv(p)
    p.write_text("1,2,0\n3,x,1\n")
    with pytest.raises(DataError, match=":2:"):
        load_csv(p)
    p.write_text("1,2,0\n3,1\n")
    with pytest.raises(DataError, match="expected 3 fields"):
        load_csv(p)
    p.write_text("1,2,0\n3,4,2\n")
    with pytest.raises(DataError, match="label must be 0 or 1"):
        load_csv(p)
    p.write_text("a,b,y\n1,2,0\n")
    with pytest.raises(DataError, match="not found"):
        load_csv(p, label_column="label")
    p.write_text("1,nan,0\n")
    with pytest.raises(DataError, match="non-finite"):
        load_csv(p)


def test_round_trip_and_benchmark_shape(tmp_path):
    ds = _shaped("pen")
    p = tmp_path / "pen.csv"
    save_csv(ds, p)
    back = load_dataset(p)
    assert (back.n_rows, back.n_features, back.n_anomalies) == (6870, 16, 156)
    assert np.array_equal(back.features, ds.features)
    assert find_benchmark("pen", tmp_path) == str(p)
    assert find_benchmark("letter", tmp_path) is None


def test_manifest_validation(tmp_path):
    ds = _shaped("letter")
    save_csv(ds, tmp_path / "letter.csv")
    m = tmp_path / "manifest.csv"
    m.write_text("name,path,label_column,expected_rows,expected_dims\nletter,letter.csv,label,1600,32\nbad,letter.csv,label,1601,32\n")
    entries = read_manifest(m)
    ok = load_from_manifest(entries["letter"])
    assert (ok.n_rows, ok.n_features, ok.n_anomalies) == (1600, 32, 100)
    with pytest.raises(DataError, match="expected 1601 rows"):
        load_from_manifest(entries["bad"])


def test_letter_split_arithmetic():
    sp = split(_shaped("letter"), SplitSpec(seed=0))
    assert sp.train.n_rows == 1200 and sp.train.n_anomalies == 0
    assert sp.test.n_rows == 400 and sp.test.n_anomalies == 100
    assert len(np.intersect1d(sp.train_index, sp.test_index)) == 0


def test_split_deterministic_by_seed():
    ds = _shaped("cardio")
    a, b = split(ds, SplitSpec(seed=3)), split(ds, SplitSpec(seed=3))
    assert np.array_equal(a.train_index, b.train_index) and np.array_equal(a.test_index, b.test_index)
    c = split(ds, SplitSpec(seed=4))
    assert not np.array_equal(a.train_index, c.train_index)


def test_unpacks_as_triple():
    train, test, scaler = split(_shaped("letter"), SplitSpec())
    assert isinstance(scaler, Scaler) and train.n_rows == 1200


def test_scaler_extremes_and_constant_feature():
    x = np.random.default_rng(0).normal(size=(50, 3))
    x[:, 1] = 7.0
    s = Scaler.fit(x)
    y = apply_scaler(s, x)
    assert np.all(y[:, 1] == 0.5)
    for j in (0, 2):
        assert y[:, j].min() == 0.0 and y[:, j].max() == 1.0
        assert y[np.argmin(x[:, j]), j] == 0.0 and y[np.argmax(x[:, j]), j] == 1.0


def test_scaler_clips_test_values(caplog):
    s = Scaler(np.zeros(2), np.ones(2))
    with caplog.at_level("INFO"):
        y = apply_scaler(s, np.array([[-3.0, 0.5], [0.2, 9.0]]))
    assert y.tolist() == [[-0.05, 0.5], [0.2, 1.05]]
    assert "clipped 2" in caplog.text
    with pytest.raises(DataError):
        apply_scaler(s, np.zeros((2, 3)))


@given(st.integers(0, 10**6), st.floats(0.0, 0.2))
@settings(max_examples=30, deadline=None)
def test_contamination_counts(seed, ratio):
    ds = _shaped("cardio", seed % 7)
    sp = split(ds, SplitSpec(seed=seed, contamination_ratio=ratio))
    n_train_normal = int(np.floor(0.8 * (ds.n_rows - ds.n_anomalies)))
    expected = int(round(ratio / (1 - ratio) * n_train_normal))
    assert sp.train.n_anomalies == expected
    assert sp.train.n_rows - sp.train.n_anomalies == n_train_normal
    # contamination rows never appear in the test side
    assert len(np.intersect1d(sp.train_index, sp.test_index)) == 0


def test_reserved_pool_keeps_test_side_fixed():
    ds = _shaped("pen")
    sides = [split(ds, SplitSpec(seed=1, contamination_ratio=r, reserve_pool=True)).test_index
             for r in (0.0, 0.01, 0.03, 0.05)]
    assert all(np.array_equal(sides[0], s) for s in sides[1:])
    sp = split(ds, SplitSpec(seed=1, contamination_ratio=0.05, reserve_pool=True))
    # 5% of 5371 normal rows needs 283 anomalies; the 78-row pool is reused with replacement
    assert sp.train.n_anomalies == round(0.05 / 0.95 * 5371)
    assert len(np.unique(sp.train_index[sp.train.labels == 1])) == 78


def test_zero_contamination_has_no_anomalies():
    sp = split(_shaped("optical"), SplitSpec(contamination_ratio=0.0))
    assert sp.train.n_anomalies == 0


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(train_fraction=1.5)
    with pytest.raises(ValueError):
        SplitSpec(contamination_ratio=1.0)
    with pytest.raises(DataError):
        split(Dataset("tiny", np.zeros((5, 2)), np.zeros(5)), SplitSpec())
