import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepboots.data import (
    DataError,
    SeriesDataset,
    all_windows,
    chronological_split,
    instance_denormalize,
    instance_normalize,
    iter_batches,
    load_csv,
    make_windows,
    standardize_splits,
    window_count,
)

from conftest import write_series


def _ds(T, D=2):
    return SeriesDataset(np.arange(T * D, dtype=float).reshape(T, D), tuple(f"f{i}" for i in range(D)))


def test_load_csv_shape(tmp_path):
    vals = np.arange(21, dtype=float).reshape(3, 7)
    ds = load_csv(write_series(tmp_path / "a.csv", vals))
    assert (ds.length, ds.n_features) == (3, 7)
    assert ds.feature_names == tuple(f"f{i}" for i in range(7))
    np.testing.assert_array_equal(ds.values, vals)


def test_load_csv_without_date(tmp_path):
    ds = load_csv(write_series(tmp_path / "a.csv", np.ones((4, 2)), date=False))
    assert ds.values.shape == (4, 2)


def test_load_csv_drops_missing_rows(tmp_path, caplog):
    p = tmp_path / "m.csv"
    p.write_text("date,a,b\n1,1.0,2.0\n2,,3.0\n3,NaN,1\n4,4.0,5.0\n")
    with caplog.at_level(logging.WARNING):
        ds = load_csv(p)
    assert ds.length == 2 and ds.dropped_rows == 2
    assert "dropped 2" in caplog.text


def test_load_csv_one_nan_row(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("date,a\n1,1\n2,nan\n3,3\n")
    ds = load_csv(p)
    assert ds.length == 2 and ds.dropped_rows == 1


def test_load_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("date,a,b\n1,1.0,x\n")
    with pytest.raises(DataError, match=r"row 2, column 'b'"):
        load_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataError, match="empty"):
        load_csv(empty)


def test_fingerprint_tracks_content():
    a, b = _ds(10), _ds(10)
    assert a.fingerprint() == b.fingerprint()
    c = SeriesDataset(a.values + 1e-12, a.feature_names)
    assert a.fingerprint() != c.fingerprint()


def test_split_lengths():
    assert [p.length for p in chronological_split(_ds(100))] == [60, 20, 20]
    assert [p.length for p in chronological_split(_ds(10), (0.5, 0.25, 0.25))] == [5, 2, 3]


def test_split_errors():
    with pytest.raises(DataError, match="sum to 1"):
        chronological_split(_ds(100), (0.5, 0.2, 0.2))
    with pytest.raises(DataError, match="val segment"):
        chronological_split(_ds(20), (0.6, 0.2, 0.2), min_length=5)


def test_split_is_chronological():
    tr, va, te = chronological_split(_ds(50))
    assert tr.values[-1, 0] < va.values[0, 0] and va.values[-1, 0] < te.values[0, 0]
    np.testing.assert_array_equal(np.concatenate([tr.values, va.values, te.values]), _ds(50).values)


def test_window_counts():
    assert len(all_windows(_ds(100), 96, 4)) == 1
    assert len(all_windows(_ds(200), 96, 96)) == 9
    assert window_count(200, 96, 96, stride=2) == 5
    with pytest.raises(DataError):
        all_windows(_ds(10), 8, 4)


def test_window_adjacency_and_losslessness():
    ds = _ds(40, 3)
    w = all_windows(ds, 7, 5)
    for k in (0, 13, len(w) - 1):
        np.testing.assert_array_equal(w.inputs[k], ds.values[k : k + 7])
        np.testing.assert_array_equal(w.targets[k], ds.values[k + 7 : k + 12])
        np.testing.assert_array_equal(np.concatenate([w.inputs[k], w.targets[k]]), ds.values[k : k + 12])


def test_batches_and_shuffling():
    w = all_windows(_ds(60), 5, 3)
    sizes = [len(b) for b in iter_batches(w, 16)]
    assert sum(sizes) == len(w) and max(sizes) == 16
    a = np.concatenate([b.start for b in iter_batches(w, 16, shuffle=True, seed=7)])
    b = np.concatenate([b.start for b in iter_batches(w, 16, shuffle=True, seed=7)])
    np.testing.assert_array_equal(a, b)
    assert sorted(a) == list(w.start)
    assert len(list(make_windows(_ds(60), 5, 3, batch_size=10))) == 6


def test_normalize_examples():
    z, st_ = instance_normalize(np.full((1, 3, 1), 5.0))
    np.testing.assert_array_equal(z, 0.0)
    assert st_.mean[0, 0] == 5.0 and st_.std[0, 0] == 1e-5
    z, _ = instance_normalize(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1))
    np.testing.assert_allclose(z.ravel(), [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)


def test_denormalize_examples():
    _, s = instance_normalize(np.random.default_rng(0).normal(size=(2, 6, 3)))
    np.testing.assert_array_equal(instance_denormalize(np.zeros((2, 4, 3)), s), np.broadcast_to(s.mean[:, None], (2, 4, 3)))
    from deepboots.data import NormStats

    out = instance_denormalize(np.ones((1, 2, 1)), NormStats(np.array([[3.0]]), np.array([[2.0]])))
    np.testing.assert_array_equal(out, 5.0)
    with pytest.raises(DataError):
        instance_denormalize(np.ones((3, 2, 3)), s)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 7, 2), elements=st.floats(-1e6, 1e6)))
def test_normalize_round_trip(x):
    z, s = instance_normalize(x)
    assert np.all(s.std >= 1e-5)
    np.testing.assert_allclose(instance_denormalize(z, s), x, atol=1e-9, rtol=0)


def test_standardize_uses_train_statistics():
    tr, va, te = chronological_split(_ds(100))
    (str_, sva, ste), mean, std = standardize_splits(tr, va, te)
    np.testing.assert_allclose(str_.values.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(str_.values.std(axis=0), 1.0)
    np.testing.assert_allclose(sva.values, (va.values - mean) / std)
