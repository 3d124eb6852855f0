import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccr_mpc import dataio
from ccr_mpc.dataio import DataError, Dataset, DimensionError


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- load_csv ---------------------------------------------------------------


def test_load_three_rows(tmp_path):
    p = _write(tmp_path, "a,b,t\n1,2,3\n4,5,6\n7,8,9\n")
    ds = dataio.load_csv(p, "t")
    assert (ds.n, ds.d) == (3, 2)
    assert ds.feature_names == ("a", "b")
    np.testing.assert_array_equal(ds.targets, [3, 6, 9])
    np.testing.assert_array_equal(ds.features[:, 1], [2, 5, 8])


def test_day_first_timestamp(tmp_path):
    p = _write(tmp_path, "time,x,y\n01/01/2010 00:00:00,1,2\n02/01/2010 13:15:00,1,2\n")
    ds = dataio.load_csv(p, "y", timestamp_column="time")
    assert ds.timestamps[0] == np.datetime64("2010-01-01T00:00:00")
    # day-first: 02/01 is the 2nd of January
    assert ds.timestamps[1] == np.datetime64("2010-01-02T13:15:00")


def test_custom_timestamp_format(tmp_path):
    p = _write(tmp_path, "time,x,y\n2010-03-04 05:06:07,1,2\n")
    ds = dataio.load_csv(p, "y", "time", timestamp_format="%Y-%m-%d %H:%M:%S")
    assert ds.timestamps[0] == np.datetime64("2010-03-04T05:06:07")


def test_non_numeric_cell_names_row_and_column(tmp_path):
    p = _write(tmp_path, "a,b,t\n1,2,3\n4,oops,6\n")
    with pytest.raises(DataError, match=r"row 2, column 'b'"):
        dataio.load_csv(p, "t")


def test_missing_column(tmp_path):
    p = _write(tmp_path, "a,b\n1,2\n")
    with pytest.raises(DataError, match="'t'"):
        dataio.load_csv(p, "t")


def test_empty_file(tmp_path):
    with pytest.raises(DataError, match="empty"):
        dataio.load_csv(_write(tmp_path, ""), "t")
    with pytest.raises(DataError, match="no data rows"):
        dataio.load_csv(_write(tmp_path, "a,t\n", "h.csv"), "t")


def test_bad_timestamp_reports_row(tmp_path):
    p = _write(tmp_path, "time,y\n01/01/2010 00:00:00,1\nnot-a-date,2\n")
    with pytest.raises(DataError, match=r"row 2, column 'time'"):
        dataio.load_csv(p, "y", "time")


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(3)
    a = rng.standard_normal(200) * 1e3
    b = rng.standard_normal(200)
    p = tmp_path / "r.csv"
    dataio.write_csv(p, {"a": a, "b": b})
    ds = dataio.load_csv(p, "b")
    np.testing.assert_array_equal(ds.features[:, 0], a)
    np.testing.assert_array_equal(ds.targets, b)


def test_dataset_rejects_nan_and_shape_mismatch():
    with pytest.raises(DataError):
        Dataset(["a"], np.array([[1.0], [np.nan]]), np.array([1.0, 2.0]))
    with pytest.raises(DimensionError):
        Dataset(["a"], np.ones((3, 1)), np.ones(2))
    with pytest.raises(DimensionError):
        Dataset(["a", "b"], np.ones((3, 1)), np.ones(3))


def test_config_rejects_unknown_keys(tmp_path):
    p = _write(tmp_path, '{"target_column": "t", "colour": "red"}', "c.json")
    with pytest.raises(DataError, match="unknown"):
        dataio.DataConfig.from_json(p)


# -- scaling ----------------------------------------------------------------


def _ds(X, y):
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    return Dataset([f"x{j}" for j in range(X.shape[1])], X, np.asarray(y, dtype=float))


def test_fit_scaling_endpoints():
    ds = _ds([2, 4, 6], [0, 1, 2])
    spec = dataio.fit_scaling(ds)
    assert (spec.feature_min[0], spec.feature_max[0]) == (2, 6)
    np.testing.assert_array_equal(dataio.apply_scaling(spec, ds.features).ravel(), [0, 0.5, 1])
    assert spec.C == 1


def test_clustering_mode_uses_ten_d():
    ds = _ds(np.array([[0, 1], [1, 2], [2, 3]]), [0, 5, 10])
    spec = dataio.fit_scaling(ds, mode="clustering")
    assert spec.C == 20
    np.testing.assert_array_equal(dataio.apply_target_scaling(spec, ds.targets), [0, 10, 20])


def test_degenerate_column_maps_to_zero():
    ds = _ds(np.array([[1.0, 3.0], [2.0, 3.0], [5.0, 3.0]]), [1, 2, 3])
    spec = dataio.fit_scaling(ds)
    np.testing.assert_array_equal(spec.degenerate, [False, True])
    np.testing.assert_array_equal(dataio.apply_scaling(spec, [[7.0, 9.0]])[0, 1], 0.0)


def test_scaling_dimension_error():
    spec = dataio.fit_scaling(_ds(np.ones((3, 2)) * [[1], [2], [3]], [1, 2, 3]))
    with pytest.raises(DimensionError):
        dataio.apply_scaling(spec, np.ones((2, 3)))


def test_scaling_rejects_C_below_one():
    with pytest.raises(ValueError):
        dataio.fit_scaling(_ds([1, 2], [1, 2]), C=0.5)


def test_round_trip_random_matrices():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, d = rng.integers(2, 30), rng.integers(1, 6)
        X = rng.standard_normal((n, d)) * rng.uniform(0.1, 100, d) + rng.uniform(-50, 50, d)
        y = rng.standard_normal(n) * 7
        spec = dataio.fit_scaling(_ds(X, y), C=float(rng.uniform(1, 50)))
        np.testing.assert_allclose(dataio.invert_scaling(spec, dataio.apply_scaling(spec, X)), X, rtol=0, atol=1e-12 * max(1, np.abs(X).max()))
        np.testing.assert_allclose(
            dataio.invert_target_scaling(spec, dataio.apply_target_scaling(spec, y)), y, rtol=0, atol=1e-12 * max(1, np.abs(y).max())
        )


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=40))
def test_min_max_map_exactly(values):
    y = np.array(values)
    ds = _ds(y, y)
    spec = dataio.fit_scaling(ds, C=7.0)
    xs = dataio.apply_scaling(spec, ds.features).ravel()
    ts = dataio.apply_target_scaling(spec, y)
    if y.max() > y.min():
        assert xs[np.argmin(y)] == 0.0 and xs[np.argmax(y)] == 1.0
        assert ts[np.argmin(y)] == 0.0 and ts[np.argmax(y)] == 7.0
    else:
        assert np.all(xs == 0.0)


# -- calendar ---------------------------------------------------------------


def test_calendar_new_year_2010():
    c = dataio.calendar_features(dt.datetime(2010, 1, 1, 0, 0))
    assert (c.hour, c.month, c.quarter, c.day_of_year, c.day_of_month, c.year) == (0, 1, 1, 1, 1, 2010)
    assert c.day_of_week == 4  # Friday
    assert c.week_of_year == 53  # ISO week of 2009


def test_calendar_new_years_eve_afternoon():
    c = dataio.calendar_features(dt.datetime(2010, 12, 31, 13, 0))
    assert (c.hour, c.quarter, c.day_of_year) == (13, 4, 365)


def test_calendar_matrix_matches_scalar():
    ts = np.datetime64("2009-12-25T00:00") + np.arange(0, 24 * 60, 97).astype("timedelta64[h]")
    M = dataio.calendar_matrix(ts)
    for row, t in zip(M, ts):
        assert tuple(int(v) for v in row) == dataio.calendar_features(t).as_tuple()


def test_calendar_ranges_over_many_timestamps():
    rng = np.random.default_rng(11)
    secs = rng.integers(0, 60 * 365 * 86400, 10_000)
    ts = np.datetime64("1990-01-01T00:00:00") + secs.astype("timedelta64[s]")
    M = dataio.calendar_matrix(ts)
    lo = [0, 0, 1, 1, 1990, 1, 1, 1]
    hi = [23, 6, 4, 12, 2050, 366, 31, 53]
    assert np.all(M >= lo) and np.all(M <= hi)
    np.testing.assert_array_equal(M[:, 2], (M[:, 3] - 1) // 3 + 1)


@settings(max_examples=200, deadline=None)
@given(st.datetimes(min_value=dt.datetime(1900, 1, 1), max_value=dt.datetime(2100, 12, 31)))
def test_calendar_fields_in_range(t):
    c = dataio.calendar_features(t)
    assert 0 <= c.hour <= 23 and 0 <= c.day_of_week <= 6 and 1 <= c.quarter <= 4
    assert 1 <= c.month <= 12 and 1 <= c.day_of_year <= 366 and 1 <= c.day_of_month <= 31
    assert 1 <= c.week_of_year <= 53


# -- split ------------------------------------------------------------------


def test_chronological_half_split():
    ds = _ds(np.arange(10), np.arange(10))
    a, b = dataio.split(ds, 0.5)
    np.testing.assert_array_equal(a.targets, [0, 1, 2, 3, 4])
    np.testing.assert_array_equal(b.targets, [5, 6, 7, 8, 9])


def test_split_floor_rule():
    a, b = dataio.split(_ds(np.arange(3), np.arange(3)), 0.5)
    assert (a.n, b.n) == (1, 2)


def test_split_empty_side_rejected():
    with pytest.raises(DataError):
        dataio.split(_ds(np.arange(3), np.arange(3)), 0.2)
    with pytest.raises(DataError):
        dataio.split(_ds(np.arange(1), np.arange(1)), 0.5)


def test_random_split_deterministic_disjoint_exhaustive():
    ds = _ds(np.arange(50), np.arange(50))
    a1, b1 = dataio.split(ds, 0.3, "random", seed=4)
    a2, b2 = dataio.split(ds, 0.3, "random", seed=4)
    np.testing.assert_array_equal(a1.targets, a2.targets)
    np.testing.assert_array_equal(b1.targets, b2.targets)
    assert not set(a1.targets) & set(b1.targets)
    assert sorted(np.concatenate([a1.targets, b1.targets])) == list(range(50))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 200), st.floats(0.01, 0.99), st.integers(0, 10))
def test_split_partitions(n, frac, seed):
    ds = _ds(np.arange(n), np.arange(n))
    try:
        a, b = dataio.split(ds, frac, "random", seed)
    except DataError:
        assert int(np.floor(frac * n)) in (0, n)
        return
    assert a.n == int(np.floor(frac * n))
    assert sorted(np.concatenate([a.targets, b.targets])) == list(range(n))
