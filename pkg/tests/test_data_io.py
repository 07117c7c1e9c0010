from __future__ import annotations

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphdlm.data_io import (
    DayTensor,
    SpeedSeries,
    apply_norm,
    downsample,
    fit_norm,
    invert_norm,
    load_speeds,
    split_days,
    to_day_tensor,
    write_speeds,
)
from graphdlm.errors import DataError, ValidationError


def _series(values, interval=5, start="2021-03-01T00:00", ids=None):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    ts = np.datetime64(start, "s") + np.arange(len(values)) * np.timedelta64(interval, "m")
    ids = ids or tuple(f"s{i}" for i in range(values.shape[1]))
    return SpeedSeries(tuple(ids), ts, values, interval)


def _tensor(rng, T=4, n=3, m=6, interval=360):
    vals = 60 + 5 * rng.normal(size=(T, n, m))
    labels = np.datetime64("2021-01-01") + np.arange(m)
    return DayTensor(tuple(f"s{i}" for i in range(n)), vals, labels, interval)


class TestLoadSpeeds:
    def test_two_rows_two_sensors(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("timestamp,a,b\n2021-01-01 00:00:00,60,61.5\n2021-01-01 00:05:00,59,62\n")
        s = load_speeds(p)
        assert s.n == 2 and len(s.timestamps) == 2
        assert s.interval_min == 5
        np.testing.assert_array_equal(s.values, [[60, 61.5], [59, 62]])

    def test_gap_names_first_gap(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(
            "timestamp,a\n2021-01-01T00:00,1\n2021-01-01T00:05,1\n2021-01-01T00:15,1\n2021-01-01T00:25,1\n"
        )
        with pytest.raises(DataError, match=r"gap in timestamps between 2021-01-01T00:05:00 and 2021-01-01T00:15:00"):
            load_speeds(p)

    def test_zero_and_empty_are_missing(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("timestamp,a,b\n2021-01-01T00:00,0,\n2021-01-01T00:05,60,0.0\n")
        s = load_speeds(p)
        np.testing.assert_array_equal(s.mask, [[False, False], [True, False]])

    def test_malformed_timestamps_list_lines(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("timestamp,a\nnot-a-time,1\n2021-01-01T00:05,1\nbad,2\n")
        with pytest.raises(DataError, match="lines 2, 4"):
            load_speeds(p)

    def test_ragged_row(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("timestamp,a,b\n2021-01-01T00:00,1,2\n2021-01-01T00:05,1\n")
        with pytest.raises(DataError, match=":3: ragged"):
            load_speeds(p)

    def test_non_monotone(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("timestamp,a\n2021-01-01T00:05,1\n2021-01-01T00:00,1\n")
        with pytest.raises(DataError, match="not increasing"):
            load_speeds(p)

    def test_sensor_mismatch_and_reorder(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("timestamp,a,b\n2021-01-01T00:00,1,2\n2021-01-01T00:05,3,4\n")
        s = load_speeds(p, sensor_ids=["b", "a"])
        np.testing.assert_array_equal(s.values, [[2, 1], [4, 3]])
        with pytest.raises(DataError, match=r"unknown=\['b'\] missing=\['c'\]"):
            load_speeds(p, sensor_ids=["a", "c"])

    def test_interval_must_divide_day(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("timestamp,a\n2021-01-01T00:00,1\n2021-01-01T00:07,1\n")
        with pytest.raises(DataError, match="divide a day"):
            load_speeds(p)

    def test_unsupported_format(self, tmp_path):
        with pytest.raises(ValidationError):
            load_speeds(tmp_path / "x", format="h5")

    def test_write_load_roundtrip(self, tmp_path, rng):
        vals = 50 + rng.uniform(size=(12, 3))
        vals[3, 1] = np.nan
        s = _series(vals)
        write_speeds(s, tmp_path / "s.csv")
        back = load_speeds(tmp_path / "s.csv")
        np.testing.assert_array_equal(back.values, s.values)
        np.testing.assert_array_equal(back.timestamps, s.timestamps)

    def test_pems_scale_shape(self, rng):
        # 325 sensors at 5 minutes gives 288 slots per day
        s = _series(50 + rng.uniform(size=(288 * 2, 325)))
        dt = to_day_tensor(s)
        assert (dt.T, dt.n, dt.m) == (288, 325, 2)


class TestToDayTensor:
    def test_two_days(self, rng):
        dt = to_day_tensor(_series(50 + rng.uniform(size=(576, 2))))
        assert len(dt.slot_matrices) == 288
        assert all(X.shape == (2, 2) for X in dt.slot_matrices)

    def test_column_is_slot_of_day(self, rng):
        vals = rng.uniform(1, 2, size=(3 * 288, 2))
        dt = to_day_tensor(_series(vals))
        np.testing.assert_array_equal(dt.values[7][:, 2], vals[2 * 288 + 7])

    def test_zero_is_unobserved(self):
        vals = np.full((576, 1), 60.0)
        vals[300, 0] = 0.0
        s = _series(vals)
        s = SpeedSeries(s.sensor_ids, s.timestamps, np.where(s.values == 0, np.nan, s.values), 5)
        dt = to_day_tensor(s)
        assert not dt.mask[12, 0, 1] and dt.mask.sum() == 575

    def test_downsampled_ten_minutes(self, rng):
        s = downsample(_series(50 + rng.uniform(size=(576, 2))), 2)
        assert to_day_tensor(s).T == 144

    def test_partial_days_dropped_with_warning(self, rng, caplog):
        s = _series(50 + rng.uniform(size=(3 * 288 + 10, 1)), start="2021-03-01T23:00")
        with caplog.at_level(logging.WARNING):
            dt = to_day_tensor(s)
        assert dt.m == 2
        assert str(dt.day_labels[0]) == "2021-03-02"
        assert "before the first midnight" in caplog.text

    def test_fewer_than_two_days(self, rng):
        with pytest.raises(DataError, match="at least 2"):
            to_day_tensor(_series(50 + rng.uniform(size=(300, 1))))

    def test_flatten_is_inverse(self, rng):
        s = _series(50 + rng.uniform(size=(4 * 48, 3)), interval=30)
        back = to_day_tensor(s).flatten()
        np.testing.assert_array_equal(back.values, s.values)
        np.testing.assert_array_equal(back.timestamps, s.timestamps)


class TestDownsample:
    def test_mean(self):
        np.testing.assert_array_equal(downsample(_series([60.0, 62.0]), 2).values, [[61.0]])

    def test_masked_mean(self):
        np.testing.assert_array_equal(downsample(_series([60.0, np.nan]), 2).values, [[60.0]])

    def test_all_missing(self):
        assert np.isnan(downsample(_series([np.nan, np.nan]), 2).values[0, 0])

    @pytest.mark.parametrize("f", [0, -2, 1.5])
    def test_bad_factor(self, f):
        with pytest.raises(ValidationError):
            downsample(_series([1.0, 2.0]), f)

    def test_factor_must_divide_day(self):
        with pytest.raises(ValidationError, match="divide"):
            downsample(_series(np.ones(10)), 7)

    def test_interval_scales(self):
        assert downsample(_series(np.ones(6)), 3).interval_min == 15


class TestSplitDays:
    def _dt(self, m):
        vals = np.zeros((2, 1, m))
        return DayTensor(("a",), vals, np.datetime64("2020-01-01") + np.arange(m), 720)

    @pytest.mark.parametrize(
        "m,frac,n_train",
        [(10, 0.8, 8), (209, 0.8, 167), (170, 97 / 170, 97), (5, 0.5, 3)],
    )
    def test_sizes(self, m, frac, n_train):
        tr, te = split_days(self._dt(m), frac)
        assert (tr.m, te.m) == (n_train, m - n_train)

    def test_chronological(self):
        tr, te = split_days(self._dt(10), 0.8)
        assert tr.day_labels.max() < te.day_labels.min()

    @pytest.mark.parametrize("frac", [0.0, 1.0, 0.01, 0.99])
    def test_empty_side(self, frac):
        with pytest.raises(ValidationError):
            split_days(self._dt(10), frac)


class TestNorm:
    def test_constant_sensor_rejected(self, rng):
        dt = _tensor(rng)
        vals = dt.values.copy()
        vals[:, 1, :] = 55.0
        with pytest.raises(DataError, match="zero-variance sensors: \\['s1'\\]"):
            fit_norm(dt.with_values(vals))

    def test_mean_maps_to_zero(self, rng):
        dt = _tensor(rng)
        st = fit_norm(dt)
        np.testing.assert_allclose(st.apply(st.mu, axis=0), 0.0, atol=1e-12)

    def test_roundtrip(self, rng):
        dt = _tensor(rng)
        st = fit_norm(dt)
        back = invert_norm(apply_norm(dt, st), st)
        assert np.max(np.abs(back.values - dt.values)) < 1e-12

    def test_observed_entries_only(self, rng):
        dt = _tensor(rng, m=8)
        vals = dt.values.copy()
        vals[0, 0, :3] = np.nan
        st = fit_norm(dt.with_values(vals))
        obs = vals[:, 0, :][np.isfinite(vals[:, 0, :])]
        assert st.mu[0] == pytest.approx(obs.mean())
        assert st.sd[0] == pytest.approx(obs.std())

    def test_too_few_observations(self, rng):
        dt = _tensor(rng)
        vals = dt.values.copy()
        vals[:, 2, :] = np.nan
        vals[0, 2, 0] = 50.0
        with pytest.raises(DataError, match="fewer than 2"):
            fit_norm(dt.with_values(vals))


@settings(max_examples=30, deadline=None)
@given(T=st.sampled_from([2, 4, 24, 48]), m=st.integers(2, 5), n=st.integers(1, 4), seed=st.integers(0, 10**6))
def test_flatten_bijection_property(T, m, n, seed):
    r = np.random.default_rng(seed)
    vals = r.uniform(1, 100, size=(T, n, m))
    dt = DayTensor(tuple(map(str, range(n))), vals, np.datetime64("2022-05-01") + np.arange(m), 1440 // T)
    back = to_day_tensor(dt.flatten())
    np.testing.assert_array_equal(back.values, dt.values)
    np.testing.assert_array_equal(back.day_labels, dt.day_labels)
