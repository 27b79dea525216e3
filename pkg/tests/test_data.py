import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bacerul.data import (CycleRecord, LabeledSet, Normalizer, SynthConfig, apply_normalizer,
                          compute_rul_labels, fit_normalizer, load_cmapss, load_csv,
                          load_rul_file, split_stages, synth_degradation, write_csv)
from bacerul.errors import ConfigError, DataError, ParseError, ShapeError, UsageError


def cmapss_line(unit, cycle, rng):
    vals = [unit, cycle, *rng.normal(size=24)]
    return " ".join(str(v) for v in vals)


def unit_records(unit, c_end, m=2):
    return [CycleRecord(unit, c, np.empty(0), np.full(m, float(c))) for c in range(1, c_end + 1)]


class TestLoadCmapss:
    def test_two_lines(self, tmp_path):
        rng = np.random.default_rng(0)
        p = tmp_path / "train.txt"
        p.write_text(cmapss_line(1, 1, rng) + "\n" + cmapss_line(1, 2, rng) + "\n")
        recs = load_cmapss(p)
        assert [r.cycle_index for r in recs] == [1, 2]
        assert recs[0].features.shape == (24,)
        assert recs[0].op_settings.shape == (3,) and recs[0].sensors.shape == (21,)

    def test_wrong_field_count_names_line(self, tmp_path):
        rng = np.random.default_rng(0)
        bad = " ".join(["1", "2"] + ["0.5"] * 23)
        p = tmp_path / "train.txt"
        p.write_text(cmapss_line(1, 1, rng) + "\n" + bad + "\n")
        with pytest.raises(ParseError) as exc:
            load_cmapss(p)
        assert exc.value.line == 2
        assert ":2:" in str(exc.value)

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "t.txt"
        p.write_text("1 1 " + " ".join(["x"] * 24) + "\n")
        with pytest.raises(ParseError) as exc:
            load_cmapss(p)
        assert exc.value.line == 1

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("")
        with pytest.raises(UsageError):
            load_cmapss(p)


class TestCsv:
    def test_roundtrip(self, tmp_path):
        train, _ = synth_degradation(SynthConfig(n_units=3, min_life=20, max_life=30, m=3))
        p = tmp_path / "f.csv"
        write_csv(p, train)
        recs, names = load_csv(p)
        assert names == ("s1", "s2", "s3")
        back = compute_rul_labels(recs, train.rul_cap, feature_names=names)
        np.testing.assert_array_equal(back.x, train.x)
        np.testing.assert_array_equal(back.t, train.t)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("id,time,a\n1,1,0.5\n")
        with pytest.raises(ParseError):
            load_csv(p)

    def test_ragged_row(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("unit,cycle,a,b\n1,1,0.5,0.1\n1,2,0.3\n")
        with pytest.raises(ParseError) as exc:
            load_csv(p)
        assert exc.value.line == 3


class TestRulFile:
    def test_offsets(self, tmp_path):
        recs = unit_records(1, 50)
        p = tmp_path / "RUL.txt"
        p.write_text("20\n")
        end = load_rul_file(p, recs)
        assert end == {1: 20}
        data = compute_rul_labels(recs, 125, end)
        assert data.t_raw[data.cycle == 50][0] == 20
        assert data.t_raw[data.cycle == 49][0] == 21

    def test_zero_floored(self, tmp_path, caplog):
        p = tmp_path / "RUL.txt"
        p.write_text("0\n")
        with caplog.at_level(logging.WARNING):
            assert load_rul_file(p, unit_records(3, 4)) == {3: 1}
        assert "raised to 1" in caplog.text

    def test_count_mismatch(self, tmp_path):
        p = tmp_path / "RUL.txt"
        p.write_text("5\n6\n")
        with pytest.raises(UsageError):
            load_rul_file(p, unit_records(1, 3))


class TestLabels:
    def test_documented_unit(self):
        data = compute_rul_labels(unit_records(1, 200), 125)
        row = {int(c): i for i, c in enumerate(data.cycle)}
        assert (data.t_raw[row[1]], data.t[row[1]], data.normal[row[1]]) == (200, 125, True)
        assert (data.t_raw[row[76]], data.t[row[76]], data.normal[row[76]]) == (125, 125, False)
        assert (data.t[row[200]], data.normal[row[200]]) == (1, False)

    def test_short_unit_all_accelerated(self):
        data = compute_rul_labels(unit_records(1, 100), 125)
        assert not data.normal.any()

    def test_decreasing_below_cap(self):
        data = compute_rul_labels(unit_records(1, 300), 125)
        below = data.t[data.t < 125]
        assert np.all(np.diff(below) == -1) and below[-1] == 1

    def test_gap_rejected(self):
        recs = unit_records(1, 5)
        del recs[2]
        with pytest.raises(DataError):
            compute_rul_labels(recs, 125)

    def test_unsorted_input_ordered(self):
        recs = unit_records(2, 5) + unit_records(1, 4)
        recs.reverse()
        data = compute_rul_labels(recs, 125)
        assert list(data.unit) == [1] * 4 + [2] * 5
        assert list(data.cycle) == [1, 2, 3, 4, 1, 2, 3, 4, 5]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(1, 400), min_size=1, max_size=5), st.integers(1, 200))
    def test_invariants(self, lifetimes, cap):
        recs = [r for u, life in enumerate(lifetimes, 1) for r in unit_records(u, life, 1)]
        data = compute_rul_labels(recs, cap)
        assert data.t.max() <= cap
        np.testing.assert_array_equal(data.normal, data.t_raw > cap)
        for u, life in enumerate(lifetimes, 1):
            t = data.t[data.unit == u]
            assert t[-1] == 1
            assert np.all(t >= 1)
            below = np.flatnonzero(t < cap)
            assert np.all(np.diff(t[below]) == -1)


class TestStages:
    def test_counts(self):
        normal, accel = split_stages(compute_rul_labels(unit_records(1, 200), 125))
        assert (len(normal), len(accel)) == (75, 125)

    def test_all_below_cap(self):
        normal, accel = split_stages(compute_rul_labels(unit_records(1, 30), 125))
        assert len(normal) == 0 and len(accel) == 30

    def test_partition(self):
        data = compute_rul_labels(unit_records(1, 160) + unit_records(2, 90), 125)
        normal, accel = split_stages(data)
        assert len(normal) + len(accel) == len(data)
        assert normal.normal.all() and not accel.normal.any()


class TestNormalizer:
    def test_constant_column(self):
        x = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
        z = fit_normalizer(x).apply(x)
        np.testing.assert_array_equal(z[:, 0], 0.0)

    def test_zscore(self):
        x = np.random.default_rng(0).normal(5, 3, size=(200, 4))
        z = fit_normalizer(x).apply(x)
        assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
        np.testing.assert_allclose(z.std(axis=0), 1.0, rtol=1e-12)

    def test_inverse(self):
        x = np.random.default_rng(1).normal(size=(50, 3)) * [1, 100, 1e-3]
        norm = fit_normalizer(x)
        np.testing.assert_allclose(norm.invert(norm.apply(x)), x, rtol=0, atol=1e-10)

    def test_test_data_uses_train_statistics(self):
        train = compute_rul_labels(unit_records(1, 10), 125)
        test = compute_rul_labels(unit_records(2, 30), 125)
        norm = fit_normalizer(train.x)
        out = apply_normalizer(norm, test)
        np.testing.assert_array_equal(out.x, (test.x - norm.mean) / norm.std)

    def test_needs_two_samples(self):
        with pytest.raises(UsageError):
            fit_normalizer(np.ones((1, 3)))

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            Normalizer(np.zeros(2), np.ones(2)).apply(np.ones(3))


class TestSynth:
    def test_split_counts(self):
        train, test = synth_degradation(SynthConfig(n_units=10, min_life=150, max_life=250))
        assert len(train.units) == 8 and len(test.units) == 2
        assert not set(train.units) & set(test.units)

    def test_lifetimes_in_range(self):
        train, test = synth_degradation(SynthConfig())
        for d in (train, test):
            for u in d.units:
                assert 150 <= d.cycle[d.unit == u].max() <= 250

    def test_deterministic(self):
        a = synth_degradation(SynthConfig(seed=5))
        b = synth_degradation(SynthConfig(seed=5))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.x, y.x)
            np.testing.assert_array_equal(x.t, y.t)

    def test_noise_free_plateau(self):
        train, _ = synth_degradation(SynthConfig(noise_std=0.0))
        u = train.units[0]
        sel = train.subset((train.unit == u) & train.normal)
        assert len(sel) > 1
        np.testing.assert_array_equal(sel.x, np.broadcast_to(sel.x[0], sel.x.shape))

    def test_features_track_health(self):
        train, _ = synth_degradation(SynthConfig(noise_std=0.0))
        u = train.units[0]
        x = train.x[(train.unit == u) & ~train.normal]
        assert len(np.unique(x[:, 0])) == len(x)

    @pytest.mark.parametrize("kw", [dict(min_life=0), dict(min_life=10, max_life=5),
                                    dict(m=1), dict(n_units=1), dict(noise_std=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            synth_degradation(SynthConfig(**kw))


def test_labeled_set_rows():
    data = compute_rul_labels(unit_records(1, 130), 125)
    s = data[0]
    assert (s.unit_id, s.cycle_index, s.t_raw, s.t, s.stage) == (1, 1, 130, 125, "Normal")
    assert isinstance(data, LabeledSet) and len(list(data)) == 130
