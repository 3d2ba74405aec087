import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtsnas.data import (
    DataError,
    NormStats,
    RawSeries,
    SyntheticSpec,
    denormalize,
    gen_synthetic,
    load_csv,
    make_windows,
    normalize,
    planted_adjacency,
    split_sizes,
    window_count,
    write_csv,
)


def write(tmp_path, text, name="s.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def int_series(length, n_vars=2, seed=0):
    values = np.random.default_rng(seed).standard_normal((length, n_vars))
    return RawSeries(values, list(range(length)), 1.0, False, [f"v{i}" for i in range(n_vars)])


# ----------------------------------------------------------------------
# CSV


def test_load_small_file(tmp_path):
    p = write(tmp_path, "time,a,b\n2024-01-01T00:00,1,2\n2024-01-01T00:05,3,4\n2024-01-01T00:10,5,6\n")
    s = load_csv(p)
    assert (s.length, s.n_vars) == (3, 2)
    assert s.interval == 300.0 and s.has_clock
    np.testing.assert_array_equal(s.values, [[1, 2], [3, 4], [5, 6]])


def test_integer_step_index(tmp_path):
    s = load_csv(write(tmp_path, "step,x\n0,1.5\n1,2.5\n2,3.5\n"))
    assert not s.has_clock and s.interval == 1.0


def test_gap_names_row(tmp_path):
    p = write(tmp_path, "time,a\n2024-01-01T00:00,1\n2024-01-01T00:05,1\n2024-01-01T00:15,1\n2024-01-01T00:20,1\n")
    with pytest.raises(DataError, match="row 4: gap"):
        load_csv(p)


def test_gap_at_start_names_row(tmp_path):
    p = write(tmp_path, "time,a\n2024-01-01T00:00,1\n2024-01-01T00:10,1\n2024-01-01T00:15,1\n")
    with pytest.raises(DataError, match="row 3: gap"):
        load_csv(p)


def test_duplicate_timestamp(tmp_path):
    p = write(tmp_path, "step,a\n0,1\n1,1\n1,1\n")
    with pytest.raises(DataError, match="row 4: duplicate"):
        load_csv(p)


def test_non_numeric_cell(tmp_path):
    p = write(tmp_path, "step,a,b\n0,1,2\n1,x,2\n")
    with pytest.raises(DataError, match="row 3.*'a'.*non-numeric"):
        load_csv(p)


def test_non_finite_cell(tmp_path):
    with pytest.raises(DataError, match="non-finite"):
        load_csv(write(tmp_path, "step,a\n0,1\n1,nan\n"))


def test_header_only_is_too_short(tmp_path):
    with pytest.raises(DataError, match="0 data rows"):
        load_csv(write(tmp_path, "time,a,b\n"))


def test_min_rows(tmp_path):
    with pytest.raises(DataError, match="need at least 24"):
        load_csv(write(tmp_path, "step,a\n0,1\n1,2\n"), min_rows=24)


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="cannot open"):
        load_csv(tmp_path / "nope.csv")


def test_csv_round_trip(tmp_path):
    series, _ = gen_synthetic(SyntheticSpec(n_vars=3, length=50))
    write_csv(series, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.values, series.values)
    assert back.timestamps == series.timestamps and back.names == series.names


# ----------------------------------------------------------------------
# windows and splits


def test_window_count_examples():
    assert window_count(100, 12, 12) == 77
    assert window_count(24, 12, 12) == 1


@settings(max_examples=50, deadline=None)
@given(length=st.integers(2, 60), t_in=st.integers(1, 10), h=st.integers(1, 10))
def test_window_count_law(length, t_in, h):
    if length < t_in + h:
        return
    splits = make_windows(int_series(length), t_in, h, split=(0.5, 0.3, 0.2)) if length - t_in - h + 1 >= 2 else None
    total = window_count(length, t_in, h)
    assert total == length - (t_in + h) + 1
    if splits is not None:
        assert len(splits.train) + len(splits.valid) + len(splits.test) == total


def test_split_of_77():
    assert split_sizes(77, 0.7, 0.2) == (53, 16, 8)


def test_single_window_has_no_training_split():
    assert window_count(24, 12, 12) == 1
    with pytest.raises(DataError, match="1 windows leave no training samples"):
        make_windows(int_series(24), 12, 12)


def test_too_short_series():
    with pytest.raises(DataError, match="too short"):
        make_windows(int_series(23), 12, 12)


def test_windows_are_chronological_and_aligned():
    s = int_series(100, n_vars=3, seed=1)
    sp = make_windows(s, 12, 12)
    starts = np.concatenate([sp.train.starts, sp.valid.starts, sp.test.starts])
    np.testing.assert_array_equal(starts, np.arange(77))
    k = 5
    start = sp.valid.starts[k]
    np.testing.assert_allclose(sp.valid.raw_targets[k], s.values[start + 12 : start + 24].T)
    np.testing.assert_allclose(sp.valid.last_raw[k], s.values[start + 11])
    np.testing.assert_allclose(denormalize(sp.valid.inputs[k, :, :, 0], sp.stats), s.values[start : start + 12].T)


def test_stats_use_training_rows_only():
    s = int_series(100, n_vars=3, seed=2)
    sp = make_windows(s, 12, 12)
    rows = s.values[: sp.train_rows]
    assert sp.train_rows == 53 - 1 + 24
    np.testing.assert_allclose(sp.stats.mean, rows.mean(axis=0), rtol=0, atol=1e-15)
    np.testing.assert_allclose(sp.stats.std, rows.std(axis=0), rtol=0, atol=1e-15)
    changed = s.values.copy()
    changed[sp.train_rows :] += 100.0
    other = make_windows(dataclasses.replace(s, values=changed), 12, 12)
    np.testing.assert_array_equal(other.stats.mean, sp.stats.mean)


def test_constant_variable_is_rejected():
    s = int_series(40)
    s.values[:, 1] = 3.0
    with pytest.raises(DataError, match="constant"):
        make_windows(s, 4, 4)


def test_time_of_day_channel():
    series, _ = gen_synthetic(SyntheticSpec(n_vars=2, length=600, interval_minutes=5))
    sp = make_windows(series, 12, 12)
    assert sp.in_channels == 2
    tod = series.time_of_day()
    assert (tod >= 0).all() and (tod < 1).all()
    per_day = 24 * 60 // 5
    np.testing.assert_allclose(tod[per_day:], tod[:-per_day], atol=1e-12)
    np.testing.assert_allclose(sp.train.inputs[3, 0, :, 1], tod[3:15])


def test_no_clock_no_extra_channel():
    assert make_windows(int_series(40), 4, 4).in_channels == 1


# ----------------------------------------------------------------------
# normalisation


def test_normalize_round_trip():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 4, 7)) * 10 + 3
    stats = NormStats(rng.random(4) * 5, rng.random(4) + 0.1)
    np.testing.assert_allclose(denormalize(normalize(x, stats), stats), x, rtol=0, atol=1e-12)


def test_denormalize_identity_stats():
    x = np.random.default_rng(4).standard_normal((3, 2))
    np.testing.assert_array_equal(denormalize(x, NormStats(np.zeros(3), np.ones(3))), x)


def test_denormalize_hand_value():
    out = denormalize(np.array([[1.5]]), NormStats(np.array([10.0]), np.array([2.0])))
    assert out[0, 0] == 13.0


def test_denormalize_variable_mismatch():
    with pytest.raises(DataError, match="3 variables"):
        denormalize(np.zeros((2, 4)), NormStats(np.zeros(3), np.ones(3)))


def test_stats_json_round_trip():
    stats = NormStats(np.array([1.0, 2.5]), np.array([0.5, 3.0]))
    back = NormStats.from_json(json.loads(json.dumps(stats.to_json())))
    np.testing.assert_array_equal(back.mean, stats.mean)
    np.testing.assert_array_equal(back.std, stats.std)


# ----------------------------------------------------------------------
# synthetic data


def test_planted_adjacency_blocks():
    adj = planted_adjacency(8, 2)
    assert (np.diag(adj) == 0).all() and (adj == adj.T).all()
    assert adj[:4, :4].sum() == 12 and adj[:4, 4:].sum() == 0


def test_pure_sinusoid():
    spec = SyntheticSpec(n_vars=1, n_blocks=1, length=64, fast_period=8, slow_amp=0, driver_scale=0, coupling=0, noise=0)
    series, _ = gen_synthetic(spec)
    phase = np.random.default_rng(spec.seed).uniform(0, 2 * np.pi)
    expected = np.sin(2 * np.pi * np.arange(64) / 8 + phase)
    np.testing.assert_allclose(series.values[:, 0], expected, rtol=0, atol=1e-12)
    np.testing.assert_allclose(series.values[8:, 0], series.values[:-8, 0], atol=1e-12)


def test_synthetic_is_deterministic():
    a, _ = gen_synthetic(SyntheticSpec(seed=3))
    b, _ = gen_synthetic(SyntheticSpec(seed=3))
    assert a.values.tobytes() == b.values.tobytes()
    c, _ = gen_synthetic(SyntheticSpec(seed=4))
    assert a.values.tobytes() != c.values.tobytes()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_planted_pairs_are_most_correlated(seed):
    series, adj = gen_synthetic(SyntheticSpec(seed=seed))
    corr = np.corrcoef(series.values.T)
    off = ~np.eye(adj.shape[0], dtype=bool)
    assert corr[adj > 0].min() > corr[(adj == 0) & off].max()


@pytest.mark.parametrize(
    "field,value",
    [("n_vars", 0), ("length", 1), ("n_blocks", 9), ("noise", -1.0), ("ar_coef", 1.0), ("start", "yesterday")],
)
def test_spec_validation_names_field(field, value):
    with pytest.raises(DataError, match=field):
        SyntheticSpec(**{field: value}).validate()


def test_spec_json_rejects_unknown_fields():
    with pytest.raises(DataError, match="bogus"):
        SyntheticSpec.from_json({"bogus": 1})
    spec = SyntheticSpec(n_vars=5, seed=9)
    assert SyntheticSpec.from_json(spec.to_json()) == spec
