import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitprivacy.data import (CHANNELS, FEMALE, MALE, IMUWindow, IntegrityError, ParseError, SamplingError,
                              SchemaError, SignalStream, SizingError, SyntheticConfig, WindowDataset,
                              build_windows, generate_synthetic, harmonic_amplitudes, load_csv,
                              normalize_stream, sample_pairs, segment_windows, split_by_subject,
                              subject_genders, window_stride, write_csv)


def _stream(n=200, subject="A", gender=0, activity=0, seed=0):
    x = np.random.default_rng(seed).standard_normal((6, n))
    return SignalStream(subject, gender, activity, 50.0, x)


def _csv(tmp_path, rows, header=("subject_id", "gender", "activity", *CHANNELS)):
    path = tmp_path / "d.csv"
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


# -- load_csv ------------------------------------------------------------------

def test_load_csv_one_stream_per_group(tmp_path):
    rows = [("s1", 0, 0, *range(6))] * 3 + [("s2", 1, 2, *range(6))] * 4
    streams = load_csv(_csv(tmp_path, rows))
    assert len(streams) == 2
    assert [s.subject_id for s in streams] == ["s1", "s2"]
    assert streams[1].gender == FEMALE and streams[1].activity == 2
    np.testing.assert_array_equal(streams[0].channels[:, 0], np.arange(6))


def test_load_csv_row_count_sets_length(tmp_path):
    rng = np.random.default_rng(0)
    rows = [("s1", 0, 1, *rng.standard_normal(6)) for _ in range(500)]
    (stream,) = load_csv(_csv(tmp_path, rows), sample_rate_hz=50)
    assert stream.length == 500
    assert stream.sample_rate_hz == 50


def test_load_csv_missing_column(tmp_path):
    header = ("subject_id", "gender", "activity", *CHANNELS[:-1])
    with pytest.raises(SchemaError, match="gyr_z"):
        load_csv(_csv(tmp_path, [("s1", 0, 0, *range(5))], header))


def test_load_csv_schema_mapping(tmp_path):
    header = ("who", "sex", "act", "ax", "ay", "az", "gx", "gy", "gz")
    schema = dict(zip(("subject_id", "gender", "activity", *CHANNELS), header))
    (s,) = load_csv(_csv(tmp_path, [("s1", 1, 3, *range(6))] * 2, header), schema)
    assert (s.subject_id, s.gender, s.activity, s.length) == ("s1", 1, 3, 2)


def test_load_csv_non_numeric_reports_row(tmp_path):
    rows = [("s1", 0, 0, *range(6)), ("s1", 0, 0, 1, 2, "oops", 4, 5, 6)]
    with pytest.raises(ParseError, match="row 3"):
        load_csv(_csv(tmp_path, rows))


def test_load_csv_length_mismatch(tmp_path):
    rows = [("s1", 0, 0, *range(6)), ("s1", 0, 0, 1, 2, 3, 4, 5, "")]
    with pytest.raises(IntegrityError, match="length mismatch"):
        load_csv(_csv(tmp_path, rows))


def test_csv_round_trip(tmp_path):
    streams = generate_synthetic(SyntheticConfig(n_subjects=2, samples_per_subject_per_activity=30))
    write_csv(tmp_path / "c.csv", streams)
    back = load_csv(tmp_path / "c.csv")
    assert len(back) == len(streams)
    for a, b in zip(streams, back):
        assert (a.subject_id, a.gender, a.activity) == (b.subject_id, b.gender, b.activity)
        np.testing.assert_array_equal(a.channels, b.channels)


# -- normalize_stream ----------------------------------------------------------

def test_normalize_three_point():
    ch = np.tile([2.0, 4.0, 6.0], (6, 1))
    out = normalize_stream(SignalStream("a", 0, 0, 50.0, ch)).channels
    np.testing.assert_allclose(out[0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)


def test_normalize_idempotent():
    once = normalize_stream(_stream())
    twice = normalize_stream(once)
    np.testing.assert_allclose(once.channels, twice.channels, atol=1e-9)


def test_normalize_constant_channel_warns():
    ch = np.random.default_rng(1).standard_normal((6, 3))
    ch[2] = 5.0
    with pytest.warns(RuntimeWarning, match="acc_z"):
        out = normalize_stream(SignalStream("a", 0, 0, 50.0, ch)).channels
    np.testing.assert_array_equal(out[2], [0, 0, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 300), st.integers(0, 2**31))
def test_normalize_moments(n, seed):
    r = np.random.default_rng(seed)
    ch = r.normal(r.uniform(-50, 50), r.uniform(0.1, 30), (6, n))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = normalize_stream(SignalStream("a", 0, 0, 50.0, ch)).channels
    assert np.all(np.abs(out.mean(axis=1)) < 1e-6)
    assert np.all(np.abs(out.std(axis=1) - 1) < 1e-6)


# -- segment_windows -----------------------------------------------------------

def test_segment_1000_samples():
    # enumerate every start index by hand
    starts = [s for s in range(1000) if s % 25 == 0 and s + 100 <= 1000]
    wins = segment_windows(_stream(1000))
    assert len(wins) == len(starts) == 37


def test_segment_boundaries():
    assert len(segment_windows(_stream(100))) == 1
    assert segment_windows(_stream(99)) == []


def test_segment_contents_and_labels():
    s = _stream(300, subject="x", gender=1, activity=3)
    wins = segment_windows(s, 100, 0.75)
    np.testing.assert_array_equal(wins[2].values, s.channels[:, 50:150])
    assert all((w.subject_id, w.gender, w.activity) == ("x", 1, 3) for w in wins)


def test_non_integer_stride_rejected():
    with pytest.raises(ValueError, match="stride"):
        window_stride(10, 0.33)
    with pytest.raises(ValueError):
        window_stride(100, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 400), st.integers(1, 60), st.sampled_from([0.0, 0.5, 0.75, 0.8, 0.9]))
def test_segment_count_matches_enumeration(length, window_len, overlap):
    stride = window_len * (1 - overlap)
    if abs(stride - round(stride)) > 1e-9 or round(stride) < 1:
        return
    stride = round(stride)
    expected = sum(1 for s in range(length) if s % stride == 0 and s + window_len <= length)
    assert len(segment_windows(_stream(length), window_len, overlap)) == expected


# -- synthetic generator -------------------------------------------------------

def test_synthetic_deterministic():
    cfg = SyntheticConfig(n_subjects=4, samples_per_subject_per_activity=120, seed=3)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    assert all(np.array_equal(x.channels, y.channels) for x, y in zip(a, b))
    c = generate_synthetic(SyntheticConfig(n_subjects=4, samples_per_subject_per_activity=120, seed=4))
    assert not np.array_equal(a[0].channels, c[0].channels)


def test_synthetic_counts():
    streams = generate_synthetic(SyntheticConfig(n_subjects=40, samples_per_subject_per_activity=100))
    assert len(streams) == 160
    assert sorted({s.activity for s in streams}) == [0, 1, 2, 3]
    assert len({s.subject_id for s in streams}) == 40


def test_synthetic_gender_balanced():
    g = subject_genders(40, 7)
    assert (g == MALE).sum() == (g == FEMALE).sum() == 20


def test_synthetic_noise_free_power():
    # integer number of cycles for every harmonic: 20 periods of 1 Hz in 1000 samples at 50 Hz
    cfg = SyntheticConfig(n_subjects=3, samples_per_subject_per_activity=1000, sample_rate_hz=50.0,
                          base_frequency_by_activity=(1.0, 2.0, 3.0, 4.0), gender_frequency_shift=0.0,
                          frequency_spread=0.0, noise_std=0.0, n_harmonics=4)
    streams = generate_synthetic(cfg)
    genders = subject_genders(cfg.n_subjects, cfg.seed)
    for s in streams:
        idx = int(s.subject_id[1:])
        amp = harmonic_amplitudes(cfg, idx, int(genders[idx]))
        expected = (amp ** 2).sum(axis=1) / 2
        np.testing.assert_allclose((s.channels ** 2).mean(axis=1), expected, rtol=0, atol=1e-6)


def test_synthetic_config_validation():
    with pytest.raises(ValueError):
        SyntheticConfig(base_frequency_by_activity=(1.0, 1.0, 2.0, 3.0))
    with pytest.raises(ValueError):
        SyntheticConfig(noise_std=-1)


# -- splits --------------------------------------------------------------------

def _dataset(n_subjects, per_subject=3, genders=None):
    genders = genders if genders is not None else [i % 2 for i in range(n_subjects)]
    sid = np.repeat([f"s{i:03d}" for i in range(n_subjects)], per_subject)
    g = np.repeat(genders, per_subject)
    values = np.random.default_rng(0).standard_normal((len(sid), 6, 10))
    return WindowDataset(values, sid, g, np.zeros(len(sid), int))


def test_split_sizes_70_10():
    dev, ev = split_by_subject(_dataset(80), 0.875, seed=1)
    assert len(dev.subjects) == 70 and len(ev.subjects) == 10


def test_split_gender_balanced_100():
    ds = _dataset(492, per_subject=1, genders=[MALE] * 256 + [FEMALE] * 236)
    dev, ev = split_by_subject(ds, 1 - 100 / 492, seed=0, balance_gender=True)
    assert ev.gender_counts() == (50, 50)
    assert len(ev.subjects) == 100


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_partitions(n, frac, seed):
    ds = _dataset(n)
    try:
        dev, ev = split_by_subject(ds, frac, seed)
    except SizingError:
        assert round(frac * n) in (0, n)
        return
    assert not set(dev.subjects) & set(ev.subjects)
    assert set(dev.subjects) | set(ev.subjects) == set(ds.subjects)
    assert len(dev) + len(ev) == len(ds)


def test_split_deterministic():
    a = split_by_subject(_dataset(20), 0.8, seed=5)[1].subjects
    b = split_by_subject(_dataset(20), 0.8, seed=5)[1].subjects
    assert a == b


def test_split_too_few_subjects():
    with pytest.raises(SizingError):
        split_by_subject(_dataset(1), 0.5, 0)
    with pytest.raises(SizingError):
        split_by_subject(_dataset(10, genders=[0] * 9 + [1]), 0.6, 0, balance_gender=True)


# -- pairs ---------------------------------------------------------------------

def test_pairs_impostor_only():
    pb = sample_pairs(_dataset(5), 0, 10, seed=0)
    assert len(pb) == 10 and not pb.labels.any()


def test_pairs_exhaustive_small():
    ds = _dataset(2, per_subject=2)
    # brute force over unordered pairs of distinct windows
    gen = imp = 0
    for i, j in itertools.combinations(range(len(ds)), 2):
        if ds.subject_ids[i] == ds.subject_ids[j]:
            gen += 1
        else:
            imp += 1
    assert (gen, imp) == (2, 4)
    pb = sample_pairs(ds, gen, imp, seed=0)
    assert sorted(map(tuple, np.sort(np.stack([pb.idx_a, pb.idx_b], 1), axis=1))) == \
        sorted(itertools.combinations(range(4), 2))


def test_pairs_too_many():
    with pytest.raises(SamplingError, match="only 2"):
        sample_pairs(_dataset(2, per_subject=2), 3, 0, seed=0)
    with pytest.raises(SamplingError):
        sample_pairs(_dataset(1), 1, 1, seed=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(2, 6), st.integers(0, 20), st.integers(0, 20), st.integers(0, 99))
def test_pairs_labels_consistent(n_subj, per, n_gen, n_imp, seed):
    ds = _dataset(n_subj, per)
    n_windows = n_subj * per
    n_genuine_total = n_subj * per * (per - 1) // 2
    n_impostor_total = n_windows * (n_windows - 1) // 2 - n_genuine_total
    pb = sample_pairs(ds, min(n_gen, n_genuine_total), min(n_imp, n_impostor_total), seed)
    same = ds.subject_ids[pb.idx_a] == ds.subject_ids[pb.idx_b]
    np.testing.assert_array_equal(pb.labels, same)
    assert np.all(pb.idx_a != pb.idx_b)
    keys = set(zip(np.minimum(pb.idx_a, pb.idx_b), np.maximum(pb.idx_a, pb.idx_b)))
    assert len(keys) == len(pb)
    for a, b, y in pb:
        assert isinstance(a, IMUWindow) and y == int(a.subject_id == b.subject_id)


def test_pairs_deterministic():
    ds = _dataset(10, 5)
    a, b = sample_pairs(ds, 20, 20, 3), sample_pairs(ds, 20, 20, 3)
    assert np.array_equal(a.idx_a, b.idx_a) and np.array_equal(a.labels, b.labels)


def test_build_windows_dataset():
    streams = generate_synthetic(SyntheticConfig(n_subjects=2, samples_per_subject_per_activity=200))
    ds = build_windows(streams)
    assert ds.values.shape == (2 * 4 * 5, 6, 100)
    assert isinstance(ds[0], IMUWindow)


def test_window_validation():
    with pytest.raises(IntegrityError):
        IMUWindow(np.zeros((5, 100)), "a", 0, 0)
    with pytest.raises(IntegrityError):
        IMUWindow(np.full((6, 100), np.nan), "a", 0, 0)
