"""Inertial signal ingestion, normalisation, windowing, splits and pair sampling.

Signals are handled as ``(6, n)`` float arrays with rows ordered
acc_x, acc_y, acc_z, gyr_x, gyr_y, gyr_z.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .seeding import rng

CHANNELS = ("acc_x", "acc_y", "acc_z", "gyr_x", "gyr_y", "gyr_z")
N_CHANNELS = len(CHANNELS)
WINDOW_LEN = 100
OVERLAP = 0.75
N_ACTIVITIES = 4
MALE, FEMALE = 0, 1


class DataError(ValueError):
    """Base class for data-layer failures."""


class SchemaError(DataError):
    pass


class ParseError(DataError):
    pass


class IntegrityError(DataError):
    pass


class SizingError(DataError):
    pass


class SamplingError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class SignalStream:
    subject_id: str
    gender: int
    activity: int
    sample_rate_hz: float
    channels: np.ndarray
    recording_id: str = "0"

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 2 or ch.shape[0] != N_CHANNELS:
            raise IntegrityError(f"stream needs {N_CHANNELS} channels, got shape {ch.shape}")
        if not self.sample_rate_hz > 0:
            raise IntegrityError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if self.gender not in (MALE, FEMALE):
            raise IntegrityError(f"gender must be 0 or 1, got {self.gender}")
        if not 0 <= self.activity < N_ACTIVITIES:
            raise IntegrityError(f"activity must be in 0..{N_ACTIVITIES - 1}, got {self.activity}")
        object.__setattr__(self, "channels", ch)

    @property
    def length(self) -> int:
        return self.channels.shape[1]

    def with_channels(self, channels: np.ndarray) -> "SignalStream":
        return SignalStream(self.subject_id, self.gender, self.activity,
                            self.sample_rate_hz, channels, self.recording_id)


@dataclass(frozen=True, eq=False)
class IMUWindow:
    values: np.ndarray
    subject_id: str
    gender: int
    activity: int

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] != N_CHANNELS:
            raise IntegrityError(f"window must be {N_CHANNELS} x T, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise IntegrityError("window contains non-finite values")
        object.__setattr__(self, "values", v)


class WindowDataset:
    """Stacked windows of shape ``(N, 6, T)`` with per-window labels.

    Indexing yields :class:`IMUWindow`; the arrays are exposed for batching.
    """

    def __init__(self, values, subject_ids, gender, activity, role: str = "development"):
        self.values = np.ascontiguousarray(values, dtype=np.float32)
        self.subject_ids = np.asarray(subject_ids).astype(str)
        self.gender = np.asarray(gender, dtype=np.int64)
        self.activity = np.asarray(activity, dtype=np.int64)
        self.role = role
        n = len(self.values)
        if self.values.ndim != 3 or (n and self.values.shape[1] != N_CHANNELS):
            raise IntegrityError(f"windows must be (N, {N_CHANNELS}, T), got {self.values.shape}")
        if not (len(self.subject_ids) == len(self.gender) == len(self.activity) == n):
            raise IntegrityError("label arrays do not match window count")

    @classmethod
    def from_windows(cls, windows: Sequence[IMUWindow], role: str = "development") -> "WindowDataset":
        if not windows:
            return cls(np.zeros((0, N_CHANNELS, WINDOW_LEN)), [], [], [], role)
        return cls(
            np.stack([w.values for w in windows]),
            [w.subject_id for w in windows],
            [w.gender for w in windows],
            [w.activity for w in windows],
            role,
        )

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> IMUWindow:
        return IMUWindow(self.values[i], str(self.subject_ids[i]), int(self.gender[i]), int(self.activity[i]))

    def __iter__(self) -> Iterator[IMUWindow]:
        return (self[i] for i in range(len(self)))

    @property
    def subjects(self) -> list[str]:
        return sorted(set(self.subject_ids.tolist()))

    def subject_gender(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for s, g in zip(self.subject_ids.tolist(), self.gender.tolist()):
            out.setdefault(s, g)
        return out

    def gender_counts(self) -> tuple[int, int]:
        """(male, female) subject counts."""
        g = list(self.subject_gender().values())
        return g.count(MALE), g.count(FEMALE)

    def select(self, mask, role: str | None = None) -> "WindowDataset":
        return WindowDataset(self.values[mask], self.subject_ids[mask], self.gender[mask],
                             self.activity[mask], role or self.role)

    def restrict(self, subjects, role: str | None = None) -> "WindowDataset":
        return self.select(np.isin(self.subject_ids, list(subjects)), role)

    def with_values(self, values: np.ndarray) -> "WindowDataset":
        return WindowDataset(values, self.subject_ids, self.gender, self.activity, self.role)


# -- ingestion -----------------------------------------------------------------

DEFAULT_SCHEMA = {name: name for name in ("subject_id", "gender", "activity", "recording_id", *CHANNELS)}


def load_csv(path, schema: Mapping[str, str] | None = None, sample_rate_hz: float = 50.0) -> list[SignalStream]:
    """Read one stream per (subject_id, activity, recording_id) group.

    ``schema`` maps canonical names (``subject_id``, ``gender``, ``activity``,
    ``acc_x`` ... ``gyr_z``, optional ``recording_id``) to CSV header names.
    Groups are returned in order of first appearance.
    """
    cols = dict(DEFAULT_SCHEMA)
    cols.update(schema or {})
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        pos = {h: i for i, h in enumerate(header)}
        for name in ("subject_id", "gender", "activity", *CHANNELS):
            if cols[name] not in pos:
                raise SchemaError(f"{path}: missing column {cols[name]!r}")
        rec_col = pos.get(cols["recording_id"])

        groups: dict[tuple, dict] = {}
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            subject = row[pos[cols["subject_id"]]].strip()
            recording = row[rec_col].strip() if rec_col is not None and rec_col < len(row) else "0"
            try:
                gender = int(row[pos[cols["gender"]]])
                activity = int(row[pos[cols["activity"]]])
            except (ValueError, IndexError):
                raise ParseError(f"{path}: row {rowno}: bad gender/activity label") from None
            key = (subject, activity, recording)
            g = groups.setdefault(key, {"gender": gender, "samples": [[] for _ in CHANNELS], "first_row": rowno})
            if g["gender"] != gender:
                raise IntegrityError(f"{path}: row {rowno}: gender changes within subject {subject!r}")
            for k, name in enumerate(CHANNELS):
                idx = pos[cols[name]]
                cell = row[idx].strip() if idx < len(row) else ""
                if cell == "":
                    continue  # missing sample, caught by the length check below
                try:
                    val = float(cell)
                except ValueError:
                    raise ParseError(f"{path}: row {rowno}: non-numeric {name} value {cell!r}") from None
                g["samples"][k].append(val)

    streams = []
    for (subject, activity, recording), g in groups.items():
        lengths = {len(s) for s in g["samples"]}
        if len(lengths) != 1:
            raise IntegrityError(
                f"{path}: channel length mismatch for subject {subject!r} activity {activity} "
                f"recording {recording!r} (group starting row {g['first_row']}): "
                + ", ".join(f"{n}={len(s)}" for n, s in zip(CHANNELS, g["samples"]))
            )
        streams.append(SignalStream(subject, g["gender"], activity, sample_rate_hz,
                                    np.array(g["samples"]), recording))
    return streams


def write_csv(path, streams: Sequence[SignalStream]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "gender", "activity", "recording_id", *CHANNELS])
        for s in streams:
            for t in range(s.length):
                w.writerow([s.subject_id, s.gender, s.activity, s.recording_id,
                            *(repr(float(v)) for v in s.channels[:, t])])


# -- preprocessing -------------------------------------------------------------

def normalize_stream(stream: SignalStream) -> SignalStream:
    """Z-score each channel of one recording (population std)."""
    ch = stream.channels
    if ch.shape[1] < 2:
        raise IntegrityError(f"need >= 2 samples to normalise, got {ch.shape[1]}")
    mean = ch.mean(axis=1, keepdims=True)
    std = ch.std(axis=1, keepdims=True)
    out = np.zeros_like(ch)
    ok = std[:, 0] > 0
    if not ok.all():
        bad = [CHANNELS[i] for i in np.flatnonzero(~ok)]
        warnings.warn(f"constant channel(s) {bad} in subject {stream.subject_id!r}; mapped to zeros",
                      RuntimeWarning, stacklevel=2)
    out[ok] = (ch[ok] - mean[ok]) / std[ok]
    return stream.with_channels(out)


def window_stride(window_len: int, overlap_ratio: float) -> int:
    if not 0 <= overlap_ratio < 1:
        raise ValueError(f"overlap_ratio must be in [0, 1), got {overlap_ratio}")
    stride = window_len * (1 - overlap_ratio)
    rounded = round(stride)
    if rounded < 1 or abs(stride - rounded) > 1e-9:
        raise ValueError(f"window_len * (1 - overlap) = {stride} is not a positive integer stride")
    return int(rounded)


def segment_windows(stream: SignalStream, window_len: int = WINDOW_LEN,
                    overlap_ratio: float = OVERLAP) -> list[IMUWindow]:
    stride = window_stride(window_len, overlap_ratio)
    n = stream.length
    return [
        IMUWindow(stream.channels[:, s:s + window_len].copy(), stream.subject_id, stream.gender, stream.activity)
        for s in range(0, n - window_len + 1, stride)
    ]


def build_windows(streams: Sequence[SignalStream], window_len: int = WINDOW_LEN,
                  overlap_ratio: float = OVERLAP, normalize: bool = True,
                  role: str = "development") -> WindowDataset:
    """Normalise (per recording) and segment every stream into one dataset."""
    windows: list[IMUWindow] = []
    for s in streams:
        windows.extend(segment_windows(normalize_stream(s) if normalize else s, window_len, overlap_ratio))
    return WindowDataset.from_windows(windows, role)


# -- synthetic corpus ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic gait generator.

    Each channel is a sum of ``n_harmonics`` sinusoids at multiples of a
    fundamental set by the activity. Subjects carry fixed harmonic
    amplitudes/phases per channel; gender scales the fundamental by
    ``1 + gender_frequency_shift`` and tilts harmonic k by
    ``exp(gender_amplitude_shift * (k - 1))``.
    """

    n_subjects: int = 50
    samples_per_subject_per_activity: int = 1000
    sample_rate_hz: float = 50.0
    base_frequency_by_activity: tuple[float, ...] = (1.6, 1.8, 2.0, 2.2)
    gender_frequency_shift: float = 0.05
    gender_amplitude_shift: float = 1.5
    n_harmonics: int = 3
    amplitude_spread: float = 1.0
    phase_spread: float = 1.0
    frequency_spread: float = 0.0
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1 or self.samples_per_subject_per_activity < 1 or self.n_harmonics < 1:
            raise ValueError("n_subjects, samples_per_subject_per_activity and n_harmonics must be positive")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be > 0")
        freqs = tuple(float(f) for f in self.base_frequency_by_activity)
        if len(freqs) != N_ACTIVITIES or min(freqs) <= 0 or len(set(freqs)) != N_ACTIVITIES:
            raise ValueError(f"need {N_ACTIVITIES} distinct positive activity frequencies, got {freqs}")
        object.__setattr__(self, "base_frequency_by_activity", freqs)
        for name in ("amplitude_spread", "phase_spread", "frequency_spread", "noise_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def subject_genders(n_subjects: int, seed: int) -> np.ndarray:
    """Balanced male/female assignment, shuffled by seed."""
    g = np.array([MALE] * (n_subjects // 2) + [FEMALE] * (n_subjects - n_subjects // 2))
    return rng(seed, "gender").permutation(g)


def harmonic_amplitudes(config: SyntheticConfig, subject: int, gender: int) -> np.ndarray:
    """``(6, n_harmonics)`` amplitudes of one subject (gender tilt applied)."""
    r = rng(config.seed, "subject", subject)
    k = np.arange(1, config.n_harmonics + 1)
    amp = (1.0 / k) * np.exp(config.amplitude_spread * r.standard_normal((N_CHANNELS, config.n_harmonics)))
    return amp * np.exp(config.gender_amplitude_shift * gender * (k - 1))


def generate_synthetic(config: SyntheticConfig) -> list[SignalStream]:
    """One un-normalised stream per (subject, activity)."""
    genders = subject_genders(config.n_subjects, config.seed)
    n = config.samples_per_subject_per_activity
    t = np.arange(n) / config.sample_rate_hz
    k = np.arange(1, config.n_harmonics + 1)
    streams = []
    for s in range(config.n_subjects):
        r = rng(config.seed, "subject", s)
        # same draw order as harmonic_amplitudes: amplitudes first
        r.standard_normal((N_CHANNELS, config.n_harmonics))
        phase = config.phase_spread * r.uniform(-math.pi, math.pi, (N_CHANNELS, config.n_harmonics))
        freq_scale = 1.0 + config.frequency_spread * r.standard_normal()
        amp = harmonic_amplitudes(config, s, int(genders[s]))
        f_gender = 1.0 + config.gender_frequency_shift * genders[s]
        for a, base in enumerate(config.base_frequency_by_activity):
            rr = rng(config.seed, "recording", s, a)
            f0 = base * f_gender * freq_scale
            # (6, H, n) harmonic bank summed over harmonics
            arg = 2 * math.pi * f0 * k[None, :, None] * t[None, None, :] + phase[:, :, None]
            x = (amp[:, :, None] * np.sin(arg)).sum(axis=1)
            if config.noise_std > 0:
                x = x + config.noise_std * rr.standard_normal(x.shape)
            streams.append(SignalStream(f"S{s:03d}", int(genders[s]), a, config.sample_rate_hz, x, "0"))
    return streams


# -- splits and pairs ----------------------------------------------------------

def split_by_subject(dataset: WindowDataset, dev_fraction: float, seed: int, balance_gender: bool = False,
                     roles: tuple[str, str] = ("development", "evaluation")) -> tuple[WindowDataset, WindowDataset]:
    """Partition subjects at random into two disjoint datasets.

    With ``balance_gender`` the second part holds equal numbers of male and
    female subjects.
    """
    if not 0 < dev_fraction < 1:
        raise SizingError(f"dev_fraction must be in (0, 1), got {dev_fraction}")
    subjects = dataset.subjects
    n = len(subjects)
    n_dev = int(round(dev_fraction * n))
    n_eval = n - n_dev
    if n < 2 or n_dev < 1 or n_eval < 1:
        raise SizingError(f"cannot split {n} subjects with dev_fraction {dev_fraction}")
    r = rng(seed, "split")
    if balance_gender:
        sg = dataset.subject_gender()
        males = [s for s in subjects if sg[s] == MALE]
        females = [s for s in subjects if sg[s] == FEMALE]
        if n_eval % 2 or len(males) < n_eval // 2 or len(females) < n_eval // 2:
            raise SizingError(
                f"cannot draw a gender-balanced evaluation set of {n_eval} subjects "
                f"from {len(males)} male / {len(females)} female"
            )
        eval_subjects = list(r.choice(males, n_eval // 2, replace=False)) + \
            list(r.choice(females, n_eval // 2, replace=False))
    else:
        eval_subjects = list(r.choice(subjects, n_eval, replace=False))
    eval_set = set(eval_subjects)
    dev_subjects = [s for s in subjects if s not in eval_set]
    return dataset.restrict(dev_subjects, roles[0]), dataset.restrict(sorted(eval_set), roles[1])


@dataclass(eq=False)
class PairBatch:
    """Window pairs referenced by index into ``dataset``; label 1 = same subject."""

    dataset: WindowDataset
    idx_a: np.ndarray
    idx_b: np.ndarray
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        self.idx_a = np.asarray(self.idx_a, dtype=np.int64)
        self.idx_b = np.asarray(self.idx_b, dtype=np.int64)
        same = self.dataset.subject_ids[self.idx_a] == self.dataset.subject_ids[self.idx_b]
        if self.labels is None:
            self.labels = same.astype(np.int64)
        else:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if not np.array_equal(self.labels, same.astype(np.int64)):
                raise IntegrityError("pair labels disagree with subject identity")

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        for a, b, y in zip(self.idx_a, self.idx_b, self.labels):
            yield self.dataset[a], self.dataset[b], int(y)

    @property
    def pairs(self) -> list[tuple[IMUWindow, IMUWindow, int]]:
        return list(self)


def _draw_unique(r, n_wanted, total, enumerate_fn, propose_fn, what):
    if n_wanted > total:
        raise SamplingError(f"requested {n_wanted} {what} pairs but only {total} exist")
    if n_wanted == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if 2 * n_wanted >= total:
        allp = enumerate_fn()
        return allp[r.choice(len(allp), n_wanted, replace=False)]
    seen: dict[tuple[int, int], None] = {}
    while len(seen) < n_wanted:
        for i, j in propose_fn(2 * (n_wanted - len(seen)) + 16):
            key = (min(i, j), max(i, j))
            if key not in seen:
                seen[key] = None
                if len(seen) == n_wanted:
                    break
    return np.array(list(seen), dtype=np.int64)


def sample_pairs(dataset: WindowDataset, n_genuine: int, n_impostor: int, seed: int) -> PairBatch:
    """Draw distinct unordered genuine and impostor pairs, shuffled together."""
    subjects = dataset.subjects
    if len(subjects) < 2:
        raise SamplingError(f"need >= 2 subjects, dataset has {len(subjects)}")
    by_subject = [np.flatnonzero(dataset.subject_ids == s) for s in subjects]
    sizes = np.array([len(ix) for ix in by_subject])
    n_gen_total = int((sizes * (sizes - 1) // 2).sum())
    n = len(dataset)
    n_imp_total = n * (n - 1) // 2 - n_gen_total
    if n_genuine > 0 and n_gen_total == 0:
        raise SamplingError("genuine pairs requested but no subject has >= 2 windows")
    r = rng(seed, "pairs")
    sid = dataset.subject_ids

    def all_genuine():
        out = [(ix[i], ix[j]) for ix in by_subject for i in range(len(ix)) for j in range(i + 1, len(ix))]
        return np.array(out, dtype=np.int64)

    weights = sizes * (sizes - 1) / 2.0
    weights = weights / weights.sum() if weights.sum() else weights

    def propose_genuine(m):
        subj = r.choice(len(by_subject), m, p=weights)
        for s in subj:
            i, j = r.choice(by_subject[s], 2, replace=False)
            yield int(i), int(j)

    def all_impostor():
        ii, jj = np.triu_indices(n, k=1)
        keep = sid[ii] != sid[jj]
        return np.stack([ii[keep], jj[keep]], axis=1)

    def propose_impostor(m):
        ii = r.integers(0, n, m)
        jj = r.integers(0, n, m)
        for i, j in zip(ii, jj):
            if sid[i] != sid[j]:
                yield int(i), int(j)

    gen = _draw_unique(r, n_genuine, n_gen_total, all_genuine, propose_genuine, "genuine")
    imp = _draw_unique(r, n_impostor, n_imp_total, all_impostor, propose_impostor, "impostor")
    both = np.concatenate([gen.reshape(-1, 2), imp.reshape(-1, 2)])
    labels = np.concatenate([np.ones(len(gen), np.int64), np.zeros(len(imp), np.int64)])
    order = r.permutation(len(both))
    both, labels = both[order], labels[order]
    return PairBatch(dataset, both[:, 0], both[:, 1], labels)
