"""Recordings, windowing, labelling, subject selection and leave-one-subject-out splits.

Also provides :func:`generate_synthetic`, a deterministic stand-in for a
clinical corpus: per-subject background rhythms with a subject-specific
amplitude/phase signature, plus 3 Hz spike-and-wave bursts on a fixed channel
subset during seizure blocks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .montage import CHANNELS, N_CHANNELS, nearest_channels

log = logging.getLogger(__name__)

SAMPLING_RATE = 250.0
WINDOW = 250
OVERLAP = 0.5
SEIZURE_CHANNEL_THRESHOLD = 12  # strictly more channels than this => seizure state
MIN_SEIZURE_SECONDS = 250.0


class DatasetError(ValueError):
    pass


class RecordingTooShort(DatasetError):
    pass


class SamplingRateError(DatasetError):
    pass


class AnnotationError(DatasetError):
    pass


class LeakageError(AssertionError):
    """A test subject's windows reached the training set."""


@dataclass(frozen=True)
class Interval:
    """Channels in seizure over time steps ``[start, end)``."""

    start: int
    end: int
    channels: tuple[str, ...]


@dataclass
class Recording:
    subject: int
    rate: float
    samples: np.ndarray  # [T, 22] microvolts
    annotations: list[Interval] = field(default_factory=list)
    channels: tuple[str, ...] = CHANNELS

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.channels = tuple(self.channels)
        self.validate()

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def validate(self) -> None:
        if self.channels != CHANNELS:
            raise DatasetError(f"subject {self.subject}: channel labels differ from the canonical montage")
        if self.samples.ndim != 2 or self.samples.shape[1] != N_CHANNELS:
            raise DatasetError(f"subject {self.subject}: samples must be [T, {N_CHANNELS}], got {self.samples.shape}")
        known = set(CHANNELS)
        for iv in self.annotations:
            bad = [c for c in iv.channels if c not in known]
            if bad:
                raise AnnotationError(f"subject {self.subject}: annotation names unknown channel(s) {bad}")
            if not 0 <= iv.start <= iv.end <= self.n_samples:
                raise AnnotationError(
                    f"subject {self.subject}: annotation [{iv.start}, {iv.end}) outside 0..{self.n_samples}"
                )

    def seizure_mask(self) -> np.ndarray:
        """Boolean ``[T, 22]``: channel in seizure at each time step."""
        mask = np.zeros(self.samples.shape, dtype=bool)
        for iv in self.annotations:
            cols = [CHANNELS.index(c) for c in iv.channels]
            mask[iv.start : iv.end, cols] = True
        return mask

    def seizure_counts(self) -> np.ndarray:
        """Number of channels in seizure at each time step."""
        return self.seizure_mask().sum(axis=1)

    def seizure_seconds(self) -> float:
        return float((self.seizure_counts() > SEIZURE_CHANNEL_THRESHOLD).sum()) / self.rate

    def __eq__(self, other) -> bool:
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.subject == other.subject
            and self.rate == other.rate
            and self.channels == other.channels
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
            and self.annotations == other.annotations
        )


@dataclass
class EEGWindow:
    values: np.ndarray  # [M, N]
    label: int
    subject: int
    start: int = 0


@dataclass
class WindowSet:
    """Stacked windows: ``X`` is ``[n, M, N]``."""

    X: np.ndarray
    y: np.ndarray
    subjects: np.ndarray
    starts: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def select(self, mask_or_idx) -> "WindowSet":
        return WindowSet(self.X[mask_or_idx], self.y[mask_or_idx], self.subjects[mask_or_idx], self.starts[mask_or_idx])

    def for_subjects(self, subjects: Iterable[int]) -> "WindowSet":
        return self.select(np.isin(self.subjects, list(subjects)))


def stack_windows(windows: Sequence[EEGWindow]) -> WindowSet:
    if not windows:
        raise DatasetError("no windows to stack")
    return WindowSet(
        np.stack([w.values for w in windows]),
        np.array([w.label for w in windows], dtype=np.int64),
        np.array([w.subject for w in windows], dtype=np.int64),
        np.array([w.start for w in windows], dtype=np.int64),
    )


def window_count(n_samples: int, length: int = WINDOW, stride: int = WINDOW // 2) -> int:
    if n_samples < length:
        return 0
    return (n_samples - length) // stride + 1


def label_window(counts: np.ndarray, length: int | None = None) -> int:
    """1 when more than 12 channels are in seizure for at least half the window.

    ``counts`` holds the number of seizure channels at each time step of the
    window.  An exact half/half split labels the window as seizure.
    """
    counts = np.asarray(counts)
    if counts.ndim != 1 or counts.size == 0 or (length is not None and counts.size != length):
        raise AnnotationError(
            f"annotation span covers {counts.size} steps, window needs {length if length is not None else 'at least 1'}"
        )
    hits = int((counts > SEIZURE_CHANNEL_THRESHOLD).sum())
    return int(2 * hits >= counts.size)


def window_signal(
    rec: Recording,
    length: int = WINDOW,
    overlap: float = OVERLAP,
    expected_rate: float | None = SAMPLING_RATE,
) -> list[EEGWindow]:
    """Cut a recording into overlapping windows; trailing partial samples are dropped."""
    if expected_rate is not None and rec.rate != expected_rate:
        raise SamplingRateError(
            f"subject {rec.subject}: sampling rate {rec.rate} Hz, expected {expected_rate} Hz (not resampled)"
        )
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    if rec.n_samples < length:
        raise RecordingTooShort(f"subject {rec.subject}: {rec.n_samples} samples, window needs {length}")
    stride = max(1, int(round(length * (1.0 - overlap))))
    counts = rec.seizure_counts()
    out = []
    for k in range(window_count(rec.n_samples, length, stride)):
        s = k * stride
        out.append(
            EEGWindow(rec.samples[s : s + length], label_window(counts[s : s + length], length), rec.subject, s)
        )
    return out


def make_window_set(recordings: Iterable[Recording], length: int = WINDOW, overlap: float = OVERLAP,
                    expected_rate: float | None = SAMPLING_RATE) -> WindowSet:
    windows: list[EEGWindow] = []
    for rec in recordings:
        windows.extend(window_signal(rec, length, overlap, expected_rate))
    return stack_windows(windows)


def select_subjects(recordings: Iterable[Recording], min_seconds: float = MIN_SEIZURE_SECONDS) -> list[int]:
    """Subjects with strictly more than ``min_seconds`` of seizure state."""
    return [r.subject for r in recordings if r.seizure_seconds() > min_seconds]


def class_balance(ws: WindowSet) -> dict[int, tuple[int, int]]:
    """Subject -> (normal windows, seizure windows)."""
    out = {}
    for s in np.unique(ws.subjects):
        y = ws.y[ws.subjects == s]
        out[int(s)] = (int((y == 0).sum()), int((y == 1).sum()))
    return out


# --------------------------------------------------------------------------
# leave-one-subject-out
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Fold:
    test_subject: int
    train_subjects: tuple[int, ...]

    @property
    def class_index(self) -> dict[int, int]:
        """Training subject id -> dense patient class."""
        return {s: i for i, s in enumerate(self.train_subjects)}

    @property
    def num_patients(self) -> int:
        return len(self.train_subjects)

    def patient_labels(self, subjects: np.ndarray) -> np.ndarray:
        idx = self.class_index
        return np.array([idx[int(s)] for s in subjects], dtype=np.int64)


@dataclass(frozen=True)
class SplitPlan:
    folds: tuple[Fold, ...]

    def __len__(self) -> int:
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)

    def fold_for(self, subject: int) -> Fold:
        for f in self.folds:
            if f.test_subject == subject:
                return f
        raise KeyError(f"no fold holds out subject {subject}")


def build_loo_splits(subjects: Iterable[int]) -> SplitPlan:
    subjects = sorted(set(int(s) for s in subjects))
    if len(subjects) < 3:
        raise DatasetError(f"leave-one-subject-out needs at least 3 subjects, got {len(subjects)}")
    return SplitPlan(tuple(Fold(s, tuple(t for t in subjects if t != s)) for s in subjects))


def assert_no_leakage(fold: Fold, train: WindowSet, test: WindowSet | None = None) -> None:
    """Raise :class:`LeakageError` if the training windows touch the test subject."""
    seen = set(int(s) for s in np.unique(train.subjects))
    if fold.test_subject in seen:
        raise LeakageError(f"test subject {fold.test_subject} has windows in the training set")
    stray = seen - set(fold.train_subjects)
    if stray:
        raise LeakageError(f"training windows from subjects outside the fold: {sorted(stray)}")
    if test is not None:
        tseen = set(int(s) for s in np.unique(test.subjects))
        if tseen != {fold.test_subject}:
            raise LeakageError(f"test windows come from subjects {sorted(tseen)}, expected {fold.test_subject}")


def split_fold(ws: WindowSet, fold: Fold) -> tuple[WindowSet, WindowSet]:
    train = ws.for_subjects(fold.train_subjects)
    test = ws.for_subjects([fold.test_subject])
    assert_no_leakage(fold, train, test)
    return train, test


# --------------------------------------------------------------------------
# synthetic EEG
# --------------------------------------------------------------------------

DEFAULT_SEIZURE_CHANNELS: tuple[str, ...] = tuple(nearest_channels("T5", 13))


def spike_wave(t: np.ndarray, freq: float) -> np.ndarray:
    """Unit-scale spike-and-wave complex repeating at ``freq`` Hz."""
    phase = (t * freq) % 1.0
    spike = -np.exp(-0.5 * ((phase - 0.08) / 0.025) ** 2)
    wave = 0.45 * np.sin(2 * np.pi * (phase - 0.15)) * (phase > 0.15)
    return 1.6 * spike + wave


def generate_synthetic(
    n_subjects: int,
    seconds: float,
    seed: int,
    *,
    rate: float = SAMPLING_RATE,
    seizure_channels: Sequence[str] = DEFAULT_SEIZURE_CHANNELS,
    blocks: int = 2,
    background_uv: float = 10.0,
    seizure_uv: float = 60.0,
    noise_uv: float = 4.0,
) -> list[Recording]:
    """Deterministic synthetic recordings with exact seizure annotations.

    Each recording is cut into ``blocks`` equal segments, alternating normal
    and seizure and starting with a normal one, so an even ``blocks`` gives
    half normal and half seizure.
    """
    seizure_channels = tuple(c.upper() for c in seizure_channels)
    if len(seizure_channels) <= SEIZURE_CHANNEL_THRESHOLD:
        log.warning("only %d seizure channels: windows will never be labelled seizure", len(seizure_channels))
    if blocks < 2:
        raise ValueError("blocks must be >= 2")
    T = int(round(seconds * rate))
    t = np.arange(T) / rate
    cols = [CHANNELS.index(c) for c in seizure_channels]
    root = np.random.SeedSequence(seed)
    recs = []
    for subject, child in enumerate(root.spawn(n_subjects)):
        rng = np.random.default_rng(child)
        gain = rng.uniform(0.7, 1.3) * rng.uniform(0.6, 1.4, size=N_CHANNELS)
        bands = [(rng.uniform(8, 12), 1.2), (rng.uniform(4, 7), 0.8), (rng.uniform(15, 25), 0.4)]
        x = np.zeros((T, N_CHANNELS))
        for freq, amp in bands:
            phase = rng.uniform(0, 2 * np.pi, size=N_CHANNELS)
            x += amp * np.sin(2 * np.pi * freq * t[:, None] + phase)
        x *= background_uv * gain
        x += noise_uv * rng.standard_normal((T, N_CHANNELS))

        annotations = []
        edges = np.linspace(0, T, blocks + 1).round().astype(int)
        sz_freq = rng.uniform(2.7, 3.3)
        sz_gain = rng.uniform(0.8, 1.2)
        for start, end in zip(edges[1::2], edges[2::2]):
            burst = spike_wave(t[start:end], sz_freq) * seizure_uv * sz_gain
            x[start:end, cols] += burst[:, None] * gain[cols]
            annotations.append(Interval(int(start), int(end), seizure_channels))
        recs.append(Recording(subject, float(rate), x, annotations))
    return recs
