"""Waveform handling: beat detection, PPG fiducials, per-beat features.

Index conventions (all integer sample positions into the PPG array):

- ``max_slope`` for beat n is the steepest upslope strictly between R
  peaks n and n+1.
- The foot of beat n is the PPG minimum between the previous beat's max
  slope and this beat's (between ``r_peaks[0]`` and the first max slope
  for beat 0).
- The systolic peak is the first local maximum after the foot; the
  dicrotic notch is the most prominent local minimum between the systolic
  peak and the next foot; the secondary peak is the first local maximum
  after the notch.

With m detected R peaks, at most m-2 beats yield complete features: the
last two lack a following foot.  Beats whose fiducials cannot be located
are skipped and logged rather than failing the whole record.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
from scipy.signal import find_peaks

from .errors import (
    DataError,
    DegenerateFeature,
    FiducialNotFound,
    InsufficientBeats,
    NoBeatsDetected,
    ShapeMismatch,
)

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("ptt_s", "hr", "ri", "st", "up_time", "sv", "dv")
NUM_FEATURES = len(FEATURE_NAMES)


@dataclass(eq=False)
class WaveformRecord:
    """Synchronously sampled ECG and PPG traces."""

    ecg: np.ndarray
    ppg: np.ndarray
    sample_rate: float
    subject_id: str = ""
    session_label: str = ""

    def __post_init__(self):
        self.ecg = np.asarray(self.ecg, dtype=np.float64)
        self.ppg = np.asarray(self.ppg, dtype=np.float64)
        if self.ecg.ndim != 1 or self.ppg.ndim != 1:
            raise ShapeMismatch("waveforms must be 1-D")
        if len(self.ecg) != len(self.ppg):
            raise ShapeMismatch(
                f"ecg has {len(self.ecg)} samples, ppg has {len(self.ppg)}"
            )
        if not self.sample_rate > 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.ecg)) / self.sample_rate


@dataclass(eq=False)
class BeatFiducials:
    """Sample indices of one beat's landmarks."""

    beat: int
    r_peak: int
    max_slope: int
    foot: int
    systolic_peak: int
    dicrotic_notch: int
    secondary_peak: int
    next_foot: int


@dataclass(eq=False)
class FiducialScan:
    """Located beats plus (index, reason) entries for the skipped ones."""

    beats: list[BeatFiducials]
    skipped: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.beats)

    def __iter__(self) -> Iterator[BeatFiducials]:
        return iter(self.beats)


@dataclass(eq=False)
class FeatureSequence:
    """Per-beat feature rows in FEATURE_NAMES column order."""

    times: np.ndarray  # (k,) seconds, the R-peak time of each kept beat
    values: np.ndarray  # (k, NUM_FEATURES)
    skipped: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != NUM_FEATURES:
            raise ShapeMismatch(f"feature values must be (k, {NUM_FEATURES})")
        if len(self.times) != len(self.values):
            raise ShapeMismatch("times and values must have equal length")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(eq=False)
class BpSequence:
    """Aligned blood-pressure targets, columns (SBP, DBP, MBP) in mmHg."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != 3:
            raise ShapeMismatch("bp values must be (n, 3)")
        if len(self.times) != len(self.values):
            raise ShapeMismatch("times and values must have equal length")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(eq=False)
class FeatureStats:
    """Column-wise mean and spread used for z-scoring."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeMismatch("mean and std must be equal-length vectors")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureStats":
        return cls(mean=np.asarray(data["mean"]), std=np.asarray(data["std"]))


# --- beat detection ----------------------------------------------------------


def detect_ecg_r_peaks(ecg, sample_rate: float) -> np.ndarray:
    """Locate R peaks: squared-derivative energy, thresholded, refined to
    the raw-signal maximum.  Returns sorted sample indices.

    Raises :class:`NoBeatsDetected` on flat input or when fewer than two
    peaks survive.
    """
    x = np.asarray(ecg, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatch("ecg must be 1-D")
    if not sample_rate > 0:
        raise DataError(f"sample_rate must be positive, got {sample_rate}")
    if not np.isfinite(x).all():
        raise DataError("ecg contains non-finite samples")
    if len(x) < 2 or np.ptp(x) == 0.0:
        raise NoBeatsDetected("ecg is flat")

    energy = np.diff(x) ** 2
    window = max(1, int(round(0.15 * sample_rate)))
    kernel = np.ones(window) / window
    smooth = np.convolve(energy, kernel, mode="same")
    min_distance = max(1, int(round(0.25 * sample_rate)))
    threshold = 0.25 * smooth.max()
    # zero-pad so an energy hump touching either record edge still counts;
    # find_peaks never reports a boundary sample
    padded = np.concatenate(([0.0], smooth, [0.0]))
    coarse, _ = find_peaks(padded, height=threshold, distance=min_distance)
    coarse = np.clip(coarse - 1, 0, len(smooth) - 1)
    if len(coarse) < 2:
        raise NoBeatsDetected(f"found {len(coarse)} candidate beats, need at least 2")

    # The energy peak sits on the slope; snap to the raw maximum nearby.
    radius = max(1, int(round(0.1 * sample_rate)))
    refined = []
    for idx in coarse:
        lo = max(0, idx - radius)
        hi = min(len(x), idx + radius + 1)
        refined.append(lo + int(np.argmax(x[lo:hi])))
    peaks = []
    for idx in sorted(set(refined)):
        if peaks and idx - peaks[-1] < min_distance:
            continue
        peaks.append(idx)
    if len(peaks) < 2:
        raise NoBeatsDetected("refinement merged candidates below 2 beats")
    return np.asarray(peaks, dtype=np.int64)


def detect_ppg_fiducials(ppg, sample_rate: float, r_peaks) -> FiducialScan:
    """Locate per-beat PPG landmarks relative to the given R peaks."""
    y = np.asarray(ppg, dtype=np.float64)
    if y.ndim != 1:
        raise ShapeMismatch("ppg must be 1-D")
    if not np.isfinite(y).all():
        raise DataError("ppg contains non-finite samples")
    peaks = np.asarray(r_peaks, dtype=np.int64)
    if peaks.ndim != 1 or len(peaks) < 2:
        raise InsufficientBeats("need at least two R peaks")
    if (np.diff(peaks) <= 0).any():
        raise DataError("r_peaks must be strictly increasing")
    if peaks[0] < 0 or peaks[-1] >= len(y):
        raise DataError("r_peaks fall outside the ppg record")

    slope = np.diff(y)
    m = len(peaks)

    # Max upslope per RR interval, then the foot preceding each.
    max_slopes = np.empty(m - 1, dtype=np.int64)
    for n in range(m - 1):
        lo, hi = peaks[n], peaks[n + 1]
        seg = slope[lo:hi]
        if len(seg) == 0:
            raise DataError(f"beats {n} and {n + 1} coincide")
        max_slopes[n] = lo + int(np.argmax(seg))
    feet = np.empty(m - 1, dtype=np.int64)
    feet[0] = peaks[0] + int(np.argmin(y[peaks[0]:max_slopes[0] + 1]))
    for n in range(1, m - 1):
        lo, hi = max_slopes[n - 1], max_slopes[n]
        feet[n] = lo + int(np.argmin(y[lo:hi + 1]))

    beats: list[BeatFiducials] = []
    skipped: list[tuple[int, str]] = []
    for n in range(m - 2):
        try:
            beats.append(_locate_beat(y, n, peaks[n], max_slopes[n],
                                      feet[n], feet[n + 1]))
        except FiducialNotFound as exc:
            logger.info("beat %d skipped: %s", n, exc.reason)
            skipped.append((n, exc.reason))
    return FiducialScan(beats=beats, skipped=skipped)


def _locate_beat(y: np.ndarray, n: int, r_peak: int, max_slope: int,
                 foot: int, next_foot: int) -> BeatFiducials:
    segment = y[foot:next_foot + 1]
    highs, _ = find_peaks(segment)
    if len(highs) == 0:
        raise FiducialNotFound(n, "no systolic peak between feet")
    systolic = foot + int(highs[0])

    notch_seg = y[systolic:next_foot + 1]
    lows, props = find_peaks(-notch_seg, prominence=0.0)
    if len(lows) == 0:
        raise FiducialNotFound(n, "no dicrotic notch after systolic peak")
    notch = systolic + int(lows[int(np.argmax(props["prominences"]))])

    tail = y[notch:next_foot + 1]
    secondary, _ = find_peaks(tail)
    if len(secondary) == 0:
        raise FiducialNotFound(n, "no secondary peak after notch")
    return BeatFiducials(beat=n, r_peak=int(r_peak), max_slope=int(max_slope),
                         foot=int(foot), systolic_peak=int(systolic),
                         dicrotic_notch=int(notch),
                         secondary_peak=int(notch + int(secondary[0])),
                         next_foot=int(next_foot))


# --- feature extraction ---------------------------------------------------------


def extract_features(ecg, ppg, sample_rate: float,
                     r_peaks: Optional[np.ndarray] = None) -> FeatureSequence:
    """Per-beat feature rows from a synchronized ECG/PPG pair.

    Columns, in order: pulse transit time (R peak to max upslope,
    seconds), heart rate (1/min from the RR interval), reflection index
    (secondary over systolic amplitude, both foot-referenced), systolic
    time span (foot to notch, seconds), upstroke time (foot to systolic
    peak, seconds), and the foot-referenced systolic and diastolic areas
    (trapezoidal, foot-to-notch and notch-to-next-foot; they sum exactly
    to the whole-beat area).
    """
    y = np.asarray(ppg, dtype=np.float64)
    if r_peaks is None:
        r_peaks = detect_ecg_r_peaks(ecg, sample_rate)
    peaks = np.asarray(r_peaks, dtype=np.int64)
    if len(peaks) < 3:
        raise InsufficientBeats(
            f"need at least 3 R peaks for one complete beat, got {len(peaks)}"
        )
    scan = detect_ppg_fiducials(y, sample_rate, peaks)
    skipped = list(scan.skipped)
    dt = 1.0 / sample_rate

    times = []
    rows = []
    for fid in scan.beats:
        base = y[fid.foot]
        amplitude = y[fid.systolic_peak] - base
        if amplitude <= 0:
            logger.info("beat %d skipped: non-positive systolic amplitude", fid.beat)
            skipped.append((fid.beat, "non-positive systolic amplitude"))
            continue
        rr = (peaks[fid.beat + 1] - peaks[fid.beat]) * dt
        sv = float(np.trapezoid(y[fid.foot:fid.dicrotic_notch + 1] - base, dx=dt))
        dv = float(np.trapezoid(y[fid.dicrotic_notch:fid.next_foot + 1] - base, dx=dt))
        rows.append([
            (fid.max_slope - fid.r_peak) * dt,
            60.0 / rr,
            (y[fid.secondary_peak] - base) / amplitude,
            (fid.dicrotic_notch - fid.foot) * dt,
            (fid.systolic_peak - fid.foot) * dt,
            sv,
            dv,
        ])
        times.append(peaks[fid.beat] * dt)
    if not rows:
        raise InsufficientBeats("no beat produced a complete feature row")
    return FeatureSequence(times=np.asarray(times),
                           values=np.asarray(rows), skipped=skipped)


# --- normalization ----------------------------------------------------------------


def zscore_apply(values, stats: FeatureStats) -> np.ndarray:
    """Apply stored column stats; zero spread in any column is an error."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != len(stats.mean):
        raise ShapeMismatch(f"values {x.shape} vs stats width {len(stats.mean)}")
    zero = np.flatnonzero(stats.std == 0.0)
    if len(zero):
        idx = int(zero[0])
        name = FEATURE_NAMES[idx] if idx < NUM_FEATURES else ""
        raise DegenerateFeature(idx, name)
    return (x - stats.mean) / stats.std


def normalize_features(values, stats: Optional[FeatureStats] = None):
    """Z-score feature columns; returns ``(scaled, stats)``.

    Without ``stats`` the population mean/std of ``values`` is used;
    :class:`DegenerateFeature` names the first constant column.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch("values must be 2-D")
    if len(x) == 0:
        raise DataError("cannot normalize an empty feature matrix")
    if stats is None:
        stats = FeatureStats(mean=x.mean(axis=0), std=x.std(axis=0))
    return zscore_apply(x, stats), stats
