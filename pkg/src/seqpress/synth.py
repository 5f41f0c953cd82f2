"""Synthetic cohorts with known ground truth.

Feature cohorts: a stationary AR(1) latent state is mixed into feature
space through orthonormal columns, warped by a monotone elementwise map,
and observed with isotropic noise; blood pressure is an affine read-out
of the same latent state.  Because the mixing is orthonormal and the
warp invertible, the best memoryless predictor (conditioning on one
feature row only) has a closed-form error, exposed by
:class:`MemorylessOracle`.  Any model that exploits the temporal
coupling can beat that floor; nothing that ignores it can.

Waveform cohorts: ECG impulses and two-component PPG pulses built from
explicit per-beat shape parameters.  Ground-truth per-beat features are
measured on a 16x oversampled grid with landmark searches written
independently of the detection code, so the extraction pipeline can be
judged against them.

Session effects: a fixed-direction baseline drift grows linearly with
the session index, and subjects re-drawn at later sessions keep their
identity (maps depend on seed and subject only, never on the session).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng
from .errors import DataError
from .signals import NUM_FEATURES, BpSequence, FeatureSequence, WaveformRecord
from .training import SequenceRecord

# Per-column offset and scale so generated rows live on a plausible
# scale (positive transit times, heart rate near 72, ...).  The affine
# column map is invertible, so it changes nothing about what a model can
# recover; the oracle undoes it before conditioning.
FEATURE_MEANS = np.array([0.30, 72.0, 0.45, 0.30, 0.16, 0.28, 0.18])
FEATURE_SCALES = np.array([0.04, 8.0, 0.10, 0.04, 0.02, 0.05, 0.035])

# One fixed drift direction per channel (SBP, DBP, MBP): a shared
# direction keeps the frozen-model error strictly increasing with the
# session index instead of cancelling between channels.
DRIFT_DIRECTION = np.array([1.0, 0.7, 0.85])

BASE_PRESSURE = np.array([120.0, 70.0, 87.0])
COHORT_SHIFT_DIRECTION = np.array([1.0, 0.6, 0.8])

ORDER_MARGIN = 0.5  # mmHg, smallest enforced gap between adjacent channels


@dataclass(eq=False)
class SynthConfig:
    """Knobs for both cohort generators; defaults give a mild, solvable task."""

    num_subjects: int = 4
    samples_per_subject: int = 1200
    latent_dim: int = 3
    temporal_coupling: float = 0.9  # AR(1) coefficient of the latent state
    observation_noise: float = 1.0  # pre-warp feature noise (sigma)
    bp_noise: float = 0.0  # additive target noise, mmHg
    feature_warp: float = 0.25  # strength of the monotone tanh warp
    subject_spread: float = 0.0  # per-subject map perturbation and offset
    cohort_shift: float = 0.0  # common baseline shift, mmHg along a fixed direction
    session_drift: float = 0.0  # baseline drift per unit of session index
    beat_interval_s: float = 0.8
    # waveform generation
    beats_per_record: int = 40  # complete feature beats; two extra R peaks are added
    waveform_sample_rate: float = 500.0
    waveform_noise: float = 0.0
    rr_jitter: float = 0.04
    ptt_base_s: float = 0.20
    ptt_jitter_s: float = 0.015
    # emitted pressures are clipped into these windows, per channel
    sbp_range: tuple = (70.0, 200.0)
    dbp_range: tuple = (40.0, 130.0)
    mbp_range: tuple = (50.0, 160.0)

    def __post_init__(self):
        if self.num_subjects < 1:
            raise DataError("num_subjects must be >= 1")
        if self.samples_per_subject < 1:
            raise DataError("samples_per_subject must be >= 1")
        if not 1 <= self.latent_dim <= NUM_FEATURES:
            raise DataError(f"latent_dim must be in [1, {NUM_FEATURES}]")
        if not 0.0 <= self.temporal_coupling < 1.0:
            raise DataError("temporal_coupling must be in [0, 1)")
        if self.observation_noise < 0 or self.bp_noise < 0:
            raise DataError("noise scales must be >= 0")
        if self.feature_warp < 0:
            raise DataError("feature_warp must be >= 0")
        if self.beats_per_record < 1:
            raise DataError("beats_per_record must be >= 1")
        if not self.waveform_sample_rate > 0:
            raise DataError("waveform_sample_rate must be positive")
        for name in ("sbp_range", "dbp_range", "mbp_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise DataError(f"{name} must satisfy lo < hi")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


def _subject_name(index: int) -> str:
    return f"s{index:02d}"


def enforce_pressure_order(bp: np.ndarray, config: SynthConfig) -> np.ndarray:
    """Clip channels into their configured windows, then restore strict
    SBP > MBP > DBP wherever a tail draw broke it.

    Columns are (SBP, DBP, MBP).  Rows that already satisfy both
    constraints pass through bitwise unchanged; the fix-up is one-sided
    (pull DBP down, pin MBP between its neighbors), so it never perturbs
    the bulk of a cohort.  Ordering wins over the range floor if a
    configuration makes the two collide.
    """
    out = np.array(bp, dtype=np.float64)
    for ch, (lo, hi) in enumerate((config.sbp_range, config.dbp_range,
                                   config.mbp_range)):
        np.clip(out[:, ch], lo, hi, out=out[:, ch])
    sbp, dbp, mbp = out[:, 0], out[:, 1], out[:, 2]
    np.minimum(dbp, sbp - 2.0 * ORDER_MARGIN, out=dbp)
    np.clip(mbp, dbp + ORDER_MARGIN, sbp - ORDER_MARGIN, out=mbp)
    return out


def orthonormal_columns(g: np.ndarray) -> np.ndarray:
    """Column-orthonormalize with modified Gram-Schmidt (two passes).

    Plain numpy arithmetic only, so the result is reproducible across
    BLAS/LAPACK builds, which a factorization routine would not be.
    """
    q = np.array(g, dtype=np.float64)
    rows, cols = q.shape
    if cols > rows:
        raise DataError("cannot orthonormalize more columns than rows")
    for j in range(cols):
        v = q[:, j].copy()
        for _ in range(2):
            for i in range(j):
                v -= (q[:, i] @ v) * q[:, i]
        norm = np.sqrt(v @ v)
        if norm < 1e-10:
            raise DataError("degenerate direction draw while building mixing map")
        q[:, j] = v / norm
    return q


def warp_forward(v: np.ndarray, strength: float) -> np.ndarray:
    """Monotone elementwise warp ``v + strength * tanh(v)``."""
    return v + strength * np.tanh(v)


def warp_inverse(u: np.ndarray, strength: float) -> np.ndarray:
    """Invert :func:`warp_forward` by Newton iteration (quadratic, exact
    to float precision; the map's slope is at least 1 everywhere)."""
    if strength == 0.0:
        return np.array(u, dtype=np.float64)
    v = np.array(u, dtype=np.float64)
    for _ in range(60):
        t = np.tanh(v)
        residual = v + strength * t - u
        v -= residual / (1.0 + strength * (1.0 - t * t))
        if np.abs(residual).max() < 1e-13:
            break
    return v


@dataclass(eq=False)
class MemorylessOracle:
    """Closed-form best single-row predictor for a feature cohort.

    With orthonormal mixing M, unit latent prior, and pre-warp noise
    sigma, the posterior given one de-warped row v is
    ``N(M^T v / (1 + sigma^2), sigma^2 / (1 + sigma^2) I)``; the implied
    per-channel error floor is :meth:`per_channel_rmse`.  Temporal
    models may go below the floor, memoryless ones cannot.
    """

    mixing: dict[str, np.ndarray]  # subject -> (num_features, latent_dim)
    affine: np.ndarray  # (3, latent_dim) latent-to-pressure rows (SBP, DBP, MBP)
    baselines: dict[str, np.ndarray]  # subject -> (3,) mmHg at session 0
    observation_noise: float
    bp_noise: float
    feature_warp: float
    session_drift: float
    feature_means: np.ndarray = field(default_factory=lambda: FEATURE_MEANS.copy())

    def session_offset(self, session_index: int) -> np.ndarray:
        return self.session_drift * session_index * DRIFT_DIRECTION

    def posterior_gain(self) -> float:
        s2 = self.observation_noise ** 2
        return 1.0 / (1.0 + s2)

    def predict(self, features, subject_id: str, session_index: int = 0) -> np.ndarray:
        """Best per-row pressure estimate, (n, 3) mmHg."""
        f = np.asarray(features, dtype=np.float64)
        if subject_id not in self.mixing:
            raise DataError(f"oracle has no subject {subject_id!r}")
        v = warp_inverse((f - self.feature_means) / FEATURE_SCALES,
                         self.feature_warp)
        latent = self.posterior_gain() * (v @ self.mixing[subject_id])
        return (latent @ self.affine.T + self.baselines[subject_id]
                + self.session_offset(session_index))

    def per_channel_rmse(self) -> np.ndarray:
        """Error floor of any memoryless predictor, per channel, mmHg."""
        s2 = self.observation_noise ** 2
        posterior_var = s2 / (1.0 + s2)
        row_norms_sq = (self.affine ** 2).sum(axis=1)
        return np.sqrt(posterior_var * row_norms_sq + self.bp_noise ** 2)

    def frozen_rmse(self, session_index: int) -> np.ndarray:
        """Error of a session-0-calibrated predictor evaluated after drift."""
        base = self.per_channel_rmse()
        return np.sqrt(base ** 2 + self.session_offset(session_index) ** 2)


@dataclass(eq=False)
class FeatureCohort:
    """Generated feature records plus their generating truth."""

    records: list[SequenceRecord]
    oracle: MemorylessOracle
    config: SynthConfig
    seed: int
    session_index: int
    session_label: str


def _cohort_maps(config: SynthConfig, seed: int):
    """Subject mixing maps, the shared pressure read-out, and baselines.

    Draw order (one map stream per subject, subject 0 also provides the
    shared pieces): base mixing (num_features x latent_dim normals),
    three read-out directions; then per subject a mixing perturbation and
    a baseline offset.  Everything is independent of the session.
    """
    base_gen = rng.stream(seed, rng.PURPOSE_MAPS, subject=0)
    base_mix = orthonormal_columns(
        rng.normal(base_gen, (NUM_FEATURES, config.latent_dim)))
    dirs = rng.normal(base_gen, (3, config.latent_dim))
    dirs /= np.sqrt((dirs ** 2).sum(axis=1, keepdims=True))
    row_m = 7.0 * dirs[0]
    affine = np.stack([row_m + 3.0 * dirs[1], row_m - 2.5 * dirs[2], row_m])

    base_pressure = BASE_PRESSURE + config.cohort_shift * COHORT_SHIFT_DIRECTION
    mixing: dict[str, np.ndarray] = {}
    baselines: dict[str, np.ndarray] = {}
    for i in range(config.num_subjects):
        subj_gen = rng.stream(seed, rng.PURPOSE_MAPS, subject=i + 1)
        wobble = rng.normal(subj_gen, (NUM_FEATURES, config.latent_dim))
        offset = rng.normal(subj_gen, (3,))
        name = _subject_name(i)
        if config.subject_spread > 0:
            mixing[name] = orthonormal_columns(
                base_mix + config.subject_spread * wobble)
        else:
            mixing[name] = base_mix
        baselines[name] = base_pressure + config.subject_spread * offset
    return mixing, affine, baselines


def _ar1_path(gen, n: int, dim: int, coupling: float) -> np.ndarray:
    """Stationary AR(1) path: unit marginals at every step."""
    draws = rng.normal(gen, (n, dim))
    path = np.empty((n, dim))
    path[0] = draws[0]
    scale = np.sqrt(1.0 - coupling * coupling)
    for t in range(1, n):
        path[t] = coupling * path[t - 1] + scale * draws[t]
    return path


def generate_feature_cohort(config: SynthConfig, seed: int,
                            session_index: int = 0,
                            session_label: Optional[str] = None) -> FeatureCohort:
    """One session of per-beat feature rows with aligned pressure targets.

    Subject identity (mixing, baseline) is stable across sessions; only
    the latent trajectories, noise, and the drift offset change with the
    session index.
    """
    if session_index < 0:
        raise DataError("session_index must be >= 0")
    label = session_label if session_label is not None else f"session{session_index}"
    mixing, affine, baselines = _cohort_maps(config, seed)
    oracle = MemorylessOracle(
        mixing=mixing, affine=affine, baselines=baselines,
        observation_noise=config.observation_noise, bp_noise=config.bp_noise,
        feature_warp=config.feature_warp, session_drift=config.session_drift,
    )
    drift = oracle.session_offset(session_index)

    records: list[SequenceRecord] = []
    n = config.samples_per_subject
    times = np.arange(n) * config.beat_interval_s
    for i in range(config.num_subjects):
        name = _subject_name(i)
        latent_gen = rng.stream(seed, rng.PURPOSE_LATENT, subject=i,
                                session=session_index)
        noise_gen = rng.stream(seed, rng.PURPOSE_NOISE, subject=i,
                               session=session_index)
        latent = _ar1_path(latent_gen, n, config.latent_dim,
                           config.temporal_coupling)
        pre = latent @ mixing[name].T
        pre += config.observation_noise * rng.normal(noise_gen, (n, NUM_FEATURES))
        features = FEATURE_MEANS + FEATURE_SCALES * warp_forward(pre, config.feature_warp)
        bp = latent @ affine.T + baselines[name] + drift
        if config.bp_noise > 0:
            bp = bp + config.bp_noise * rng.normal(noise_gen, (n, 3))
        bp = enforce_pressure_order(bp, config)
        records.append(SequenceRecord(subject_id=name, session_label=label,
                                      features=features, bp=bp, times=times.copy()))
    return FeatureCohort(records=records, oracle=oracle, config=config,
                         seed=seed, session_index=session_index,
                         session_label=label)


# --- waveform synthesis -----------------------------------------------------


ECG_SPIKE_WIDTH_S = 0.008
SYS_CENTER_FRAC = 0.22
SYS_WIDTH_FRAC = 0.07
DIA_CENTER_FRAC = 0.55
DIA_WIDTH_FRAC = 0.11
FINE_FACTOR = 16


@dataclass(eq=False)
class BeatShapeParams:
    """Continuous-time parameters of one record's waveforms."""

    r_times: np.ndarray  # (m,) R-spike centers, seconds
    amplitudes: np.ndarray  # (m-1,) systolic pulse heights
    reflections: np.ndarray  # (m-1,) diastolic-to-systolic height ratio
    foot_delays: np.ndarray  # (m-1,) R-to-foot delay, seconds

    @property
    def periods(self) -> np.ndarray:
        return np.diff(self.r_times)

    @property
    def feet(self) -> np.ndarray:
        return self.r_times[:-1] + self.foot_delays


def _ecg_values(t: np.ndarray, shape: BeatShapeParams) -> np.ndarray:
    out = np.zeros_like(t)
    for r in shape.r_times:
        out += np.exp(-0.5 * ((t - r) / ECG_SPIKE_WIDTH_S) ** 2)
    return out


def _ppg_values(t: np.ndarray, shape: BeatShapeParams) -> np.ndarray:
    out = np.zeros_like(t)
    feet = shape.feet
    periods = shape.periods
    for n in range(len(feet)):
        p = periods[n]
        amp = shape.amplitudes[n]
        sys_c = feet[n] + SYS_CENTER_FRAC * p
        dia_c = feet[n] + DIA_CENTER_FRAC * p
        out += amp * np.exp(-0.5 * ((t - sys_c) / (SYS_WIDTH_FRAC * p)) ** 2)
        out += (amp * shape.reflections[n]
                * np.exp(-0.5 * ((t - dia_c) / (DIA_WIDTH_FRAC * p)) ** 2))
    return out


def _ppg_slope(t: np.ndarray, shape: BeatShapeParams) -> np.ndarray:
    """Analytic time derivative of the PPG model."""
    out = np.zeros_like(t)
    feet = shape.feet
    periods = shape.periods
    for n in range(len(feet)):
        p = periods[n]
        amp = shape.amplitudes[n]
        for center, width, scale in (
            (feet[n] + SYS_CENTER_FRAC * p, SYS_WIDTH_FRAC * p, amp),
            (feet[n] + DIA_CENTER_FRAC * p, DIA_WIDTH_FRAC * p,
             amp * shape.reflections[n]),
        ):
            z = (t - center) / width
            out += -scale * z / width * np.exp(-0.5 * z * z)
    return out


def _draw_beat_shape(config: SynthConfig, gen) -> BeatShapeParams:
    """Per-record shape draws, in a fixed block order."""
    m = config.beats_per_record + 2
    rr = config.beat_interval_s * (1.0 + config.rr_jitter * rng.normal(gen, (m - 1,)))
    rr = np.clip(rr, 0.4 * config.beat_interval_s, None)
    r_times = 0.5 + np.concatenate([[0.0], np.cumsum(rr)])
    amplitudes = 1.0 + 0.10 * rng.normal(gen, (m - 1,))
    amplitudes = np.clip(amplitudes, 0.5, None)
    reflections = np.clip(0.40 + 0.05 * rng.normal(gen, (m - 1,)), 0.15, 0.65)
    delays = config.ptt_base_s + config.ptt_jitter_s * rng.normal(gen, (m - 1,))
    delays = np.clip(delays, 0.05, 0.45 * rr)
    return BeatShapeParams(r_times=r_times, amplitudes=amplitudes,
                           reflections=reflections, foot_delays=delays)


def _first_local_max(values: np.ndarray) -> int:
    interior = (values[1:-1] > values[:-2]) & (values[1:-1] >= values[2:])
    hits = np.flatnonzero(interior)
    if len(hits) == 0:
        raise DataError("synthetic beat lost its expected peak")
    return int(hits[0]) + 1


def _interior_minima(values: np.ndarray) -> np.ndarray:
    interior = (values[1:-1] < values[:-2]) & (values[1:-1] <= values[2:])
    return np.flatnonzero(interior) + 1


def _most_prominent_minimum(values: np.ndarray) -> int:
    """Index of the interior local minimum with the largest prominence.

    Prominence here is the smaller of the highest values to each side,
    minus the minimum itself; the shallow dip next to a segment edge
    (the pre-foot valley) scores near zero and never wins against the
    notch between the two pulse components.
    """
    minima = _interior_minima(values)
    if len(minima) == 0:
        raise DataError("synthetic beat lost its expected notch")
    left_max = np.maximum.accumulate(values)
    right_max = np.maximum.accumulate(values[::-1])[::-1]
    prominence = np.minimum(left_max[minima], right_max[minima]) - values[minima]
    return int(minima[int(np.argmax(prominence))])


def _fine_truth(shape: BeatShapeParams, sample_rate: float) -> FeatureSequence:
    """Ground-truth per-beat features from a 16x oversampled evaluation.

    Landmarks are located with plain neighbor comparisons in brackets
    that follow from the construction, independent of the detection
    code: max upslope between R spikes (analytic derivative), foot as
    the minimum between consecutive upslopes, systolic peak as the first
    local maximum after the foot, notch as the deepest interior local
    minimum before the next foot, secondary peak as the first local
    maximum after the notch.
    """
    fine_dt = 1.0 / (sample_rate * FINE_FACTOR)
    m = len(shape.r_times)

    def grid(a: float, b: float) -> np.ndarray:
        return np.arange(a, b, fine_dt)

    # Max upslope inside each RR interval, then the foot preceding it.
    slopes = np.empty(m - 1)
    for n in range(m - 1):
        t = grid(shape.r_times[n], shape.r_times[n + 1])
        slopes[n] = t[int(np.argmax(_ppg_slope(t, shape)))]
    feet = np.empty(m - 1)
    t0 = grid(shape.r_times[0], slopes[0])
    feet[0] = t0[int(np.argmin(_ppg_values(t0, shape)))]
    for n in range(1, m - 1):
        t = grid(slopes[n - 1], slopes[n])
        feet[n] = t[int(np.argmin(_ppg_values(t, shape)))]

    times = []
    rows = []
    for n in range(m - 2):
        t = grid(feet[n], feet[n + 1] + fine_dt)
        y = _ppg_values(t, shape)
        base = y[0]
        peak = _first_local_max(y)
        notch = peak + _most_prominent_minimum(y[peak:])
        secondary = notch + _first_local_max(y[notch:])
        rr = shape.r_times[n + 1] - shape.r_times[n]
        rows.append([
            slopes[n] - shape.r_times[n],
            60.0 / rr,
            (y[secondary] - base) / (y[peak] - base),
            t[notch] - t[0],
            t[peak] - t[0],
            float(np.trapezoid(y[:notch + 1] - base, dx=fine_dt)),
            float(np.trapezoid(y[notch:] - base, dx=fine_dt)),
        ])
        times.append(shape.r_times[n])
    return FeatureSequence(times=np.asarray(times), values=np.asarray(rows))


def _beat_pressures(truth: FeatureSequence, config: SynthConfig) -> BpSequence:
    """Plausible per-beat pressures tied to the true transit time and rate."""
    ptt = truth.values[:, 0]
    hr = truth.values[:, 1]
    sbp = 160.0 - 120.0 * ptt + 0.12 * (hr - 75.0)
    dbp = 90.0 - 60.0 * ptt + 0.06 * (hr - 75.0)
    mbp = (sbp + 2.0 * dbp) / 3.0
    values = enforce_pressure_order(np.stack([sbp, dbp, mbp], axis=1), config)
    return BpSequence(times=truth.times.copy(), values=values)


@dataclass(eq=False)
class WaveformCohortRecord:
    """A synthesized record with its generating truth."""

    waveform: WaveformRecord
    truth: FeatureSequence
    bp: BpSequence
    shape: BeatShapeParams


@dataclass(eq=False)
class WaveformCohort:
    records: list[WaveformCohortRecord]
    config: SynthConfig
    seed: int


def generate_waveform_cohort(config: SynthConfig, seed: int,
                             session_label: str = "session0") -> WaveformCohort:
    """Paired ECG/PPG records with oversampled ground-truth features.

    Additive measurement noise (``waveform_noise``) is applied to the
    sampled traces only; the returned truth always describes the clean
    shape.
    """
    out: list[WaveformCohortRecord] = []
    for i in range(config.num_subjects):
        gen = rng.stream(seed, rng.PURPOSE_WAVEFORM, subject=i)
        shape = _draw_beat_shape(config, gen)
        duration = shape.r_times[-1] + 1.2 * config.beat_interval_s
        t = np.arange(int(np.ceil(duration * config.waveform_sample_rate)))
        t = t / config.waveform_sample_rate
        ecg = _ecg_values(t, shape)
        ppg = _ppg_values(t, shape)
        if config.waveform_noise > 0:
            ecg = ecg + config.waveform_noise * rng.normal(gen, t.shape)
            ppg = ppg + config.waveform_noise * rng.normal(gen, t.shape)
        truth = _fine_truth(shape, config.waveform_sample_rate)
        out.append(WaveformCohortRecord(
            waveform=WaveformRecord(ecg=ecg, ppg=ppg,
                                    sample_rate=config.waveform_sample_rate,
                                    subject_id=_subject_name(i),
                                    session_label=session_label),
            truth=truth,
            bp=_beat_pressures(truth, config),
            shape=shape,
        ))
    return WaveformCohort(records=out, config=config, seed=seed)
