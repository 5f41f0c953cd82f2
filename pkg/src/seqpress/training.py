"""Training machinery: loss, optimizer, data preparation, and loops.

Loss convention: squared error is summed over timesteps and output
channels within one sample, then averaged over the samples of a batch;
the L2 penalty ``l2_penalty * sum(weights**2)`` (biases exempt) is added
once per batch, not per sample.

Training is single-threaded and bitwise reproducible by default.  Setting
the ``SEQPRESS_THREADS`` environment variable to an integer above one
computes per-batch gradients in parallel chunks with a fixed-order
reduction; results are then deterministic for a given thread count but
not bit-identical to the single-threaded reference.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import rng
from .backprop import backward_pass
from .errors import (
    DataError,
    DivergedLoss,
    EmptySplit,
    NonPositiveTarget,
    ShapeMismatch,
    SourceTooShort,
)
from .network import (
    NetworkConfig,
    NetworkParams,
    copy_params,
    forward_pass,
    global_norm,
    init_network,
    l2_norm_sq,
    params_map,
)
from .signals import FeatureStats

logger = logging.getLogger(__name__)

POOLED_STATS_KEY = "__pooled__"


def thread_count() -> int:
    """Concurrency cap from ``SEQPRESS_THREADS`` (0 = single-threaded)."""
    raw = os.environ.get("SEQPRESS_THREADS", "0")
    try:
        value = int(raw)
    except ValueError:
        logger.warning("ignoring non-integer SEQPRESS_THREADS=%r", raw)
        value = 0
    return max(value, 0)


@dataclass(eq=False)
class TrainConfig:
    """Optimization hyperparameters.

    ``fractions`` order is (train, val, test).  ``finetune_max_epochs``
    of ``None`` means "same budget as the main run".
    """

    batch_size: int = 64
    clip_norm: float = 5.0
    l2_penalty: float = 1e-4
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    max_epochs: int = 500
    patience: int = 20
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0
    finetune_lr_factor: float = 0.1
    finetune_holdin_fraction: float = 0.5
    finetune_max_epochs: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.clip_norm <= 0:
            raise DataError("clip_norm must be > 0")
        if self.l2_penalty < 0:
            raise DataError("l2_penalty must be >= 0")
        if self.max_epochs < 0:
            raise DataError("max_epochs must be >= 0")
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise DataError(f"fractions must be three non-negatives summing to 1, got {fr}")
        self.fractions = fr

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["fractions"] = list(self.fractions)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        if "fractions" in known:
            known["fractions"] = tuple(known["fractions"])
        return cls(**known)


@dataclass(eq=False)
class SequenceRecord:
    """One contiguous recording: a raw feature sequence with aligned targets."""

    subject_id: str
    session_label: str
    features: np.ndarray  # (n, num_features), unnormalized
    bp: np.ndarray  # (n, 3) mmHg, columns (SBP, DBP, MBP)
    times: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.bp = np.asarray(self.bp, dtype=np.float64)
        if self.features.ndim != 2 or self.bp.ndim != 2:
            raise ShapeMismatch("features and bp must be 2-D")
        if len(self.features) != len(self.bp):
            raise ShapeMismatch("features and bp must have equal length")


@dataclass(eq=False)
class TrainingSample:
    """One fixed-length window of normalized features and targets."""

    x: np.ndarray  # (seq_len, num_features)
    y: np.ndarray  # (seq_len, num_outputs)
    subject_id: str = ""
    session_label: str = ""
    offset: int = 0


@dataclass(eq=False)
class SplitDataset:
    """Windowed, normalized data plus everything needed to undo the scaling."""

    train: list[TrainingSample]
    val: list[TrainingSample]
    test: list[TrainingSample]
    feature_stats: dict[str, FeatureStats] = field(default_factory=dict)
    target_maxima: Optional[np.ndarray] = None


@dataclass(eq=False)
class Checkpoint:
    """Trained parameters plus the scaling state needed to use them."""

    params: NetworkParams
    target_maxima: np.ndarray
    feature_stats: dict[str, FeatureStats] = field(default_factory=dict)
    train_config: Optional[TrainConfig] = None
    history: dict[str, list] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def stats_for(self, subject_id: str) -> FeatureStats:
        if subject_id in self.feature_stats:
            return self.feature_stats[subject_id]
        if POOLED_STATS_KEY in self.feature_stats:
            return self.feature_stats[POOLED_STATS_KEY]
        raise DataError(f"no normalization stats for subject {subject_id!r}")


@dataclass(eq=False)
class FinetuneResult:
    """Both stages of a pretrain/finetune run plus the held-out day-one data."""

    pretrained: Checkpoint
    finetuned: Checkpoint
    day1_holdin: list[TrainingSample]
    day1_holdout: list[TrainingSample]


# --- loss ------------------------------------------------------------------


def multitask_loss(z_seq, y_seq, params_l2_norm_sq: float = 0.0,
                   l2_penalty: float = 0.0) -> float:
    """Per-sample objective: squared error summed over timesteps and
    channels, plus ``l2_penalty * params_l2_norm_sq``."""
    z = np.asarray(z_seq, dtype=np.float64)
    y = np.asarray(y_seq, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeMismatch(f"predictions {z.shape} vs targets {y.shape}")
    diff = z - y
    return float((diff * diff).sum() + l2_penalty * params_l2_norm_sq)


def batch_objective(z_batch, y_batch, params_l2_norm_sq: float = 0.0,
                    l2_penalty: float = 0.0) -> float:
    """Batch objective: mean of per-sample sums plus one L2 term."""
    z = np.asarray(z_batch, dtype=np.float64)
    y = np.asarray(y_batch, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeMismatch(f"predictions {z.shape} vs targets {y.shape}")
    if z.ndim != 3 or len(z) == 0:
        raise ShapeMismatch("batch arrays must be (batch, seq_len, outputs)")
    diff = z - y
    return float((diff * diff).sum() / len(z) + l2_penalty * params_l2_norm_sq)


def _add_l2_gradient(grads: NetworkParams, params: NetworkParams, l2_penalty: float):
    """In place: the penalty contributes ``2 * l2_penalty * w`` on weights only."""
    if l2_penalty == 0.0:
        return
    from .network import _is_bias  # shared weight/bias naming rule

    for (name, g), (_, p) in zip(grads.named_arrays(), params.named_arrays()):
        if not _is_bias(name):
            g += 2.0 * l2_penalty * p


def _sum_loss_and_grads(params: NetworkParams, x: np.ndarray, y: np.ndarray):
    """Unnormalized data term: summed (not averaged) loss and gradients."""
    z, cache = forward_pass(params, x, training=True)
    diff = z - y
    loss = float((diff * diff).sum())
    grads, _ = backward_pass(params, cache, 2.0 * diff)
    return loss, grads


def loss_and_gradients(params: NetworkParams, x_batch, y_batch, l2_penalty: float = 0.0):
    """Batch objective and its exact gradients.

    Honors ``SEQPRESS_THREADS``: with N > 1 threads the batch is split
    into N chunks whose gradient sums are reduced in fixed chunk order.
    """
    x = np.asarray(x_batch, dtype=np.float64)
    y = np.asarray(y_batch, dtype=np.float64)
    if x.ndim != 3 or y.ndim != 3 or len(x) != len(y):
        raise ShapeMismatch("batch arrays must be (batch, seq_len, width)")
    batch = len(x)
    threads = thread_count()
    if threads > 1 and batch > 1:
        bounds = np.array_split(np.arange(batch), min(threads, batch))
        with ThreadPoolExecutor(max_workers=len(bounds)) as pool:
            parts = list(pool.map(
                lambda idx: _sum_loss_and_grads(params, x[idx], y[idx]), bounds
            ))
        loss_sum = 0.0
        grads = None
        for part_loss, part_grads in parts:  # fixed order: chunk 0, 1, ...
            loss_sum += part_loss
            grads = part_grads if grads is None else params_map(np.add, grads, part_grads)
    else:
        loss_sum, grads = _sum_loss_and_grads(params, x, y)
    inv = 1.0 / batch
    grads = params_map(lambda g: g * inv, grads)
    loss = loss_sum * inv + l2_penalty * l2_norm_sq(params)
    _add_l2_gradient(grads, params, l2_penalty)
    return loss, grads


# --- optimizer ---------------------------------------------------------------


@dataclass(eq=False)
class AdamState:
    """First and second moment estimates plus the step counter."""

    m: NetworkParams
    v: NetworkParams
    step: int = 0

    @classmethod
    def zeros(cls, params: NetworkParams) -> "AdamState":
        return cls(m=params_map(np.zeros_like, params),
                   v=params_map(np.zeros_like, params), step=0)


def clip_gradients(grads: NetworkParams, max_norm: float) -> NetworkParams:
    """Rescale to ``max_norm`` when the global norm exceeds it.

    The norm is the L2 norm over every gradient tensor jointly.  At or
    below the threshold gradients pass through untouched.
    """
    if max_norm <= 0:
        raise DataError("max_norm must be > 0")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return params_map(lambda g: g * scale, grads)


def adam_step(state: AdamState, params: NetworkParams, grads: NetworkParams,
              learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    t = state.step + 1
    m = params_map(lambda m_, g: beta1 * m_ + (1.0 - beta1) * g, state.m, grads)
    v = params_map(lambda v_, g: beta2 * v_ + (1.0 - beta2) * (g * g), state.v, grads)
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_params = params_map(
        lambda p, m_, v_: p - learning_rate * (m_ / bc1) / (np.sqrt(v_ / bc2) + epsilon),
        params, m, v,
    )
    return new_params, AdamState(m=m, v=v, step=t)


# --- target scaling ----------------------------------------------------------


def normalize_targets(bp, maxima=None):
    """Scale each target channel by its training-set maximum into (0, 1].

    With ``maxima`` given, applies the stored scale instead (values above
    1 are allowed then; they signal a validation sample beyond the
    training range).  Returns ``(scaled, maxima)``.
    """
    values = np.asarray(bp, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if not np.isfinite(values).all() or (values <= 0).any():
        raise NonPositiveTarget("targets must be finite and strictly positive")
    if maxima is None:
        maxima = values.max(axis=0)
    else:
        maxima = np.asarray(maxima, dtype=np.float64)
        if maxima.shape != (values.shape[1],):
            raise ShapeMismatch(f"maxima shape {maxima.shape} vs {values.shape[1]} channels")
        if (maxima <= 0).any():
            raise NonPositiveTarget("stored maxima must be strictly positive")
    return values / maxima, maxima


def denormalize_targets(scaled, maxima) -> np.ndarray:
    """Invert :func:`normalize_targets` (multiply channels back to mmHg)."""
    return np.asarray(scaled, dtype=np.float64) * np.asarray(maxima, dtype=np.float64)


# --- windowing and splits -----------------------------------------------------


def make_windows(features, targets, seq_len: int, stride: Optional[int] = None,
                 subject_id: str = "", session_label: str = "") -> list[TrainingSample]:
    """Cut aligned sliding windows; the trailing remainder is dropped.

    Default stride is half a window.  Raises :class:`SourceTooShort` when
    the source holds fewer rows than one window.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if len(x) != len(y):
        raise ShapeMismatch("features and targets must have equal length")
    if seq_len < 1:
        raise DataError("seq_len must be >= 1")
    if stride is None:
        stride = max(1, seq_len // 2)
    if stride < 1:
        raise DataError("stride must be >= 1")
    n = len(x)
    if n < seq_len:
        raise SourceTooShort(f"need at least {seq_len} rows, got {n}")
    samples = []
    for start in range(0, n - seq_len + 1, stride):
        samples.append(TrainingSample(
            x=x[start:start + seq_len].copy(),
            y=y[start:start + seq_len].copy(),
            subject_id=subject_id,
            session_label=session_label,
            offset=start,
        ))
    return samples


def split_dataset(samples: Sequence[TrainingSample],
                  fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
                  seed: int = 0):
    """Deterministic train/val/test split, stratified by subject.

    Each subject's windows are shuffled with a subject-addressed stream
    and cut at ``round(n * cumulative_fraction)`` boundaries, so every
    subject contributes to each split proportionally.
    """
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise DataError(f"fractions must be three non-negatives summing to 1, got {fr}")
    subjects = sorted({s.subject_id for s in samples})
    train: list[TrainingSample] = []
    val: list[TrainingSample] = []
    test: list[TrainingSample] = []
    for subject_index, subject in enumerate(subjects):
        group = [s for s in samples if s.subject_id == subject]
        gen = rng.stream(seed, rng.PURPOSE_SPLIT, subject=subject_index)
        order = gen.permutation(len(group))
        shuffled = [group[j] for j in order]
        b1 = int(round(len(group) * fr[0]))
        b2 = int(round(len(group) * (fr[0] + fr[1])))
        train.extend(shuffled[:b1])
        val.extend(shuffled[b1:b2])
        test.extend(shuffled[b2:])
    for name, part in (("train", train), ("val", val), ("test", test)):
        if fr[("train", "val", "test").index(name)] > 0 and not part:
            raise EmptySplit(f"{name} split received zero samples")
    return train, val, test


def _column_stats(rows: np.ndarray) -> FeatureStats:
    return FeatureStats(mean=rows.mean(axis=0), std=rows.std(axis=0))


def compute_feature_stats(train_samples: Sequence[TrainingSample]) -> dict[str, FeatureStats]:
    """Per-subject mean/std over the training windows, plus a pooled entry.

    A subject column with zero spread falls back to the pooled value so a
    constant-within-subject feature stays usable; a pooled zero-spread
    column is a hard error, raised by the caller when normalizing.
    """
    pooled_rows = np.concatenate([s.x for s in train_samples], axis=0)
    pooled = _column_stats(pooled_rows)
    stats: dict[str, FeatureStats] = {POOLED_STATS_KEY: pooled}
    for subject in sorted({s.subject_id for s in train_samples}):
        rows = np.concatenate([s.x for s in train_samples if s.subject_id == subject], axis=0)
        own = _column_stats(rows)
        degenerate = own.std == 0.0
        if degenerate.any():
            std = own.std.copy()
            std[degenerate] = pooled.std[degenerate]
            own = FeatureStats(mean=own.mean, std=std)
            logger.info("subject %s: %d constant feature columns use pooled spread",
                        subject, int(degenerate.sum()))
        stats[subject] = own
    return stats


def prepare_dataset(records: Iterable[SequenceRecord], seq_len: int,
                    stride: Optional[int] = None,
                    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
                    seed: int = 0) -> SplitDataset:
    """Window, split, and normalize a set of recordings.

    Normalization is leakage-free: per-subject feature stats and the
    per-channel target maxima come from the training split only and are
    then applied everywhere.
    """
    from .signals import zscore_apply  # deferred to keep import cost low

    raw: list[TrainingSample] = []
    for rec in records:
        raw.extend(make_windows(rec.features, rec.bp, seq_len, stride,
                                subject_id=rec.subject_id,
                                session_label=rec.session_label))
    train, val, test = split_dataset(raw, fractions=fractions, seed=seed)
    stats = compute_feature_stats(train)
    train_targets = np.concatenate([s.y for s in train], axis=0)
    _, maxima = normalize_targets(train_targets)

    def scale(sample: TrainingSample) -> TrainingSample:
        st = stats.get(sample.subject_id, stats[POOLED_STATS_KEY])
        scaled_y, _ = normalize_targets(sample.y, maxima)
        return TrainingSample(x=zscore_apply(sample.x, st), y=scaled_y,
                              subject_id=sample.subject_id,
                              session_label=sample.session_label,
                              offset=sample.offset)

    return SplitDataset(
        train=[scale(s) for s in train],
        val=[scale(s) for s in val],
        test=[scale(s) for s in test],
        feature_stats=stats,
        target_maxima=maxima,
    )


# --- training loops ------------------------------------------------------------


def _stack(samples: Sequence[TrainingSample]):
    return (np.stack([s.x for s in samples]), np.stack([s.y for s in samples]))


def predict_samples(params: NetworkParams, samples: Sequence[TrainingSample],
                    batch_size: int = 256) -> np.ndarray:
    """Normalized predictions, shape ``(num_samples, seq_len, outputs)``."""
    outputs = []
    for start in range(0, len(samples), batch_size):
        x, _ = _stack(samples[start:start + batch_size])
        z, _ = forward_pass(params, x)
        outputs.append(z)
    return np.concatenate(outputs, axis=0)


def dataset_objective(params: NetworkParams, samples: Sequence[TrainingSample],
                      l2_penalty: float, batch_size: int = 256) -> float:
    """Full-split objective (per-sample mean plus one L2 term)."""
    total = 0.0
    for start in range(0, len(samples), batch_size):
        x, y = _stack(samples[start:start + batch_size])
        z, _ = forward_pass(params, x)
        diff = z - y
        total += float((diff * diff).sum())
    return total / len(samples) + l2_penalty * l2_norm_sq(params)


def train(config: TrainConfig, net_init: NetworkParams,
          dataset: SplitDataset) -> Checkpoint:
    """Minibatch Adam with clipping and best-validation early stopping.

    Batches drop the final short remainder.  Training stops after
    ``patience`` epochs without a new best validation objective, and the
    returned checkpoint carries the best-validation parameters (the
    untouched initial parameters when ``max_epochs == 0``).
    """
    if not dataset.train:
        raise EmptySplit("training split is empty")
    if not dataset.val:
        raise EmptySplit("validation split is empty")
    x_train, y_train = _stack(dataset.train)
    if config.max_epochs > 0 and len(x_train) < config.batch_size:
        raise DataError(
            f"training split ({len(x_train)}) is smaller than one batch "
            f"({config.batch_size}); no optimizer step would run"
        )

    params = copy_params(net_init)
    best_params = copy_params(net_init)
    best_val = np.inf
    best_epoch = 0
    epochs_without_improvement = 0
    adam = AdamState.zeros(params)
    shuffle_gen = rng.stream(config.seed, rng.PURPOSE_SHUFFLE)
    history: dict[str, list] = {
        "epoch": [], "train_loss": [], "val_loss": [], "grad_norm_mean": [],
    }

    steps = 0
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_gen.permutation(len(x_train))
        batch_losses = []
        batch_norms = []
        for b in range(len(x_train) // config.batch_size):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            loss, grads = loss_and_gradients(params, x_train[idx], y_train[idx],
                                             config.l2_penalty)
            if not np.isfinite(loss):
                raise DivergedLoss(f"epoch {epoch} batch {b}: loss={loss}")
            batch_norms.append(global_norm(grads))
            grads = clip_gradients(grads, config.clip_norm)
            params, adam = adam_step(adam, params, grads, config.learning_rate,
                                     config.adam_beta1, config.adam_beta2,
                                     config.adam_epsilon)
            steps += 1
            batch_losses.append(loss)
        val_loss = dataset_objective(params, dataset.val, config.l2_penalty)
        if not np.isfinite(val_loss):
            raise DivergedLoss(f"epoch {epoch}: validation loss={val_loss}")
        history["epoch"].append(epoch)
        history["train_loss"].append(float(np.mean(batch_losses)))
        history["val_loss"].append(float(val_loss))
        history["grad_norm_mean"].append(float(np.mean(batch_norms)))
        if val_loss < best_val:
            best_val = val_loss
            best_params = copy_params(params)
            best_epoch = epoch
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= config.patience:
                break

    return Checkpoint(
        params=best_params,
        target_maxima=(dataset.target_maxima if dataset.target_maxima is not None
                       else np.ones(net_init.config.output_size)),
        feature_stats=dict(dataset.feature_stats),
        train_config=config,
        history=history,
        metadata={
            "seed": config.seed,
            "epochs_run": len(history["epoch"]),
            "steps_run": steps,
            "best_epoch": best_epoch,
            "best_val_loss": None if not np.isfinite(best_val) else float(best_val),
            "stopped_early": len(history["epoch"]) < config.max_epochs,
        },
    )


def _time_ordered(samples: Sequence[TrainingSample]) -> list[TrainingSample]:
    return sorted(samples, key=lambda s: (s.subject_id, s.offset))


def pretrain_finetune(config: TrainConfig, net_init: NetworkParams,
                      static_dataset: SplitDataset,
                      day1_records: Sequence[SequenceRecord]) -> FinetuneResult:
    """Pretrain on a static cohort, then adapt to the first session.

    Day-one windows are split by time order per subject: the earlier
    ``finetune_holdin_fraction`` goes to adaptation, the rest is held out
    for evaluation.  Fine-tuning restarts the optimizer from scratch at
    ``learning_rate * finetune_lr_factor`` and reuses the pretraining
    target maxima so both stages share one output scale.  New subjects'
    feature stats come from their held-in rows only.
    """
    from .signals import zscore_apply

    pretrained = train(config, net_init, static_dataset)
    seq_len = net_init.config.seq_len

    holdin_raw: list[TrainingSample] = []
    holdout_raw: list[TrainingSample] = []
    for rec in day1_records:
        windows = _time_ordered(make_windows(rec.features, rec.bp, seq_len,
                                             subject_id=rec.subject_id,
                                             session_label=rec.session_label))
        n_in = int(round(len(windows) * config.finetune_holdin_fraction))
        if n_in == 0 or n_in == len(windows):
            raise EmptySplit(
                f"subject {rec.subject_id}: day-one split leaves an empty side"
            )
        holdin_raw.extend(windows[:n_in])
        holdout_raw.extend(windows[n_in:])

    stats = compute_feature_stats(holdin_raw)
    maxima = pretrained.target_maxima

    def scale(sample: TrainingSample) -> TrainingSample:
        st = stats.get(sample.subject_id, stats[POOLED_STATS_KEY])
        scaled_y, _ = normalize_targets(sample.y, maxima)
        return TrainingSample(x=zscore_apply(sample.x, st), y=scaled_y,
                              subject_id=sample.subject_id,
                              session_label=sample.session_label,
                              offset=sample.offset)

    holdin = [scale(s) for s in holdin_raw]
    holdout = [scale(s) for s in holdout_raw]

    n_val = max(1, int(round(0.2 * len(holdin))))
    ft_train = holdin[:-n_val]
    ft_val = holdin[-n_val:]
    if not ft_train:
        raise EmptySplit("held-in day-one data too small to fine-tune on")
    ft_config = replace(
        config,
        learning_rate=config.learning_rate * config.finetune_lr_factor,
        max_epochs=(config.max_epochs if config.finetune_max_epochs is None
                    else config.finetune_max_epochs),
        batch_size=min(config.batch_size, len(ft_train)),
    )
    ft_dataset = SplitDataset(train=ft_train, val=ft_val, test=holdout,
                              feature_stats=stats, target_maxima=maxima)
    finetuned = train(ft_config, pretrained.params, ft_dataset)
    finetuned.metadata["stage"] = "finetuned"
    pretrained.metadata["stage"] = "pretrained"
    return FinetuneResult(pretrained=pretrained, finetuned=finetuned,
                          day1_holdin=holdin, day1_holdout=holdout)


# --- multi-task versus single-task harness --------------------------------------


CHANNEL_NAMES = ("sbp", "dbp", "mbp")


@dataclass(eq=False)
class HarnessRow:
    model: str
    multitask: bool
    rmse: dict[str, float]


@dataclass(eq=False)
class HarnessReport:
    rows: list[HarnessRow]

    def to_table(self) -> list[dict]:
        out = []
        for row in self.rows:
            entry = {"model": row.model, "multitask": row.multitask}
            entry.update({f"rmse_{ch}": row.rmse[ch] for ch in CHANNEL_NAMES})
            out.append(entry)
        return out


def _slice_channel(samples: Sequence[TrainingSample], channel: int) -> list[TrainingSample]:
    return [TrainingSample(x=s.x, y=s.y[:, channel:channel + 1],
                           subject_id=s.subject_id, session_label=s.session_label,
                           offset=s.offset) for s in samples]


def multitask_vs_singletask_harness(config: TrainConfig, net_config: NetworkConfig,
                                    dataset: SplitDataset,
                                    depths: Sequence[int] = (2, 3, 4)) -> HarnessReport:
    """Train one joint three-channel model and three single-channel models
    per depth, under identical budgets, and report test RMSE side by side.

    Single-task rows are labeled ``DeepRNN-<L>L``; the joint rows carry a
    dagger, matching the conventional table layout.
    """
    from .metrics import rmse

    if dataset.target_maxima is None or len(dataset.target_maxima) != 3:
        raise DataError("harness needs all three target channels")
    if dataset.train and dataset.train[0].y.shape[1] != 3:
        raise DataError("harness needs all three target channels")
    maxima = dataset.target_maxima
    truth = denormalize_targets(np.concatenate([s.y for s in dataset.test]), maxima)

    rows: list[HarnessRow] = []
    for depth in depths:
        cfg = replace_config(net_config, num_layers=depth)

        single_rmse: dict[str, float] = {}
        for channel, name in enumerate(CHANNEL_NAMES):
            cfg1 = replace_config(cfg, output_size=1)
            ds1 = SplitDataset(train=_slice_channel(dataset.train, channel),
                               val=_slice_channel(dataset.val, channel),
                               test=_slice_channel(dataset.test, channel),
                               feature_stats=dataset.feature_stats,
                               target_maxima=maxima[channel:channel + 1])
            ckpt = train(config, init_network(cfg1, config.seed), ds1)
            pred = predict_samples(ckpt.params, ds1.test) * maxima[channel]
            single_rmse[name] = float(rmse(pred.reshape(-1), truth[:, channel]))
        rows.append(HarnessRow(model=f"DeepRNN-{depth}L", multitask=False,
                               rmse=single_rmse))

        ckpt = train(config, init_network(cfg, config.seed), dataset)
        pred = denormalize_targets(
            predict_samples(ckpt.params, dataset.test).reshape(-1, 3), maxima)
        joint = rmse(pred, truth)
        rows.append(HarnessRow(model=f"DeepRNN-{depth}L†", multitask=True,
                               rmse={ch: float(joint[i]) for i, ch in enumerate(CHANNEL_NAMES)}))
    return HarnessReport(rows=rows)


def replace_config(cfg: NetworkConfig, **changes) -> NetworkConfig:
    data = cfg.to_dict()
    data.update(changes)
    return NetworkConfig.from_dict(data)
