"""Evaluation harness: session-wise error reports, model comparison
tables, and the residual-connection ablation.

All reported errors are in mmHg: predictions are produced in normalized
space and multiplied back by the stored per-channel training maxima
before any metric is computed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .baselines import KalmanFilterModel, PttChen, PttPoon, RidgeRegression
from .errors import DataError, EmptyInput, MissingSession
from .metrics import BlandAltman, bland_altman, rmse
from .network import NetworkConfig, init_network
from .signals import zscore_apply
from .training import (
    CHANNEL_NAMES,
    Checkpoint,
    SequenceRecord,
    SplitDataset,
    TrainConfig,
    TrainingSample,
    denormalize_targets,
    make_windows,
    predict_samples,
    prepare_dataset,
    train,
)

logger = logging.getLogger(__name__)

REFERENCE_FOOTER = (
    "Published reference results for this architecture class report test "
    "RMSE near 3.73 (SBP) and 2.43 (DBP) mmHg on their original recordings; "
    "shown for context only, not as a target for this data."
)


@dataclass(eq=False)
class SessionEval:
    """Errors of one checkpoint on one session, in mmHg.

    ``rmse`` pools every timestep of the session; ``rmse_macro`` averages
    the per-subject RMSEs so small subjects are not drowned out.  Both
    are reported because either convention is defensible.
    """

    session_label: str
    rmse: np.ndarray  # (3,) pooled over all rows
    rmse_macro: np.ndarray  # (3,) mean of per-subject RMSEs
    bland_altman: list[BlandAltman]  # per channel
    scaling_overflow_fraction: float
    num_windows: int

    def to_dict(self) -> dict:
        return {
            "session_label": self.session_label,
            "rmse_pooled": {ch: float(self.rmse[i])
                            for i, ch in enumerate(CHANNEL_NAMES)},
            "rmse_macro": {ch: float(self.rmse_macro[i])
                           for i, ch in enumerate(CHANNEL_NAMES)},
            "bland_altman": {ch: self.bland_altman[i].to_dict()
                             for i, ch in enumerate(CHANNEL_NAMES)},
            "scaling_overflow_fraction": self.scaling_overflow_fraction,
            "num_windows": self.num_windows,
        }


@dataclass(eq=False)
class MultidayReport:
    """Session evaluations in the order they were requested."""

    sessions: list[SessionEval]
    model_id: str = ""
    dataset_id: str = ""

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "dataset_id": self.dataset_id,
                "sessions": [s.to_dict() for s in self.sessions]}

    def rmse_by_session(self) -> dict[str, np.ndarray]:
        return {s.session_label: s.rmse for s in self.sessions}


def evaluate_checkpoint(ckpt: Checkpoint, records: Sequence[SequenceRecord],
                        session_label: str = "",
                        stride: Optional[int] = None) -> SessionEval:
    """Windowed evaluation of a checkpoint on raw records.

    Windows are non-overlapping by default so each timestep is counted
    once.  Features are normalized with the checkpoint's per-subject
    stats (pooled fallback); targets beyond the stored training maxima
    are allowed and counted in ``scaling_overflow_fraction``.
    """
    cfg = ckpt.params.config
    if stride is None:
        stride = cfg.seq_len
    samples: list[TrainingSample] = []
    raw_targets = []
    for rec in records:
        for w in make_windows(rec.features, rec.bp, cfg.seq_len, stride,
                              subject_id=rec.subject_id,
                              session_label=rec.session_label):
            stats = ckpt.stats_for(w.subject_id)
            raw_targets.append(w.y)
            samples.append(TrainingSample(
                x=zscore_apply(w.x, stats),
                y=w.y / ckpt.target_maxima,
                subject_id=w.subject_id, session_label=w.session_label,
                offset=w.offset,
            ))
    if not samples:
        raise EmptyInput("no evaluation windows")
    scaled_targets = np.stack([s.y for s in samples])
    overflow = float((scaled_targets > 1.0).mean())
    if overflow > 0:
        logger.info("%s: %.2f%% of target values exceed the training maxima",
                    session_label or "eval", 100.0 * overflow)

    pred = denormalize_targets(predict_samples(ckpt.params, samples),
                               ckpt.target_maxima).reshape(-1, 3)
    truth = np.concatenate(raw_targets).reshape(-1, 3)
    subjects = np.repeat([s.subject_id for s in samples], cfg.seq_len)
    macro = np.mean([rmse(pred[subjects == subj], truth[subjects == subj])
                     for subj in sorted(set(subjects))], axis=0)
    return SessionEval(
        session_label=session_label,
        rmse=rmse(pred, truth),
        rmse_macro=macro,
        bland_altman=[bland_altman(pred[:, c], truth[:, c]) for c in range(3)],
        scaling_overflow_fraction=overflow,
        num_windows=len(samples),
    )


def multiday_eval(ckpt: Checkpoint,
                  sessions: dict[str, Sequence[SequenceRecord]],
                  stride: Optional[int] = None, model_id: str = "",
                  dataset_id: str = "") -> MultidayReport:
    """Evaluate one frozen checkpoint across sessions, in dict order."""
    if not sessions:
        raise MissingSession("no sessions to evaluate")
    evals = [evaluate_checkpoint(ckpt, records, session_label=label, stride=stride)
             for label, records in sessions.items()]
    return MultidayReport(sessions=evals, model_id=model_id,
                          dataset_id=dataset_id)


# --- model comparison table ---------------------------------------------------


@dataclass(eq=False)
class ReportRow:
    model: str
    rmse: dict[str, Optional[float]]

    def to_dict(self) -> dict:
        out: dict = {"model": self.model}
        out.update({f"rmse_{ch}": self.rmse.get(ch) for ch in CHANNEL_NAMES})
        return out


@dataclass(eq=False)
class ComparisonReport:
    rows: list[ReportRow]
    footer: str = REFERENCE_FOOTER

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows], "footer": self.footer}

    def render(self) -> str:
        header = f"{'model':<14}" + "".join(f"{ch.upper():>10}" for ch in CHANNEL_NAMES)
        lines = [header, "-" * len(header)]
        for row in self.rows:
            cells = "".join(
                f"{row.rmse.get(ch):>10.3f}" if row.rmse.get(ch) is not None
                else f"{'-':>10}"
                for ch in CHANNEL_NAMES
            )
            lines.append(f"{row.model:<14}" + cells)
        lines.append("")
        lines.append(self.footer)
        return "\n".join(lines)


def _row_split(records: Sequence[SequenceRecord], train_fraction: float = 0.7):
    """Per-record time split into contiguous head (train) and tail (test)."""
    train_x, train_y, test_x, test_y = [], [], [], []
    per_record_test = []
    per_record_train = []
    for rec in records:
        cut = int(round(len(rec.features) * train_fraction))
        if cut == 0 or cut == len(rec.features):
            raise DataError(f"record {rec.subject_id} too short for a row split")
        train_x.append(rec.features[:cut])
        train_y.append(rec.bp[:cut])
        test_x.append(rec.features[cut:])
        test_y.append(rec.bp[cut:])
        per_record_train.append((rec.features[:cut], rec.bp[:cut]))
        per_record_test.append((rec.features[cut:], rec.bp[cut:]))
    return (np.concatenate(train_x), np.concatenate(train_y),
            np.concatenate(test_x), np.concatenate(test_y),
            per_record_train, per_record_test)


def baseline_fits(records: Sequence[SequenceRecord],
                  train_fraction: float = 0.7):
    """Fit and score the four classical baselines on a per-record time split.

    Returns ``(rows, predictions)``: comparison-table rows, and per model
    the test-tail predictions with aligned truth, as
    ``{name: (pred, truth)}`` with matching shapes (PTT-Chen is SBP-only,
    so its pair is one column wide).
    """
    (train_x, train_y, test_x, test_y,
     per_record_train, per_record_test) = _row_split(records, train_fraction)
    rows: list[ReportRow] = []
    predictions: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    chen = PttChen().fit(train_x, train_y)
    chen_pred = chen.predict(test_x)
    predictions["PTT-Chen"] = (chen_pred[:, None], test_y[:, :1])
    rows.append(ReportRow("PTT-Chen", {"sbp": float(rmse(chen_pred, test_y[:, 0])),
                                       "dbp": None, "mbp": None}))

    poon = PttPoon().fit(train_x, train_y)
    poon_pred = poon.predict(test_x)
    predictions["PTT-Poon"] = (poon_pred, test_y)
    poon_rmse = rmse(poon_pred, test_y)
    rows.append(ReportRow("PTT-Poon",
                          {ch: float(poon_rmse[i]) for i, ch in enumerate(CHANNEL_NAMES)}))

    blr = RidgeRegression(alpha=1.0).fit(train_x, train_y)
    blr_pred = blr.predict(test_x)
    predictions["BLR"] = (blr_pred, test_y)
    blr_rmse = rmse(blr_pred, test_y)
    rows.append(ReportRow("BLR",
                          {ch: float(blr_rmse[i]) for i, ch in enumerate(CHANNEL_NAMES)}))

    # The tracker needs contiguous data: fit on the longest record's
    # training head, filter each test tail separately.
    fit_x, fit_y = max(per_record_train, key=lambda pair: len(pair[0]))
    kalman = KalmanFilterModel().fit(fit_x, fit_y)
    kal_pred = np.concatenate([kalman.predict(x) for x, _ in per_record_test])
    predictions["Kalman"] = (kal_pred, test_y)
    kal_rmse = rmse(kal_pred, test_y)
    rows.append(ReportRow("Kalman",
                          {ch: float(kal_rmse[i]) for i, ch in enumerate(CHANNEL_NAMES)}))
    return rows, predictions


def baseline_rows(records: Sequence[SequenceRecord],
                  train_fraction: float = 0.7) -> list[ReportRow]:
    return baseline_fits(records, train_fraction)[0]


NETWORK_VARIANTS = (
    ("LSTM", {"num_layers": 1, "bidirectional": False}),
    ("BiLSTM", {"num_layers": 1, "bidirectional": True}),
    ("DeepRNN-2L", {"num_layers": 2}),
    ("DeepRNN-3L", {"num_layers": 3}),
    ("DeepRNN-4L", {"num_layers": 4}),
)


def network_rows(records: Sequence[SequenceRecord], train_config: TrainConfig,
                 net_config: NetworkConfig,
                 variants=NETWORK_VARIANTS) -> list[ReportRow]:
    """Train each architecture variant under one budget and score its test RMSE."""
    dataset = prepare_dataset(records, net_config.seq_len,
                              fractions=train_config.fractions,
                              seed=train_config.seed)
    rows = []
    base = net_config.to_dict()
    for name, overrides in variants:
        cfg = NetworkConfig.from_dict({**base, **overrides})
        ckpt = train(train_config, init_network(cfg, train_config.seed), dataset)
        pred = denormalize_targets(
            predict_samples(ckpt.params, dataset.test).reshape(-1, 3),
            dataset.target_maxima)
        truth = denormalize_targets(
            np.concatenate([s.y for s in dataset.test]), dataset.target_maxima)
        scores = rmse(pred, truth)
        rows.append(ReportRow(name, {ch: float(scores[i])
                                     for i, ch in enumerate(CHANNEL_NAMES)}))
    return rows


def comparison_report(records: Sequence[SequenceRecord],
                      train_config: TrainConfig, net_config: NetworkConfig,
                      include_networks: bool = True) -> ComparisonReport:
    rows = baseline_rows(records, train_fraction=train_config.fractions[0])
    if include_networks:
        rows.extend(network_rows(records, train_config, net_config))
    return ComparisonReport(rows=rows)


# --- residual ablation -----------------------------------------------------------


@dataclass(eq=False)
class AblationReport:
    """Paired runs differing only in the skip connections."""

    rmse_residual: np.ndarray
    rmse_plain: np.ndarray
    grad_norms_residual: list
    grad_norms_plain: list
    val_residual: list = field(default_factory=list)
    val_plain: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rmse_residual": {ch: float(self.rmse_residual[i])
                              for i, ch in enumerate(CHANNEL_NAMES)},
            "rmse_plain": {ch: float(self.rmse_plain[i])
                           for i, ch in enumerate(CHANNEL_NAMES)},
            "grad_norms_residual": list(self.grad_norms_residual),
            "grad_norms_plain": list(self.grad_norms_plain),
            "val_residual": list(self.val_residual),
            "val_plain": list(self.val_plain),
        }


def ablation_residual(train_config: TrainConfig, net_config: NetworkConfig,
                      dataset: SplitDataset) -> AblationReport:
    """Train the same depth with and without skips, same seed and budget."""
    if net_config.num_layers < 2:
        raise DataError("the ablation needs at least one stacked layer")
    results = {}
    for flag in (True, False):
        cfg = NetworkConfig.from_dict({**net_config.to_dict(), "residual": flag})
        ckpt = train(train_config, init_network(cfg, train_config.seed), dataset)
        pred = denormalize_targets(
            predict_samples(ckpt.params, dataset.test).reshape(-1, 3),
            dataset.target_maxima)
        truth = denormalize_targets(
            np.concatenate([s.y for s in dataset.test]), dataset.target_maxima)
        results[flag] = (rmse(pred, truth), ckpt.history)
    return AblationReport(
        rmse_residual=results[True][0],
        rmse_plain=results[False][0],
        grad_norms_residual=results[True][1]["grad_norm_mean"],
        grad_norms_plain=results[False][1]["grad_norm_mean"],
        val_residual=results[True][1]["val_loss"],
        val_plain=results[False][1]["val_loss"],
    )
