"""Evaluation harness: session reports, comparison tables, ablation."""

import numpy as np
import pytest

from seqpress.errors import DataError, EmptyInput, MissingSession
from seqpress.evaluation import (
    NETWORK_VARIANTS,
    REFERENCE_FOOTER,
    AblationReport,
    ComparisonReport,
    ablation_residual,
    baseline_fits,
    baseline_rows,
    comparison_report,
    evaluate_checkpoint,
    multiday_eval,
    network_rows,
)
from seqpress.metrics import rmse
from seqpress.network import NetworkConfig, init_network
from seqpress.synth import SynthConfig, generate_feature_cohort
from seqpress.training import (
    CHANNEL_NAMES,
    Checkpoint,
    TrainConfig,
    denormalize_targets,
    make_windows,
    multitask_vs_singletask_harness,
    predict_samples,
    prepare_dataset,
)

SEQ_LEN = 8


def _cohort(seed=9, session_index=0, session_label=None, **overrides):
    defaults = dict(num_subjects=2, samples_per_subject=120,
                    observation_noise=0.5, bp_noise=2.0)
    defaults.update(overrides)
    return generate_feature_cohort(SynthConfig(**defaults), seed,
                                   session_index=session_index,
                                   session_label=session_label)


def _untrained_checkpoint(records, hidden_size=6, num_layers=2, seed=1):
    """Scaling state from the data, parameters straight from init."""
    dataset = prepare_dataset(records, SEQ_LEN, seed=seed)
    cfg = NetworkConfig(hidden_size=hidden_size, num_layers=num_layers,
                        seq_len=SEQ_LEN)
    return Checkpoint(params=init_network(cfg, seed),
                      target_maxima=dataset.target_maxima,
                      feature_stats=dataset.feature_stats)


def test_session_eval_matches_manual_recomputation():
    """Pooled RMSE must equal a by-hand pass over the same windows."""
    records = _cohort().records
    ckpt = _untrained_checkpoint(records)
    result = evaluate_checkpoint(ckpt, records, session_label="day1")

    from seqpress.signals import zscore_apply
    from seqpress.training import TrainingSample

    samples, truth = [], []
    for rec in records:
        for w in make_windows(rec.features, rec.bp, SEQ_LEN, SEQ_LEN,
                              subject_id=rec.subject_id,
                              session_label=rec.session_label):
            stats = ckpt.stats_for(w.subject_id)
            samples.append(TrainingSample(x=zscore_apply(w.x, stats),
                                          y=w.y / ckpt.target_maxima,
                                          subject_id=w.subject_id))
            truth.append(w.y)
    pred = denormalize_targets(predict_samples(ckpt.params, samples),
                               ckpt.target_maxima).reshape(-1, 3)
    expected = rmse(pred, np.concatenate(truth).reshape(-1, 3))

    assert result.session_label == "day1"
    assert result.num_windows == len(samples)
    assert np.allclose(result.rmse, expected, rtol=1e-12)
    assert result.rmse.shape == (3,) and result.rmse_macro.shape == (3,)
    assert len(result.bland_altman) == 3


def test_session_eval_macro_is_mean_of_per_subject_rmse():
    records = _cohort().records
    ckpt = _untrained_checkpoint(records)
    result = evaluate_checkpoint(ckpt, records)

    per_subject = [evaluate_checkpoint(ckpt, [rec]).rmse for rec in records]
    assert np.allclose(result.rmse_macro, np.mean(per_subject, axis=0), rtol=1e-12)


def test_session_eval_to_dict_reports_both_conventions():
    records = _cohort().records
    ckpt = _untrained_checkpoint(records)
    out = evaluate_checkpoint(ckpt, records, session_label="day2").to_dict()
    assert out["session_label"] == "day2"
    assert set(out["rmse_pooled"]) == set(CHANNEL_NAMES)
    assert set(out["rmse_macro"]) == set(CHANNEL_NAMES)
    assert set(out["bland_altman"]) == set(CHANNEL_NAMES)
    for ch in CHANNEL_NAMES:
        assert {"bias", "sd", "lower", "upper",
                "fraction_within"} <= set(out["bland_altman"][ch])


def test_scaling_overflow_fraction_counts_targets_beyond_maxima():
    records = _cohort().records
    ckpt = _untrained_checkpoint(records)
    # maxima measured on these very records: nothing exceeds them
    assert evaluate_checkpoint(ckpt, records).scaling_overflow_fraction == 0.0
    ckpt.target_maxima = ckpt.target_maxima / 2.0
    assert evaluate_checkpoint(ckpt, records).scaling_overflow_fraction > 0.5


def test_evaluate_checkpoint_rejects_empty_record_list():
    ckpt = _untrained_checkpoint(_cohort().records)
    with pytest.raises(EmptyInput):
        evaluate_checkpoint(ckpt, [])


def test_multiday_eval_keeps_session_order_and_ids():
    day1 = _cohort(session_index=0, session_label="day1")
    month6 = _cohort(session_index=3, session_label="month6",
                     session_drift=2.0)
    ckpt = _untrained_checkpoint(day1.records)
    report = multiday_eval(ckpt, {"day1": day1.records, "month6": month6.records},
                           model_id="frozen", dataset_id="synth-9")
    assert [s.session_label for s in report.sessions] == ["day1", "month6"]
    assert set(report.rmse_by_session()) == {"day1", "month6"}
    out = report.to_dict()
    assert out["model_id"] == "frozen"
    assert out["dataset_id"] == "synth-9"
    assert [s["session_label"] for s in out["sessions"]] == ["day1", "month6"]


def test_multiday_eval_requires_at_least_one_session():
    ckpt = _untrained_checkpoint(_cohort().records)
    with pytest.raises(MissingSession, match="no sessions"):
        multiday_eval(ckpt, {})


def test_baseline_fits_returns_consistent_rows_and_predictions():
    records = _cohort().records
    rows, predictions = baseline_fits(records, train_fraction=0.7)

    assert [r.model for r in rows] == ["PTT-Chen", "PTT-Poon", "BLR", "Kalman"]
    assert set(predictions) == {"PTT-Chen", "PTT-Poon", "BLR", "Kalman"}

    chen_pred, chen_truth = predictions["PTT-Chen"]
    assert chen_pred.shape == chen_truth.shape and chen_pred.shape[1] == 1
    for name in ("PTT-Poon", "BLR", "Kalman"):
        pred, truth = predictions[name]
        assert pred.shape == truth.shape and pred.shape[1] == 3

    # table cells must agree with the returned prediction arrays
    by_name = {row.model: row for row in rows}
    assert by_name["PTT-Chen"].rmse["sbp"] == pytest.approx(
        float(rmse(chen_pred.ravel(), chen_truth.ravel())), rel=1e-12)
    assert by_name["PTT-Chen"].rmse["dbp"] is None
    assert by_name["PTT-Chen"].rmse["mbp"] is None
    for name in ("PTT-Poon", "BLR", "Kalman"):
        pred, truth = predictions[name]
        scores = rmse(pred, truth)
        for i, ch in enumerate(CHANNEL_NAMES):
            assert by_name[name].rmse[ch] == pytest.approx(float(scores[i]), rel=1e-12)


def test_baseline_rows_is_the_table_half_of_baseline_fits():
    records = _cohort().records
    rows = baseline_rows(records)
    again, _ = baseline_fits(records)
    assert [r.to_dict() for r in rows] == [r.to_dict() for r in again]


def test_comparison_report_baselines_only_and_footer():
    records = _cohort().records
    report = comparison_report(records, TrainConfig(max_epochs=1, seed=0),
                               NetworkConfig(hidden_size=4, seq_len=SEQ_LEN),
                               include_networks=False)
    assert [r.model for r in report.rows] == ["PTT-Chen", "PTT-Poon", "BLR", "Kalman"]
    assert report.footer == REFERENCE_FOOTER
    assert "3.73" in report.footer and "2.43" in report.footer
    assert "context only" in report.footer

    text = report.render()
    for name in ("PTT-Chen", "PTT-Poon", "BLR", "Kalman"):
        assert name in text
    assert text.strip().endswith(REFERENCE_FOOTER)
    # the SBP-only row renders dashes for its missing channels
    chen_line = next(line for line in text.splitlines()
                     if line.startswith("PTT-Chen"))
    assert chen_line.count("-") >= 2


def test_network_variant_names_cover_all_depths():
    assert [name for name, _ in NETWORK_VARIANTS] == \
        ["LSTM", "BiLSTM", "DeepRNN-2L", "DeepRNN-3L", "DeepRNN-4L"]
    by_name = dict(NETWORK_VARIANTS)
    assert by_name["LSTM"] == {"num_layers": 1, "bidirectional": False}
    assert by_name["BiLSTM"] == {"num_layers": 1, "bidirectional": True}
    for depth in (2, 3, 4):
        assert by_name[f"DeepRNN-{depth}L"] == {"num_layers": depth}


def test_network_rows_trains_each_requested_variant():
    records = _cohort().records
    rows = network_rows(records,
                        TrainConfig(max_epochs=1, batch_size=8, seed=0),
                        NetworkConfig(hidden_size=4, seq_len=SEQ_LEN),
                        variants=(("LSTM", {"num_layers": 1, "bidirectional": False}),
                                  ("DeepRNN-2L", {"num_layers": 2})))
    assert [r.model for r in rows] == ["LSTM", "DeepRNN-2L"]
    for row in rows:
        for ch in CHANNEL_NAMES:
            value = row.rmse[ch]
            assert value is not None and np.isfinite(value) and value > 0


def test_report_row_to_dict_uses_channel_column_names():
    rows = baseline_rows(_cohort().records)
    out = rows[1].to_dict()
    assert set(out) == {"model", "rmse_sbp", "rmse_dbp", "rmse_mbp"}


def test_ablation_trains_paired_runs_and_reports_histories():
    records = _cohort().records
    dataset = prepare_dataset(records, SEQ_LEN, seed=2)
    config = TrainConfig(max_epochs=2, batch_size=8, seed=2)
    report = ablation_residual(config,
                               NetworkConfig(hidden_size=4, num_layers=2,
                                             seq_len=SEQ_LEN),
                               dataset)
    assert isinstance(report, AblationReport)
    assert report.rmse_residual.shape == (3,)
    assert report.rmse_plain.shape == (3,)
    assert len(report.grad_norms_residual) == 2
    assert len(report.grad_norms_plain) == 2
    assert len(report.val_residual) == 2 and len(report.val_plain) == 2
    out = report.to_dict()
    assert set(out) == {"rmse_residual", "rmse_plain", "grad_norms_residual",
                        "grad_norms_plain", "val_residual", "val_plain"}
    assert set(out["rmse_residual"]) == set(CHANNEL_NAMES)


def test_ablation_requires_a_stacked_layer():
    records = _cohort().records
    dataset = prepare_dataset(records, SEQ_LEN, seed=2)
    with pytest.raises(DataError, match="stacked"):
        ablation_residual(TrainConfig(max_epochs=1, seed=0),
                          NetworkConfig(hidden_size=4, num_layers=1,
                                        seq_len=SEQ_LEN),
                          dataset)


def test_multitask_harness_row_layout():
    records = _cohort().records
    dataset = prepare_dataset(records, SEQ_LEN, seed=3)
    report = multitask_vs_singletask_harness(
        TrainConfig(max_epochs=1, batch_size=8, seed=3),
        NetworkConfig(hidden_size=4, num_layers=2, seq_len=SEQ_LEN),
        dataset, depths=(2,))
    assert [row.model for row in report.rows] == ["DeepRNN-2L", "DeepRNN-2L†"]
    assert [row.multitask for row in report.rows] == [False, True]
    for row in report.rows:
        assert set(row.rmse) == set(CHANNEL_NAMES)
        assert all(np.isfinite(v) for v in row.rmse.values())
    table = report.to_table()
    assert set(table[0]) == {"model", "multitask", "rmse_sbp", "rmse_dbp", "rmse_mbp"}
