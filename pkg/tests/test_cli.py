"""Command-line front end: exit codes, file outputs, determinism."""

import csv
import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from seqpress import __version__
from seqpress.checkpoint import load_checkpoint
from seqpress.cli import main
from seqpress.fileio import (
    read_features_csv,
    read_history_csv,
    read_waveform_csv,
    write_waveform_binary,
)

TINY_NET = ["--hidden-size", "4", "--num-layers", "2", "--seq-len", "8"]
TINY_TRAIN = ["--batch-size", "4", "--max-epochs", "2"]


def _synth_args(out_dir, seed=5):
    return ["synth", "--kind", "features", "--subjects", "2", "--samples", "60",
            "--sessions", "2", "--session-labels", "day1,day2",
            "--seed", str(seed), "--out-dir", str(out_dir)]


def _dir_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(_synth_args(out)) == 0
    return out / "cohort"


@pytest.fixture(scope="module")
def train_dir(cohort_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = main(["train", "--data", str(cohort_dir), "--out-dir", str(out),
                 "--seed", "0", *TINY_NET, *TINY_TRAIN])
    assert code == 0
    return out


# --- exit codes ----------------------------------------------------------------


def test_no_command_prints_help_and_fails(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().out.lower()


def test_unknown_command_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["polish"])
    assert exc.value.code == 1


def test_missing_required_flag_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 1


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_missing_cohort_exits_2(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert main(["train", "--data", str(missing),
                 "--out-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "data error" in err
    assert "nowhere" in err


def test_missing_model_file_exits_2(cohort_dir, tmp_path, capsys):
    assert main(["eval", "--model", str(tmp_path / "ghost.sqpc"),
                 "--data", str(cohort_dir), "--out-dir", str(tmp_path)]) == 2
    assert "data error" in capsys.readouterr().err


def test_bad_config_file_exits_2(tmp_path, capsys):
    config = tmp_path / "broken.json"
    config.write_text("{not json")
    assert main(["--config", str(config), "synth",
                 "--out-dir", str(tmp_path)]) == 2
    assert "not valid JSON" in capsys.readouterr().err


# --- synth ----------------------------------------------------------------------


def test_synth_writes_cohort_and_oracle(cohort_dir):
    names = set(os.listdir(cohort_dir))
    assert "cohort.json" in names and "oracle.json" in names
    for subject in ("s00", "s01"):
        for session in ("day1", "day2"):
            base = f"{subject}__{session}"
            assert base + ".features.csv" in names
            assert base + ".bp.csv" in names
            assert base + ".meta.json" in names
    with open(cohort_dir / "oracle.json") as fh:
        oracle = json.load(fh)
    assert len(oracle["memoryless_rmse"]) == 3
    assert set(oracle["frozen_rmse_by_session"]) == {"day1", "day2"}


def test_synth_is_byte_identical_per_seed(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(_synth_args(a, seed=7)) == 0
    assert main(_synth_args(b, seed=7)) == 0
    assert main(_synth_args(c, seed=8)) == 0
    assert _dir_bytes(a) == _dir_bytes(b)
    assert _dir_bytes(a) != _dir_bytes(c)


def test_global_flags_accepted_before_and_after_subcommand(tmp_path):
    before, after = tmp_path / "before", tmp_path / "after"
    args = ["--kind", "features", "--subjects", "2", "--samples", "60"]
    assert main(["--seed", "7", "--out-dir", str(before), "synth", *args]) == 0
    assert main(["synth", "--seed", "7", "--out-dir", str(after), *args]) == 0
    assert _dir_bytes(before) == _dir_bytes(after)


# --- train / eval -----------------------------------------------------------------


def test_train_writes_model_and_history(train_dir):
    ckpt = load_checkpoint(train_dir / "model.sqpc")
    assert ckpt.params.config.hidden_size == 4
    assert ckpt.params.config.num_layers == 2
    assert ckpt.metadata["epochs_run"] == 2
    history = read_history_csv(train_dir / "history.csv")
    assert history["epoch"] == [1, 2]
    assert all(np.isfinite(history["train_loss"]))


def test_config_file_sections_feed_train_and_flags_override(cohort_dir, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "network": {"hidden_size": 4, "num_layers": 2, "seq_len": 8},
        "train": {"max_epochs": 1, "batch_size": 4},
    }))
    out1 = tmp_path / "from_file"
    assert main(["train", "--data", str(cohort_dir), "--config", str(config),
                 "--out-dir", str(out1)]) == 0
    assert read_history_csv(out1 / "history.csv")["epoch"] == [1]

    out2 = tmp_path / "flag_wins"
    assert main(["train", "--data", str(cohort_dir), "--config", str(config),
                 "--out-dir", str(out2), "--max-epochs", "2"]) == 0
    assert read_history_csv(out2 / "history.csv")["epoch"] == [1, 2]
    ckpt = load_checkpoint(out2 / "model.sqpc")
    assert ckpt.params.config.hidden_size == 4


def test_eval_writes_json_and_plot_tables(cohort_dir, train_dir, tmp_path, capsys):
    out = tmp_path / "eval"
    code = main(["eval", "--model", str(train_dir / "model.sqpc"),
                 "--data", str(cohort_dir), "--out-dir", str(out)])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "day1" in stdout and "day2" in stdout

    with open(out / "eval.json") as fh:
        report = json.load(fh)
    assert report["model_id"].endswith("model.sqpc")
    assert [s["session_label"] for s in report["sessions"]] == ["day1", "day2"]
    for session in report["sessions"]:
        assert set(session["rmse_pooled"]) == {"sbp", "dbp", "mbp"}
        assert set(session["rmse_macro"]) == {"sbp", "dbp", "mbp"}

    header, rows = _read_rows(out / "multiday_rmse.csv")
    assert header == ["session", "channel", "rmse_pooled", "rmse_macro"]
    assert len(rows) == 6  # 2 sessions x 3 channels
    assert {r[0] for r in rows} == {"day1", "day2"}

    header, rows = _read_rows(out / "multiday_bars.csv")
    assert header == ["session", "sbp", "dbp", "mbp"]
    assert [r[0] for r in rows] == ["day1", "day2"]

    header, rows = _read_rows(out / "bland_altman.csv")
    assert header == ["session", "channel", "mean", "diff"]
    assert len(rows) > 0
    assert all(len(r) == 4 for r in rows)


# --- baselines ------------------------------------------------------------------


def test_baseline_all_writes_per_model_predictions(cohort_dir, tmp_path):
    out = tmp_path / "baselines"
    assert main(["baseline", "--data", str(cohort_dir),
                 "--out-dir", str(out)]) == 0
    with open(out / "baselines.json") as fh:
        table = json.load(fh)
    assert [r["model"] for r in table["rows"]] == \
        ["PTT-Chen", "PTT-Poon", "BLR", "Kalman"]

    header, rows = _read_rows(out / "baseline_ptt-chen.predictions.csv")
    assert header == ["pred_sbp", "truth_sbp"]
    assert len(rows) > 0
    for slug in ("ptt-poon", "linreg", "kalman"):
        header, rows = _read_rows(out / f"baseline_{slug}.predictions.csv")
        assert header == ["pred_sbp", "pred_dbp", "pred_mbp",
                          "truth_sbp", "truth_dbp", "truth_mbp"]
        assert len(rows) > 0


def test_baseline_single_model_filter(cohort_dir, tmp_path):
    out = tmp_path / "one"
    assert main(["baseline", "--data", str(cohort_dir), "--model", "linreg",
                 "--out-dir", str(out)]) == 0
    with open(out / "baselines.json") as fh:
        table = json.load(fh)
    assert [r["model"] for r in table["rows"]] == ["BLR"]
    produced = [n for n in os.listdir(out) if n.endswith(".predictions.csv")]
    assert produced == ["baseline_linreg.predictions.csv"]


# --- gradcheck -------------------------------------------------------------------


def test_gradcheck_passes_and_writes_report(tmp_path, capsys):
    assert main(["gradcheck", "--seed", "0", "--out-dir", str(tmp_path)]) == 0
    assert "gradient check passed" in capsys.readouterr().out
    with open(tmp_path / "gradcheck.json") as fh:
        payload = json.load(fh)
    assert payload["parameters"]["max_rel_err"] < 1e-5
    assert payload["decomposition"]["telescoping_max_abs_err"] < 1e-12


def test_gradcheck_unreachable_tolerance_exits_3(tmp_path, capsys):
    code = main(["gradcheck", "--tolerance", "1e-18", "--coords", "40",
                 "--hidden-size", "4", "--num-layers", "2",
                 "--out-dir", str(tmp_path)])
    assert code == 3
    assert "numerical error" in capsys.readouterr().err


# --- extract ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def waveform_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("waves")
    code = main(["synth", "--kind", "waveforms", "--subjects", "1",
                 "--beats", "12", "--seed", "2", "--out-dir", str(out)])
    assert code == 0
    return out / "waveforms" / "s00__session0.waveform.csv"


def test_extract_writes_features_and_meta(waveform_csv, tmp_path):
    out = tmp_path / "features"
    code = main(["extract", str(waveform_csv), "--subject", "s00",
                 "--session", "day1", "--out-base", "rec",
                 "--out-dir", str(out)])
    assert code == 0
    features = read_features_csv(out / "rec.features.csv")
    assert len(features) >= 8
    assert np.isfinite(features.values).all()
    with open(out / "rec.meta.json") as fh:
        meta = json.load(fh)
    assert meta["subject_id"] == "s00"
    assert meta["session_label"] == "day1"
    assert meta["num_beats"] == len(features)


def test_extract_reads_binary_waveforms_identically(waveform_csv, tmp_path):
    record = read_waveform_csv(waveform_csv)
    binary = tmp_path / "rec.sqpw"
    write_waveform_binary(binary, record)

    out_csv, out_bin = tmp_path / "from_csv", tmp_path / "from_bin"
    assert main(["extract", str(waveform_csv), "--out-base", "rec",
                 "--out-dir", str(out_csv)]) == 0
    assert main(["extract", str(binary), "--out-base", "rec",
                 "--out-dir", str(out_bin)]) == 0
    a = (out_csv / "rec.features.csv").read_bytes()
    b = (out_bin / "rec.features.csv").read_bytes()
    assert a == b


def test_extract_flat_signal_exits_2(tmp_path, capsys):
    path = tmp_path / "flat.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "ecg", "ppg"])
        for i in range(250):
            writer.writerow([i / 125.0, 0.0, 0.0])
    assert main(["extract", str(path), "--out-dir", str(tmp_path)]) == 2
    assert "data error" in capsys.readouterr().err


# --- finetune / ablate / report ---------------------------------------------------


def test_finetune_writes_both_stages(cohort_dir, tmp_path):
    day1 = tmp_path / "day1_synth"
    assert main(["synth", "--kind", "features", "--subjects", "2",
                 "--samples", "60", "--session-labels", "day1",
                 "--seed", "8", "--out-dir", str(day1)]) == 0
    out = tmp_path / "finetune"
    code = main(["finetune", "--data", str(cohort_dir),
                 "--day1", str(day1 / "cohort"), "--out-dir", str(out),
                 "--seed", "0", "--finetune-epochs", "1",
                 *TINY_NET, "--batch-size", "4", "--max-epochs", "1"])
    assert code == 0
    assert load_checkpoint(out / "pretrained.sqpc").params.config.hidden_size == 4
    assert load_checkpoint(out / "finetuned.sqpc").params.config.hidden_size == 4
    with open(out / "finetune.json") as fh:
        report = json.load(fh)
    assert set(report) == {"pretrained", "finetuned"}
    for scores in report.values():
        assert set(scores) == {"sbp", "dbp", "mbp"}


def test_ablate_writes_paired_results(cohort_dir, tmp_path):
    out = tmp_path / "ablate"
    code = main(["ablate", "--data", str(cohort_dir), "--out-dir", str(out),
                 "--seed", "0", *TINY_NET, "--batch-size", "4",
                 "--max-epochs", "1"])
    assert code == 0
    with open(out / "ablation.json") as fh:
        report = json.load(fh)
    assert set(report["rmse_residual"]) == {"sbp", "dbp", "mbp"}
    assert set(report["rmse_plain"]) == {"sbp", "dbp", "mbp"}
    assert len(report["grad_norms_residual"]) == 1


def test_report_baselines_only(cohort_dir, tmp_path, capsys):
    out = tmp_path / "report"
    code = main(["report", "--data", str(cohort_dir), "--no-networks",
                 "--out-dir", str(out)])
    assert code == 0
    stdout = capsys.readouterr().out
    for name in ("PTT-Chen", "PTT-Poon", "BLR", "Kalman"):
        assert name in stdout
    assert "context only" in stdout
    with open(out / "report.json") as fh:
        report = json.load(fh)
    assert len(report["rows"]) == 4
    assert "3.73" in report["footer"]


# --- installed entry point ---------------------------------------------------------


def test_console_script_is_installed():
    exe = shutil.which("seqpress")
    if exe:
        proc = subprocess.run([exe, "--version"], capture_output=True, text=True)
    else:
        proc = subprocess.run([sys.executable, "-m", "seqpress.cli", "--version"],
                              capture_output=True, text=True)
    assert proc.returncode == 0
    assert __version__ in proc.stdout
