"""Command-line interface.

Exit codes: 0 on success, 1 for usage problems, 2 for data errors
(malformed/insufficient input), 3 for numerical failures (divergence,
singular covariances, failed gradient verification).

A JSON config file passed with ``--config`` may hold ``network``,
``train``, and ``synth`` sections; explicit command-line flags override
file values, which override the built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__, rng
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DataError, NumericalError
from .evaluation import (
    ablation_residual,
    baseline_fits,
    comparison_report,
    evaluate_checkpoint,
    multiday_eval,
)
from .fileio import (
    read_cohort,
    read_waveform_binary,
    read_waveform_csv,
    write_bp_csv,
    write_cohort,
    write_features_csv,
    write_history_csv,
    write_json,
    write_table_csv,
    write_waveform_csv,
)
from .gradcheck import finite_difference_check, residual_gradient_decomposition_check
from .network import NetworkConfig, forward_pass, init_network
from .signals import extract_features
from .synth import SynthConfig, generate_feature_cohort, generate_waveform_cohort
from .training import (
    CHANNEL_NAMES,
    TrainConfig,
    denormalize_targets,
    pretrain_finetune,
    prepare_dataset,
    train,
)

logger = logging.getLogger(__name__)


class Parser(argparse.ArgumentParser):
    """Argument parser whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- config plumbing ---------------------------------------------------------


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise DataError("config file must hold a JSON object")
    return data


def _merge(section: dict, overrides: dict) -> dict:
    out = dict(section)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def _network_config(args, file_cfg: dict) -> NetworkConfig:
    overrides = {
        "hidden_size": getattr(args, "hidden_size", None),
        "num_layers": getattr(args, "num_layers", None),
        "seq_len": getattr(args, "seq_len", None),
    }
    if getattr(args, "unidirectional", False):
        overrides["bidirectional"] = False
    if getattr(args, "no_residual", False):
        overrides["residual"] = False
    merged = _merge(file_cfg.get("network", {}), overrides)
    return NetworkConfig.from_dict({**NetworkConfig().to_dict(), **merged})


def _train_config(args, file_cfg: dict) -> TrainConfig:
    overrides = {
        "batch_size": getattr(args, "batch_size", None),
        "learning_rate": getattr(args, "learning_rate", None),
        "max_epochs": getattr(args, "max_epochs", None),
        "patience": getattr(args, "patience", None),
        "l2_penalty": getattr(args, "l2_penalty", None),
        "clip_norm": getattr(args, "clip_norm", None),
        "seed": args.seed,
    }
    merged = _merge(file_cfg.get("train", {}), overrides)
    return TrainConfig.from_dict({**TrainConfig().to_dict(), **merged})


def _synth_config(args, file_cfg: dict) -> SynthConfig:
    overrides = {
        "num_subjects": getattr(args, "subjects", None),
        "samples_per_subject": getattr(args, "samples", None),
        "latent_dim": getattr(args, "latent_dim", None),
        "temporal_coupling": getattr(args, "coupling", None),
        "observation_noise": getattr(args, "obs_noise", None),
        "feature_warp": getattr(args, "warp", None),
        "session_drift": getattr(args, "session_drift", None),
        "cohort_shift": getattr(args, "cohort_shift", None),
        "subject_spread": getattr(args, "subject_spread", None),
        "bp_noise": getattr(args, "bp_noise", None),
        "beats_per_record": getattr(args, "beats", None),
        "waveform_sample_rate": getattr(args, "fs", None),
        "waveform_noise": getattr(args, "waveform_noise", None),
    }
    merged = _merge(file_cfg.get("synth", {}), overrides)
    return SynthConfig.from_dict({**SynthConfig().to_dict(), **merged})


def _out_path(args, name: str) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _read_waveform(path, subject: str, session: str):
    if str(path).endswith(".sqpw"):
        return read_waveform_binary(path, subject_id=subject, session_label=session)
    return read_waveform_csv(path, subject_id=subject, session_label=session)


def _group_sessions(records):
    sessions: dict[str, list] = {}
    for rec in records:
        sessions.setdefault(rec.session_label, []).append(rec)
    return sessions


def _print(line: str = ""):
    print(line)


# --- subcommands -------------------------------------------------------------


def cmd_extract(args, file_cfg) -> int:
    record = _read_waveform(args.waveform, args.subject, args.session)
    features = extract_features(record.ecg, record.ppg, record.sample_rate)
    base = args.out_base or os.path.splitext(os.path.basename(args.waveform))[0]
    features_path = _out_path(args, base + ".features.csv")
    write_features_csv(features_path, features)
    write_json(_out_path(args, base + ".meta.json"), {
        "subject_id": args.subject,
        "session_label": args.session,
        "sample_rate": record.sample_rate,
        "num_beats": len(features),
        "skipped": [[int(i), reason] for i, reason in features.skipped],
    })
    _print(f"extracted {len(features)} beats "
           f"({len(features.skipped)} skipped) -> {features_path}")
    return 0


def cmd_synth(args, file_cfg) -> int:
    cfg = _synth_config(args, file_cfg)
    if args.kind == "features":
        labels = (args.session_labels.split(",") if args.session_labels
                  else [f"session{k}" for k in range(args.sessions)])
        if len(labels) != args.sessions:
            raise DataError(f"{args.sessions} sessions but {len(labels)} labels")
        records = []
        floors = {}
        oracle = None
        for k, label in enumerate(labels):
            cohort = generate_feature_cohort(cfg, args.seed, session_index=k,
                                             session_label=label)
            records.extend(cohort.records)
            oracle = cohort.oracle
            floors[label] = cohort.oracle.frozen_rmse(k).tolist()
        out = _out_path(args, "cohort")
        write_cohort(out, records, extra={"synth_config": cfg.to_dict(),
                                          "seed": args.seed})
        write_json(os.path.join(out, "oracle.json"), {
            "memoryless_rmse": oracle.per_channel_rmse().tolist(),
            "frozen_rmse_by_session": floors,
        })
        _print(f"wrote {len(records)} feature records -> {out}")
        return 0

    cohort = generate_waveform_cohort(cfg, args.seed)
    out = os.path.join(args.out_dir, "waveforms")
    os.makedirs(out, exist_ok=True)
    index = []
    for rec in cohort.records:
        base = f"{rec.waveform.subject_id}__{rec.waveform.session_label}"
        write_waveform_csv(os.path.join(out, base + ".waveform.csv"), rec.waveform)
        write_features_csv(os.path.join(out, base + ".truth.features.csv"), rec.truth)
        write_bp_csv(os.path.join(out, base + ".bp.csv"), rec.bp)
        index.append({"subject_id": rec.waveform.subject_id,
                      "session_label": rec.waveform.session_label,
                      "waveform": base + ".waveform.csv",
                      "truth_features": base + ".truth.features.csv",
                      "bp": base + ".bp.csv"})
    write_json(os.path.join(out, "waveforms.json"),
               {"format_version": 1, "records": index,
                "synth_config": cfg.to_dict(), "seed": args.seed})
    _print(f"wrote {len(index)} waveform records -> {out}")
    return 0


def cmd_train(args, file_cfg) -> int:
    records = read_cohort(args.data)
    net_cfg = _network_config(args, file_cfg)
    train_cfg = _train_config(args, file_cfg)
    dataset = prepare_dataset(records, net_cfg.seq_len, stride=args.stride,
                              fractions=train_cfg.fractions, seed=train_cfg.seed)
    ckpt = train(train_cfg, init_network(net_cfg, train_cfg.seed), dataset)
    model_path = _out_path(args, args.model_name)
    save_checkpoint(model_path, ckpt)
    write_history_csv(_out_path(args, "history.csv"), ckpt.history)
    meta = ckpt.metadata
    _print(f"trained {meta['epochs_run']} epochs "
           f"(best epoch {meta['best_epoch']}, "
           f"val loss {meta['best_val_loss']:.6g}) -> {model_path}")
    if dataset.test:
        result = evaluate_checkpoint(ckpt, records, session_label="held-out windows")
        line = "  ".join(f"{ch}={result.rmse[i]:.3f}"
                         for i, ch in enumerate(CHANNEL_NAMES))
        _print(f"whole-cohort RMSE (mmHg): {line}")
    return 0


def cmd_finetune(args, file_cfg) -> int:
    static_records = read_cohort(args.data)
    day1_records = read_cohort(args.day1)
    net_cfg = _network_config(args, file_cfg)
    train_cfg = _train_config(args, file_cfg)
    if args.finetune_epochs is not None:
        train_cfg.finetune_max_epochs = args.finetune_epochs
    dataset = prepare_dataset(static_records, net_cfg.seq_len,
                              fractions=train_cfg.fractions, seed=train_cfg.seed)
    result = pretrain_finetune(train_cfg, init_network(net_cfg, train_cfg.seed),
                               dataset, day1_records)
    save_checkpoint(_out_path(args, "pretrained.sqpc"), result.pretrained)
    save_checkpoint(_out_path(args, "finetuned.sqpc"), result.finetuned)

    truth = denormalize_targets(
        np.concatenate([s.y for s in result.day1_holdout]),
        result.pretrained.target_maxima).reshape(-1, 3)
    from .metrics import rmse as _rmse
    from .training import predict_samples
    report = {}
    for name, ckpt in (("pretrained", result.pretrained),
                       ("finetuned", result.finetuned)):
        pred = denormalize_targets(
            predict_samples(ckpt.params, result.day1_holdout),
            ckpt.target_maxima).reshape(-1, 3)
        report[name] = {ch: float(_rmse(pred[:, i], truth[:, i]))
                        for i, ch in enumerate(CHANNEL_NAMES)}
    write_json(_out_path(args, "finetune.json"), report)
    for name, scores in report.items():
        line = "  ".join(f"{ch}={v:.3f}" for ch, v in scores.items())
        _print(f"{name:>10} day-1 holdout RMSE (mmHg): {line}")
    return 0


def cmd_eval(args, file_cfg) -> int:
    ckpt = load_checkpoint(args.model)
    records = read_cohort(args.data)
    report = multiday_eval(ckpt, _group_sessions(records), stride=args.stride,
                           model_id=str(args.model), dataset_id=str(args.data))
    write_json(_out_path(args, "eval.json"), report.to_dict())
    table, bars, scatter = [], [], []
    for session in report.sessions:
        for i, ch in enumerate(CHANNEL_NAMES):
            table.append([session.session_label, ch,
                          float(session.rmse[i]), float(session.rmse_macro[i])])
            ba = session.bland_altman[i]
            scatter.extend([session.session_label, ch, m, d]
                           for m, d in zip(ba.means, ba.diffs))
        bars.append([session.session_label, *(float(v) for v in session.rmse)])
    write_table_csv(_out_path(args, "multiday_rmse.csv"),
                    ["session", "channel", "rmse_pooled", "rmse_macro"], table)
    write_table_csv(_out_path(args, "multiday_bars.csv"),
                    ["session", *CHANNEL_NAMES], bars)
    write_table_csv(_out_path(args, "bland_altman.csv"),
                    ["session", "channel", "mean", "diff"], scatter)
    for session in report.sessions:
        line = "  ".join(f"{ch}={session.rmse[i]:.3f}"
                         for i, ch in enumerate(CHANNEL_NAMES))
        _print(f"{session.session_label:>12}: {line}  "
               f"(windows={session.num_windows}, "
               f"overflow={session.scaling_overflow_fraction:.3f})")
    return 0


def cmd_baseline(args, file_cfg) -> int:
    records = read_cohort(args.data)
    rows, predictions = baseline_fits(records,
                                      train_fraction=args.train_fraction)
    wanted = {"ptt-chen": "PTT-Chen", "ptt-poon": "PTT-Poon", "linreg": "BLR",
              "kalman": "Kalman"}
    if args.model != "all":
        rows = [r for r in rows if r.model == wanted[args.model]]
    slug = {v: k for k, v in wanted.items()}
    for row in rows:
        pred, truth = predictions[row.model]
        channels = [ch for ch in CHANNEL_NAMES if row.rmse.get(ch) is not None]
        write_features = [pred[:, i] for i in range(pred.shape[1])]
        write_features += [truth[:, i] for i in range(truth.shape[1])]
        write_csv_path = _out_path(args, f"baseline_{slug[row.model]}.predictions.csv")
        write_table_csv(write_csv_path,
                        [f"pred_{ch}" for ch in channels]
                        + [f"truth_{ch}" for ch in channels],
                        zip(*write_features))
    write_json(_out_path(args, "baselines.json"),
               {"rows": [r.to_dict() for r in rows]})
    for row in rows:
        cells = "  ".join(
            f"{ch}={row.rmse.get(ch):.3f}" if row.rmse.get(ch) is not None
            else f"{ch}=-" for ch in CHANNEL_NAMES)
        _print(f"{row.model:>10}: {cells}")
    return 0


def cmd_gradcheck(args, file_cfg) -> int:
    # The check is exact at any size; default to a small network so the
    # finite-difference sweep stays quick.
    if args.hidden_size is None:
        args.hidden_size = 8
    if args.num_layers is None:
        args.num_layers = 4
    if args.seq_len is None:
        args.seq_len = 8
    net_cfg = _network_config(args, file_cfg)
    net = init_network(net_cfg, args.seed)
    gen = rng.stream(args.seed, rng.PURPOSE_TESTDATA)
    x = rng.normal(gen, (args.batch, net_cfg.seq_len, net_cfg.input_size))
    # Targets sit near the network's own outputs: the difference quotient
    # then runs at a small loss value, which keeps its roundoff floor well
    # below the tolerance on every coordinate.
    z, _ = forward_pass(net, x)
    y = z + 0.1 * rng.normal(gen, (args.batch, net_cfg.seq_len,
                                   net_cfg.output_size))
    report = finite_difference_check(net, x, y, l2_penalty=args.l2_penalty or 0.0,
                                     epsilon=args.epsilon,
                                     num_coords=args.coords, seed=args.seed)
    payload = {"parameters": report.to_dict()}
    _print(f"parameter gradients: max rel err {report.max_rel_err:.3e} "
           f"over {report.num_coords} coordinates (worst {report.worst_coordinate})")
    if net_cfg.num_stacked >= 1 and net_cfg.residual:
        dec = residual_gradient_decomposition_check(net, x, y,
                                                    epsilon=args.epsilon,
                                                    seed=args.seed)
        payload["decomposition"] = dec.to_dict()
        _print(f"stream telescoping max abs err {dec.telescoping_max_abs_err:.3e}")
        _print(f"zeroed-block stream grad max abs err "
               f"{dec.zero_block_max_abs_err:.3e}")
        _print(f"stream gradient FD max rel err {dec.stream_grad_max_rel_err:.3e}")
    write_json(_out_path(args, "gradcheck.json"), payload)
    if report.max_rel_err > args.tolerance:
        raise NumericalError(
            f"gradient check failed: {report.max_rel_err:.3e} > {args.tolerance:.3e}"
        )
    _print(f"gradient check passed at tolerance {args.tolerance:.1e}")
    return 0


def cmd_ablate(args, file_cfg) -> int:
    records = read_cohort(args.data)
    net_cfg = _network_config(args, file_cfg)
    train_cfg = _train_config(args, file_cfg)
    dataset = prepare_dataset(records, net_cfg.seq_len,
                              fractions=train_cfg.fractions, seed=train_cfg.seed)
    report = ablation_residual(train_cfg, net_cfg, dataset)
    write_json(_out_path(args, "ablation.json"), report.to_dict())
    for name, scores in (("residual", report.rmse_residual),
                         ("plain", report.rmse_plain)):
        line = "  ".join(f"{ch}={scores[i]:.3f}"
                         for i, ch in enumerate(CHANNEL_NAMES))
        _print(f"{name:>9}: {line}")
    _print(f"mean batch grad norm: residual "
           f"{np.mean(report.grad_norms_residual):.3f}, "
           f"plain {np.mean(report.grad_norms_plain):.3f}")
    return 0


def cmd_report(args, file_cfg) -> int:
    records = read_cohort(args.data)
    net_cfg = _network_config(args, file_cfg)
    train_cfg = _train_config(args, file_cfg)
    report = comparison_report(records, train_cfg, net_cfg,
                               include_networks=not args.no_networks)
    write_json(_out_path(args, "report.json"), report.to_dict())
    _print(report.render())
    return 0


# --- parser -----------------------------------------------------------------


def _add_network_opts(sp):
    sp.add_argument("--hidden-size", "--hidden", type=int, default=None)
    sp.add_argument("--num-layers", "--layers", type=int, default=None)
    sp.add_argument("--seq-len", type=int, default=None)
    sp.add_argument("--unidirectional", action="store_true",
                    help="disable the backward pass of the first layer")
    sp.add_argument("--no-residual", action="store_true",
                    help="disable the skip connections of stacked layers")


def _add_train_opts(sp):
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--learning-rate", type=float, default=None)
    sp.add_argument("--max-epochs", type=int, default=None)
    sp.add_argument("--patience", type=int, default=None)
    sp.add_argument("--l2-penalty", type=float, default=None)
    sp.add_argument("--clip-norm", type=float, default=None)


def _add_synth_opts(sp):
    sp.add_argument("--subjects", type=int, default=None)
    sp.add_argument("--samples", type=int, default=None)
    sp.add_argument("--latent-dim", type=int, default=None)
    sp.add_argument("--coupling", type=float, default=None)
    sp.add_argument("--obs-noise", type=float, default=None)
    sp.add_argument("--warp", type=float, default=None)
    sp.add_argument("--session-drift", type=float, default=None)
    sp.add_argument("--cohort-shift", type=float, default=None)
    sp.add_argument("--subject-spread", type=float, default=None)
    sp.add_argument("--bp-noise", type=float, default=None)
    sp.add_argument("--beats", type=int, default=None)
    sp.add_argument("--fs", type=float, default=None)
    sp.add_argument("--waveform-noise", type=float, default=None)


def build_parser() -> Parser:
    parser = Parser(prog="seqpress",
                    description="Sequence models and classical baselines for "
                                "cuffless blood-pressure estimation.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", default=None,
                        help="JSON file with network/train/synth sections")
    parser.add_argument("--out-dir", default=".",
                        help="directory for generated files")
    parser.add_argument("-v", "--verbose", action="store_true")
    # The same flags are accepted after the subcommand; SUPPRESS keeps a
    # subcommand parse from clobbering values already set at the top level.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--out-dir", default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", metavar="command",
                                parser_class=Parser)

    sp = sub.add_parser("extract", parents=[common],
                        help="per-beat features from an ECG/PPG recording")
    sp.add_argument("waveform", help=".csv (t,ecg,ppg) or .sqpw file")
    sp.add_argument("--subject", default="s00")
    sp.add_argument("--session", default="session0")
    sp.add_argument("--out-base", default=None)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("synth", parents=[common],
                        help="generate a synthetic cohort")
    sp.add_argument("--kind", choices=("features", "waveforms"),
                    default="features")
    sp.add_argument("--sessions", type=int, default=1)
    sp.add_argument("--session-labels", default=None,
                    help="comma-separated labels, one per session")
    _add_synth_opts(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", parents=[common],
                        help="train a model on a feature cohort")
    sp.add_argument("--data", required=True, help="cohort directory")
    sp.add_argument("--stride", type=int, default=None)
    sp.add_argument("--model-name", default="model.sqpc")
    _add_network_opts(sp)
    _add_train_opts(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("finetune", parents=[common],
                        help="pretrain on one cohort, adapt to a first session")
    sp.add_argument("--data", required=True, help="pretraining cohort directory")
    sp.add_argument("--day1", required=True, help="first-session cohort directory")
    sp.add_argument("--finetune-epochs", type=int, default=None)
    _add_network_opts(sp)
    _add_train_opts(sp)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("eval", parents=[common],
                        help="evaluate a checkpoint per session")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--stride", type=int, default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("baseline", parents=[common],
                        help="fit and score the classical baselines")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model",
                    choices=("ptt-chen", "ptt-poon", "kalman", "linreg", "all"),
                    default="all")
    sp.add_argument("--train-fraction", type=float, default=0.7)
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("gradcheck", parents=[common],
                        help="verify analytic gradients against finite differences")
    sp.add_argument("--batch", type=int, default=2)
    sp.add_argument("--coords", type=int, default=200)
    sp.add_argument("--epsilon", type=float, default=1e-5)
    sp.add_argument("--tolerance", type=float, default=1e-5)
    sp.add_argument("--l2-penalty", type=float, default=None)
    _add_network_opts(sp)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("ablate", parents=[common],
                        help="paired runs with and without skip connections")
    sp.add_argument("--data", required=True)
    _add_network_opts(sp)
    _add_train_opts(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("report", parents=[common],
                        help="comparison table of baselines and network variants")
    sp.add_argument("--data", required=True)
    sp.add_argument("--no-networks", action="store_true",
                    help="skip the (slow) network rows")
    _add_network_opts(sp)
    _add_train_opts(sp)
    sp.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    try:
        file_cfg = _load_config_file(args.config)
        return args.func(args, file_cfg)
    except (DataError, OSError) as exc:
        # unreadable/missing files count as bad input, same as malformed ones
        print(f"seqpress: data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"seqpress: numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
