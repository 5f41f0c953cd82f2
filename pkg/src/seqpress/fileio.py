"""On-disk formats for waveforms, features, targets, and cohorts.

Text formats are plain CSV with fixed headers and full-precision float
repr, so a write/read round trip is exact:

- waveform:  ``t,ecg,ppg``
- features:  ``t,ptt_s,hr,ri,st,up_time,sv,dv``
- pressure:  ``t,sbp,dbp,mbp``
- history:   ``epoch,train_loss,val_loss,grad_norm_mean``

The binary waveform format (all little-endian):

    offset  size  field
    0       4     magic ``b"SQPW"``
    4       2     format version (currently 1)
    6       8     sample rate, float64
    14      8     number of samples per channel (u64)
    22      ...   interleaved (ecg, ppg) float64 pairs

A cohort directory holds one ``<subject>__<session>.features.csv``,
``.bp.csv``, and ``.meta.json`` triple per record plus a ``cohort.json``
index listing them.
"""

from __future__ import annotations

import csv
import json
import os
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, LengthMismatch, ShapeMismatch
from .signals import FEATURE_NAMES, BpSequence, FeatureSequence, WaveformRecord
from .training import SequenceRecord

WAVEFORM_MAGIC = b"SQPW"
WAVEFORM_VERSION = 1

WAVEFORM_HEADER = ["t", "ecg", "ppg"]
FEATURE_HEADER = ["t", *FEATURE_NAMES]
BP_HEADER = ["t", "sbp", "dbp", "mbp"]
HISTORY_HEADER = ["epoch", "train_loss", "val_loss", "grad_norm_mean"]


def _fmt(value) -> str:
    return repr(float(value))


def _write_csv(path, header: Sequence[str], columns: Sequence[np.ndarray]) -> None:
    lengths = {len(c) for c in columns}
    if len(lengths) != 1:
        raise LengthMismatch(f"column lengths differ: {sorted(lengths)}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([_fmt(v) for v in row])


def write_table_csv(path, header: Sequence[str], rows) -> None:
    """CSV with mixed text/number cells (report tables, plot data)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([cell if isinstance(cell, str) else _fmt(cell)
                             for cell in row])


def _read_csv(path, header: Sequence[str]) -> np.ndarray:
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if first != list(header):
            raise DataError(f"{path}: expected header {','.join(header)}, "
                            f"got {','.join(first)}")
        try:
            rows = [[float(v) for v in row] for row in reader if row]
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric value ({exc})") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    if data.shape[1] != len(header):
        raise ShapeMismatch(f"{path}: rows have {data.shape[1]} fields, "
                            f"expected {len(header)}")
    return data


# --- waveforms ----------------------------------------------------------------


def write_waveform_csv(path, record: WaveformRecord) -> None:
    _write_csv(path, WAVEFORM_HEADER, [record.times, record.ecg, record.ppg])


def read_waveform_csv(path, subject_id: str = "",
                      session_label: str = "") -> WaveformRecord:
    """Read a ``t,ecg,ppg`` file; the sample rate is inferred from the
    time column, which must be uniform."""
    data = _read_csv(path, WAVEFORM_HEADER)
    t = data[:, 0]
    if len(t) < 2:
        raise DataError(f"{path}: need at least two samples")
    steps = np.diff(t)
    dt = float(np.median(steps))
    if dt <= 0 or np.abs(steps - dt).max() > 1e-6 * max(dt, 1e-12):
        raise DataError(f"{path}: time column is not uniformly spaced")
    return WaveformRecord(ecg=data[:, 1], ppg=data[:, 2], sample_rate=1.0 / dt,
                          subject_id=subject_id, session_label=session_label)


def write_waveform_binary(path, record: WaveformRecord) -> None:
    n = len(record.ecg)
    interleaved = np.empty(2 * n, dtype="<f8")
    interleaved[0::2] = record.ecg
    interleaved[1::2] = record.ppg
    with open(path, "wb") as fh:
        fh.write(WAVEFORM_MAGIC)
        fh.write(WAVEFORM_VERSION.to_bytes(2, "little"))
        fh.write(np.float64(record.sample_rate).tobytes())
        fh.write(n.to_bytes(8, "little"))
        fh.write(interleaved.tobytes())


def read_waveform_binary(path, subject_id: str = "",
                         session_label: str = "") -> WaveformRecord:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 22 or data[:4] != WAVEFORM_MAGIC:
        raise DataError(f"{path}: not a waveform file")
    version = int.from_bytes(data[4:6], "little")
    if version != WAVEFORM_VERSION:
        raise DataError(f"{path}: unsupported waveform version {version}")
    sample_rate = float(np.frombuffer(data[6:14], dtype="<f8")[0])
    n = int.from_bytes(data[14:22], "little")
    body = np.frombuffer(data[22:], dtype="<f8")
    if len(body) != 2 * n:
        raise DataError(f"{path}: expected {2 * n} samples, found {len(body)}")
    return WaveformRecord(ecg=body[0::2].copy(), ppg=body[1::2].copy(),
                          sample_rate=sample_rate, subject_id=subject_id,
                          session_label=session_label)


# --- feature and target tables ---------------------------------------------------


def write_features_csv(path, features: FeatureSequence) -> None:
    cols = [features.times] + [features.values[:, i] for i in range(len(FEATURE_NAMES))]
    _write_csv(path, FEATURE_HEADER, cols)


def read_features_csv(path) -> FeatureSequence:
    data = _read_csv(path, FEATURE_HEADER)
    return FeatureSequence(times=data[:, 0], values=data[:, 1:])


def write_bp_csv(path, bp: BpSequence) -> None:
    cols = [bp.times] + [bp.values[:, i] for i in range(3)]
    _write_csv(path, BP_HEADER, cols)


def read_bp_csv(path) -> BpSequence:
    data = _read_csv(path, BP_HEADER)
    return BpSequence(times=data[:, 0], values=data[:, 1:])


def write_history_csv(path, history: dict) -> None:
    cols = [np.asarray(history.get(k, []), dtype=np.float64) for k in HISTORY_HEADER]
    _write_csv(path, HISTORY_HEADER, cols)


def read_history_csv(path) -> dict:
    data = _read_csv(path, HISTORY_HEADER)
    out = {k: data[:, i].tolist() for i, k in enumerate(HISTORY_HEADER)}
    out["epoch"] = [int(e) for e in out["epoch"]]
    return out


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# --- cohort directories ------------------------------------------------------------


def _safe_name(value: str, what: str) -> str:
    if not value or not all(c.isalnum() or c in "_-" for c in value):
        raise DataError(f"{what} {value!r} is not a safe file-name component")
    return value


def _record_base(subject_id: str, session_label: str) -> str:
    return (f"{_safe_name(subject_id, 'subject id')}__"
            f"{_safe_name(session_label, 'session label')}")


def write_cohort(directory, records: Sequence[SequenceRecord],
                 extra: Optional[dict] = None) -> None:
    """Write one features/bp/meta file triple per record plus the index."""
    os.makedirs(directory, exist_ok=True)
    index = []
    for rec in records:
        base = _record_base(rec.subject_id, rec.session_label)
        times = (rec.times if rec.times is not None
                 else np.arange(len(rec.features), dtype=np.float64))
        features = FeatureSequence(times=times, values=rec.features)
        bp = BpSequence(times=times, values=rec.bp)
        write_features_csv(os.path.join(directory, base + ".features.csv"), features)
        write_bp_csv(os.path.join(directory, base + ".bp.csv"), bp)
        meta = {"subject_id": rec.subject_id, "session_label": rec.session_label,
                "num_rows": len(rec.features)}
        write_json(os.path.join(directory, base + ".meta.json"), meta)
        index.append({"subject_id": rec.subject_id,
                      "session_label": rec.session_label,
                      "features": base + ".features.csv",
                      "bp": base + ".bp.csv",
                      "meta": base + ".meta.json"})
    payload = {"format_version": 1, "records": index}
    if extra:
        payload["extra"] = extra
    write_json(os.path.join(directory, "cohort.json"), payload)


def read_cohort(directory) -> list[SequenceRecord]:
    index_path = os.path.join(directory, "cohort.json")
    if not os.path.exists(index_path):
        raise DataError(f"{directory}: no cohort.json index")
    index = read_json(index_path)
    records = []
    for entry in index.get("records", []):
        features = read_features_csv(os.path.join(directory, entry["features"]))
        bp = read_bp_csv(os.path.join(directory, entry["bp"]))
        if len(features) != len(bp):
            raise LengthMismatch(
                f"{entry['features']} and {entry['bp']} disagree on length")
        records.append(SequenceRecord(subject_id=entry["subject_id"],
                                      session_label=entry["session_label"],
                                      features=features.values, bp=bp.values,
                                      times=features.times))
    if not records:
        raise DataError(f"{directory}: cohort index lists no records")
    return records
