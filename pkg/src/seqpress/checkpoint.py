"""Checkpoint serialization.

Byte layout (all integers little-endian):

    offset  size  field
    0       4     magic ``b"SQPC"``
    4       2     format version (currently 1)
    6       8     header length in bytes (u64)
    14      N     UTF-8 JSON header
    14+N    ...   parameter blob: float64 little-endian, tensors
                  concatenated in the canonical named-array order

The JSON header carries the network configuration, normalization state
(per-subject feature stats and target maxima), the training
configuration, history, and free-form metadata.  Floats in the header
are written with full repr precision, so values round-trip exactly.

Writes are atomic: the file is assembled under a temporary name in the
target directory and moved into place with ``os.replace``.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import DataError
from .network import NetworkConfig, flatten_params, init_network, unflatten_params
from .signals import FeatureStats
from .training import Checkpoint, TrainConfig

MAGIC = b"SQPC"
VERSION = 1
_HEADER_PREFIX = 14  # magic + version + header length


def _header_dict(ckpt: Checkpoint) -> dict:
    num_params = int(sum(a.size for _, a in ckpt.params.named_arrays()))
    return {
        "config": ckpt.params.config.to_dict(),
        "num_params": num_params,
        "target_maxima": np.asarray(ckpt.target_maxima, dtype=np.float64).tolist(),
        "feature_stats": {k: v.to_dict() for k, v in ckpt.feature_stats.items()},
        "train_config": None if ckpt.train_config is None else ckpt.train_config.to_dict(),
        "history": ckpt.history,
        "metadata": ckpt.metadata,
    }


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = json.dumps(_header_dict(ckpt)).encode("utf-8")
    blob = np.ascontiguousarray(flatten_params(ckpt.params), dtype="<f8").tobytes()
    payload = (MAGIC
               + VERSION.to_bytes(2, "little")
               + len(header).to_bytes(8, "little")
               + header
               + blob)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER_PREFIX or data[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version = int.from_bytes(data[4:6], "little")
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header_len = int.from_bytes(data[6:14], "little")
    if len(data) < _HEADER_PREFIX + header_len:
        raise DataError(f"{path}: truncated header")
    try:
        header = json.loads(data[_HEADER_PREFIX:_HEADER_PREFIX + header_len])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: corrupt header ({exc})") from exc

    try:
        config = NetworkConfig.from_dict(header["config"])
        expected = int(header["num_params"])
        target_maxima = np.asarray(header["target_maxima"], dtype=np.float64)
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: header is missing required fields ({exc})") from exc
    blob = data[_HEADER_PREFIX + header_len:]
    vec = np.frombuffer(blob, dtype="<f8")
    if len(vec) != expected:
        raise DataError(
            f"{path}: parameter blob holds {len(vec)} values, header says {expected}"
        )
    template = init_network(config, seed=0)
    params = unflatten_params(template, np.asarray(vec, dtype=np.float64))

    train_config = (None if header.get("train_config") is None
                    else TrainConfig.from_dict(header["train_config"]))
    stats = {k: FeatureStats.from_dict(v)
             for k, v in header.get("feature_stats", {}).items()}
    return Checkpoint(
        params=params,
        target_maxima=target_maxima,
        feature_stats=stats,
        train_config=train_config,
        history=header.get("history", {}),
        metadata=header.get("metadata", {}),
    )
