"""Estimator-style facade over the functional training core.

These classes follow the fit/transform/predict convention with
constructor-only hyperparameters so the toolkit drops into standard
pipelines and grid searches.  Inputs here are 3-D window tensors
``(n_windows, seq_len, width)``; the standard 2-D validators reject
those, so validation is local.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.metrics import r2_score

from . import rng
from .errors import DataError, NonPositiveTarget, ShapeMismatch
from .network import NetworkConfig, init_network
from .signals import FeatureStats, zscore_apply
from .training import (
    Checkpoint,
    SplitDataset,
    TrainConfig,
    TrainingSample,
    predict_samples,
    train,
)


def check_window_tensor(X, name: str = "X", width: int | None = None) -> np.ndarray:
    """Validate a ``(n, seq_len, width)`` float tensor."""
    x = np.asarray(X, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeMismatch(f"{name} must be (n_windows, seq_len, width), "
                            f"got ndim={x.ndim}")
    if 0 in x.shape:
        raise ShapeMismatch(f"{name} has an empty axis: {x.shape}")
    if width is not None and x.shape[2] != width:
        raise ShapeMismatch(f"{name} has width {x.shape[2]}, expected {width}")
    if not np.isfinite(x).all():
        raise DataError(f"{name} contains non-finite values")
    return x


def check_row_matrix(X, name: str = "X") -> np.ndarray:
    x = np.asarray(X, dtype=np.float64)
    if x.ndim != 2 or 0 in x.shape:
        raise ShapeMismatch(f"{name} must be a non-empty 2-D matrix, got {x.shape}")
    if not np.isfinite(x).all():
        raise DataError(f"{name} contains non-finite values")
    return x


def _pool_rows(X, name: str) -> tuple[np.ndarray, np.ndarray]:
    """Accept rows or window tensors; return (original, pooled 2-D rows)."""
    x = np.asarray(X, dtype=np.float64)
    if x.ndim == 2:
        return check_row_matrix(x, name), x
    x = check_window_tensor(x, name)
    return x, x.reshape(-1, x.shape[2])


class FeatureScaler(TransformerMixin, BaseEstimator):
    """Column z-scoring that accepts rows or window tensors."""

    def fit(self, X, y=None):
        _, rows = _pool_rows(X, "X")
        std = rows.std(axis=0)
        if (std == 0).any():
            raise DataError("cannot scale a constant column; drop it first")
        self.stats_ = FeatureStats(mean=rows.mean(axis=0), std=std)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "stats_"):
            raise DataError("FeatureScaler.transform called before fit")
        x, rows = _pool_rows(X, "X")
        return zscore_apply(rows, self.stats_).reshape(x.shape)

    def inverse_transform(self, X) -> np.ndarray:
        if not hasattr(self, "stats_"):
            raise DataError("FeatureScaler.inverse_transform called before fit")
        x = np.asarray(X, dtype=np.float64)
        return x * self.stats_.std + self.stats_.mean


class TargetMaxScaler(TransformerMixin, BaseEstimator):
    """Per-channel division by the training maximum, mapping into (0, 1]."""

    def fit(self, X, y=None):
        _, rows = _pool_rows(X, "X")
        if (rows <= 0).any():
            raise NonPositiveTarget("targets must be strictly positive")
        self.maxima_ = rows.max(axis=0)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "maxima_"):
            raise DataError("TargetMaxScaler.transform called before fit")
        return np.asarray(X, dtype=np.float64) / self.maxima_

    def inverse_transform(self, X) -> np.ndarray:
        if not hasattr(self, "maxima_"):
            raise DataError("TargetMaxScaler.inverse_transform called before fit")
        return np.asarray(X, dtype=np.float64) * self.maxima_


class DeepRnnRegressor(BaseEstimator, RegressorMixin):
    """Windowed sequence regressor with internal scaling.

    ``fit(X, y)`` takes raw feature windows ``(n, seq_len, features)``
    and mmHg target windows ``(n, seq_len, channels)``; scaling (feature
    z-score, target max) is learned from the training portion and undone
    at prediction, so ``predict`` returns mmHg.  A deterministic shuffled
    fraction of the windows is held out to drive early stopping.
    """

    def __init__(self, hidden_size: int = 32, num_layers: int = 2,
                 bidirectional: bool = True, residual: bool = True,
                 learning_rate: float = 1e-3, batch_size: int = 16,
                 max_epochs: int = 50, patience: int = 10,
                 l2_penalty: float = 1e-4, clip_norm: float = 5.0,
                 val_fraction: float = 0.15, seed: int = 0):
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.bidirectional = bidirectional
        self.residual = residual
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.l2_penalty = l2_penalty
        self.clip_norm = clip_norm
        self.val_fraction = val_fraction
        self.seed = seed

    def fit(self, X, y):
        x = check_window_tensor(X, "X")
        t = check_window_tensor(y, "y")
        if len(x) != len(t) or x.shape[1] != t.shape[1]:
            raise ShapeMismatch(f"X {x.shape} and y {t.shape} disagree")
        if len(x) < 2:
            raise DataError("need at least 2 windows (one is held out)")
        if not 0.0 < self.val_fraction < 1.0:
            raise DataError("val_fraction must be in (0, 1)")

        order = rng.stream(self.seed, rng.PURPOSE_SPLIT).permutation(len(x))
        n_val = max(1, int(round(self.val_fraction * len(x))))
        if n_val >= len(x):
            raise DataError("val_fraction leaves no training windows")
        val_idx, train_idx = order[:n_val], order[n_val:]

        rows = x[train_idx].reshape(-1, x.shape[2])
        std = rows.std(axis=0)
        if (std == 0).any():
            raise DataError("a feature column is constant on the training windows")
        self.feature_stats_ = FeatureStats(mean=rows.mean(axis=0), std=std)
        target_rows = t[train_idx].reshape(-1, t.shape[2])
        if (target_rows <= 0).any():
            raise NonPositiveTarget("targets must be strictly positive mmHg")
        self.target_maxima_ = target_rows.max(axis=0)

        def pack(indices) -> list[TrainingSample]:
            return [TrainingSample(
                x=zscore_apply(x[i], self.feature_stats_),
                y=t[i] / self.target_maxima_, subject_id="all") for i in indices]

        net_config = NetworkConfig(
            hidden_size=self.hidden_size, num_layers=self.num_layers,
            seq_len=x.shape[1], input_size=x.shape[2], output_size=t.shape[2],
            bidirectional=self.bidirectional, residual=self.residual,
        )
        train_config = TrainConfig(
            batch_size=min(self.batch_size, len(train_idx)),
            clip_norm=self.clip_norm, l2_penalty=self.l2_penalty,
            learning_rate=self.learning_rate, max_epochs=self.max_epochs,
            patience=self.patience, seed=self.seed,
        )
        dataset = SplitDataset(train=pack(train_idx), val=pack(val_idx), test=[],
                               feature_stats={"all": self.feature_stats_},
                               target_maxima=self.target_maxima_)
        self.checkpoint_: Checkpoint = train(
            train_config, init_network(net_config, self.seed), dataset)
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "checkpoint_"):
            raise DataError("DeepRnnRegressor.predict called before fit")
        x = check_window_tensor(X, "X", width=len(self.feature_stats_.mean))
        cfg = self.checkpoint_.params.config
        if x.shape[1] != cfg.seq_len:
            raise ShapeMismatch(f"windows have length {x.shape[1]}, "
                                f"model expects {cfg.seq_len}")
        samples = [TrainingSample(x=zscore_apply(w, self.feature_stats_),
                                  y=np.zeros((cfg.seq_len, cfg.output_size)))
                   for w in x]
        z = predict_samples(self.checkpoint_.params, samples)
        return z * self.target_maxima_

    def score(self, X, y, sample_weight=None) -> float:
        """R^2 over flattened timesteps (the 2-D convention applied per row)."""
        t = check_window_tensor(y, "y")
        pred = self.predict(X)
        return float(r2_score(t.reshape(len(t), -1), pred.reshape(len(pred), -1),
                              sample_weight=sample_weight))
