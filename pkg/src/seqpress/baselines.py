"""Classical reference models.

All four estimators follow the fit/predict convention with
constructor-only hyperparameters, so they compose with standard
model-selection tooling.  ``X`` is the per-beat feature matrix in
FEATURE_NAMES column order (a bare transit-time vector is also accepted
where only that column is used); ``y`` is mmHg, either all three
channels or a single one where noted.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import (
    DataError,
    EmptyInput,
    InsufficientCalibration,
    ShapeMismatch,
    SingularCovariance,
)
from .signals import FEATURE_NAMES

logger = logging.getLogger(__name__)

MIN_CALIBRATION_BEATS = 10
PTT_COLUMN = FEATURE_NAMES.index("ptt_s")


def _as_matrix(X) -> np.ndarray:
    x = np.asarray(X, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeMismatch("X must be 1-D or 2-D")
    if len(x) == 0:
        raise EmptyInput("X has no rows")
    if not np.isfinite(x).all():
        raise DataError("X contains non-finite values")
    return x


def _ptt_from(X, column: int) -> np.ndarray:
    x = _as_matrix(X)
    if x.shape[1] == 1:
        return x[:, 0]
    if column >= x.shape[1]:
        raise ShapeMismatch(f"ptt column {column} out of range for width {x.shape[1]}")
    return x[:, column]


def _target_column(y, column: int) -> np.ndarray:
    t = np.asarray(y, dtype=np.float64)
    if t.ndim == 1:
        return t
    if t.ndim == 2:
        if column >= t.shape[1]:
            raise ShapeMismatch(f"target column {column} out of range")
        return t[:, column]
    raise ShapeMismatch("y must be 1-D or 2-D")


class PttChen(BaseEstimator, RegressorMixin):
    """Transit-time calibration for systolic pressure only.

    Calibration fixes the operating point (mean transit time, mean SBP)
    and a sensitivity ``K`` fit by least squares through that point;
    prediction is ``sbp_cal + K * (ptt_cal - ptt) / ptt_cal``, the
    relative-deviation correction around the operating point.
    """

    def __init__(self, ptt_column: int = PTT_COLUMN, sbp_column: int = 0,
                 min_beats: int = MIN_CALIBRATION_BEATS):
        self.ptt_column = ptt_column
        self.sbp_column = sbp_column
        self.min_beats = min_beats

    def fit(self, X, y):
        ptt = _ptt_from(X, self.ptt_column)
        sbp = _target_column(y, self.sbp_column)
        if len(ptt) != len(sbp):
            raise ShapeMismatch("X and y disagree on length")
        valid = ptt > 0
        dropped = int((~valid).sum())
        if dropped:
            logger.warning("dropping %d calibration rows with non-positive "
                           "transit time", dropped)
            ptt, sbp = ptt[valid], sbp[valid]
        if len(ptt) < self.min_beats:
            raise InsufficientCalibration(
                f"need at least {self.min_beats} calibration beats, got {len(ptt)}"
            )
        self.ptt_cal_ = float(ptt.mean())
        self.sbp_cal_ = float(sbp.mean())
        d = (self.ptt_cal_ - ptt) / self.ptt_cal_
        denom = float(d @ d)
        if denom == 0.0:
            raise InsufficientCalibration("calibration transit time has zero variance")
        u = sbp - self.sbp_cal_
        self.sensitivity_ = float((u @ d) / denom)
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "sensitivity_"):
            raise DataError("PttChen.predict called before fit")
        ptt = _ptt_from(X, self.ptt_column)
        return self.sbp_cal_ + self.sensitivity_ * (self.ptt_cal_ - ptt) / self.ptt_cal_


class PttPoon(BaseEstimator, RegressorMixin):
    """Per-channel affine model in inverse squared transit time.

    Non-positive transit times carry no valid 1/ptt^2 value: such rows
    are dropped (with a log line) during fitting and fall back to the
    calibration mean at prediction time.
    """

    def __init__(self, ptt_column: int = PTT_COLUMN,
                 min_beats: int = MIN_CALIBRATION_BEATS):
        self.ptt_column = ptt_column
        self.min_beats = min_beats

    def fit(self, X, y):
        ptt = _ptt_from(X, self.ptt_column)
        targets = np.asarray(y, dtype=np.float64)
        if targets.ndim == 1:
            targets = targets[:, None]
        if len(ptt) != len(targets):
            raise ShapeMismatch("X and y disagree on length")
        valid = ptt > 0
        dropped = int((~valid).sum())
        if dropped:
            logger.warning("dropping %d calibration rows with non-positive "
                           "transit time", dropped)
        if valid.sum() < self.min_beats:
            raise InsufficientCalibration(
                f"need at least {self.min_beats} usable calibration beats, "
                f"got {int(valid.sum())}"
            )
        inv_sq = 1.0 / ptt[valid] ** 2
        t = targets[valid]
        self.mean_inv_sq_ = float(inv_sq.mean())
        self.intercept_ = np.empty(t.shape[1])
        self.slope_ = np.empty(t.shape[1])
        centered = inv_sq - inv_sq.mean()
        denom = float(centered @ centered)
        for ch in range(t.shape[1]):
            if denom == 0.0:
                # Constant transit time: the model collapses to the
                # calibration mean rather than a rank-deficient fit.
                self.intercept_[ch] = t[:, ch].mean()
                self.slope_[ch] = 0.0
            else:
                self.slope_[ch] = float((t[:, ch] - t[:, ch].mean()) @ centered / denom)
                self.intercept_[ch] = t[:, ch].mean() - self.slope_[ch] * inv_sq.mean()
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "slope_"):
            raise DataError("PttPoon.predict called before fit")
        ptt = _ptt_from(X, self.ptt_column)
        out = np.empty((len(ptt), len(self.slope_)))
        valid = ptt > 0
        if (~valid).any():
            logger.warning("predicting calibration mean for %d rows with "
                           "non-positive transit time", int((~valid).sum()))
        inv_sq = np.zeros(len(ptt))
        inv_sq[valid] = 1.0 / ptt[valid] ** 2
        inv_sq[~valid] = self.mean_inv_sq_
        for ch in range(len(self.slope_)):
            out[:, ch] = self.intercept_[ch] + self.slope_[ch] * inv_sq
        return out


class KalmanFilterModel(BaseEstimator, RegressorMixin):
    """Linear-Gaussian tracker: pressure is the latent state, features
    are its observation.

    Fitting identifies everything by least squares on centered training
    data: the state transition from consecutive pressure pairs, the
    observation map from pressure to features, and the two noise
    covariances from the corresponding residuals.  ``fit`` treats its
    input as one contiguous sequence; concatenating unrelated records
    corrupts the transition pairs, so fit per record and average, or pass
    the longest record.

    Prediction runs the forward filter (Joseph-form update, symmetrized
    covariance) and returns the filtered state plus the training mean.
    """

    def __init__(self, jitter: float = 1e-8):
        self.jitter = jitter

    @classmethod
    def from_matrices(cls, transition, observation, process_cov,
                      observation_cov, initial_state=None, initial_cov=None,
                      bp_mean=None, feature_mean=None, jitter: float = 1e-8):
        """Build a ready-to-predict filter from known system matrices,
        bypassing identification.  Means default to zero, the initial
        covariance to the process covariance."""
        model = cls(jitter=jitter)
        model.transition_ = np.asarray(transition, dtype=np.float64)
        model.observation_ = np.asarray(observation, dtype=np.float64)
        model.process_cov_ = np.asarray(process_cov, dtype=np.float64)
        model.observation_cov_ = np.asarray(observation_cov, dtype=np.float64)
        dim = model.transition_.shape[0]
        if model.transition_.shape != (dim, dim):
            raise ShapeMismatch("transition must be square")
        if model.observation_.shape[1] != dim:
            raise ShapeMismatch("observation columns must match state dimension")
        model.initial_state_ = (np.zeros(dim) if initial_state is None
                                else np.asarray(initial_state, dtype=np.float64))
        model.initial_cov_ = (model.process_cov_.copy() if initial_cov is None
                              else np.asarray(initial_cov, dtype=np.float64))
        model.bp_mean_ = (np.zeros(dim) if bp_mean is None
                          else np.asarray(bp_mean, dtype=np.float64))
        model.feature_mean_ = (np.zeros(model.observation_.shape[0])
                               if feature_mean is None
                               else np.asarray(feature_mean, dtype=np.float64))
        return model

    def fit(self, X, y):
        features = _as_matrix(X)
        bp = np.asarray(y, dtype=np.float64)
        if bp.ndim != 2:
            raise ShapeMismatch("y must be (n, channels)")
        if len(features) != len(bp):
            raise ShapeMismatch("X and y disagree on length")
        if len(bp) < 2:
            raise InsufficientCalibration("need at least 2 rows to fit dynamics")
        self.bp_mean_ = bp.mean(axis=0)
        self.feature_mean_ = features.mean(axis=0)
        s = bp - self.bp_mean_
        f = features - self.feature_mean_

        prev, nxt = s[:-1], s[1:]
        self.transition_, *_ = np.linalg.lstsq(prev, nxt, rcond=None)
        self.transition_ = self.transition_.T  # x_{t+1} = A @ x_t
        q_res = nxt - prev @ self.transition_.T
        self.process_cov_ = np.cov(q_res, rowvar=False, bias=True)

        obs, *_ = np.linalg.lstsq(s, f, rcond=None)
        self.observation_ = obs.T  # f_t = C @ x_t
        r_res = f - s @ self.observation_.T
        self.observation_cov_ = np.cov(r_res, rowvar=False, bias=True)

        self.initial_cov_ = np.cov(s, rowvar=False, bias=True)
        self.initial_state_ = np.zeros(len(self.bp_mean_))
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "transition_"):
            raise DataError("KalmanFilterModel.predict called before fit")
        f = _as_matrix(X) - self.feature_mean_
        a = self.transition_
        c = self.observation_
        q = self.process_cov_
        r = self.observation_cov_
        dim = a.shape[0]
        eye = np.eye(dim)
        eye_obs = np.eye(c.shape[0])

        x = self.initial_state_.copy()
        p = self.initial_cov_.copy()
        asym = 0.0
        min_eig = np.inf
        out = np.empty((len(f), dim))
        for t in range(len(f)):
            if t > 0:
                x = a @ x
                p = a @ p @ a.T + q
            s_mat = c @ p @ c.T + r + self.jitter * eye_obs
            try:
                gain = np.linalg.solve(s_mat, c @ p).T
            except np.linalg.LinAlgError as exc:
                raise SingularCovariance(
                    f"innovation covariance is singular at step {t}"
                ) from exc
            x = x + gain @ (f[t] - c @ x)
            ikc = eye - gain @ c
            p = ikc @ p @ ikc.T + gain @ r @ gain.T
            asym = max(asym, float(np.abs(p - p.T).max()))
            p = 0.5 * (p + p.T)
            min_eig = min(min_eig, float(np.linalg.eigvalsh(p).min()))
            out[t] = x
        # filter health over the run: worst pre-symmetrization asymmetry and
        # the smallest eigenvalue any posterior covariance reached
        self.cov_asymmetry_ = asym
        self.cov_min_eig_ = min_eig if len(f) else np.nan
        return out + self.bp_mean_


class RidgeRegression(BaseEstimator, RegressorMixin):
    """Closed-form L2-regularized linear regression, multi-output."""

    def __init__(self, alpha: float = 1.0, fit_intercept: bool = True):
        self.alpha = alpha
        self.fit_intercept = fit_intercept

    def fit(self, X, y):
        if self.alpha < 0:
            raise DataError("alpha must be >= 0")
        x = _as_matrix(X)
        t = np.asarray(y, dtype=np.float64)
        squeeze = t.ndim == 1
        if squeeze:
            t = t[:, None]
        if len(x) != len(t):
            raise ShapeMismatch("X and y disagree on length")
        if self.fit_intercept:
            x_mean = x.mean(axis=0)
            t_mean = t.mean(axis=0)
            xc = x - x_mean
            tc = t - t_mean
        else:
            x_mean = np.zeros(x.shape[1])
            t_mean = np.zeros(t.shape[1])
            xc, tc = x, t
        gram = xc.T @ xc + self.alpha * np.eye(x.shape[1])
        try:
            weights = np.linalg.solve(gram, xc.T @ tc)
        except np.linalg.LinAlgError as exc:
            raise SingularCovariance("normal equations are singular; "
                                     "use alpha > 0") from exc
        self.coef_ = weights.T
        self.intercept_ = t_mean - x_mean @ weights
        self._squeeze = squeeze
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "coef_"):
            raise DataError("RidgeRegression.predict called before fit")
        x = _as_matrix(X)
        out = x @ self.coef_.T + self.intercept_
        return out[:, 0] if self._squeeze else out
