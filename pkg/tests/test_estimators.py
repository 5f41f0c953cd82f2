"""Estimator facade: sklearn conventions, scaling, validation."""

import numpy as np
import pytest
from sklearn.base import clone

from seqpress.errors import DataError, NonPositiveTarget, ShapeMismatch
from seqpress.estimators import (
    DeepRnnRegressor,
    FeatureScaler,
    TargetMaxScaler,
    check_row_matrix,
    check_window_tensor,
)
from seqpress.rng import PURPOSE_TESTDATA, stream


def _windows(seed=0, n=12, seq_len=6, width=7):
    return stream(seed, PURPOSE_TESTDATA).normal(size=(n, seq_len, width))


def _target_windows(x):
    # positive mmHg-scale targets tied to the first three feature columns
    return 100.0 + 5.0 * x[:, :, :3]


# --- validators ---------------------------------------------------------------


def test_check_window_tensor_accepts_and_casts():
    x = check_window_tensor([[[1, 2], [3, 4]]])
    assert x.shape == (1, 2, 2) and x.dtype == np.float64


def test_check_window_tensor_rejections():
    with pytest.raises(ShapeMismatch, match="ndim=2"):
        check_window_tensor(np.zeros((4, 3)))
    with pytest.raises(ShapeMismatch, match="empty axis"):
        check_window_tensor(np.zeros((0, 3, 2)))
    with pytest.raises(ShapeMismatch, match="width"):
        check_window_tensor(np.zeros((2, 3, 4)), width=7)
    bad = np.zeros((2, 3, 4))
    bad[1, 2, 0] = np.nan
    with pytest.raises(DataError, match="non-finite"):
        check_window_tensor(bad)


def test_check_row_matrix_rejections():
    assert check_row_matrix([[1.0, 2.0]]).shape == (1, 2)
    with pytest.raises(ShapeMismatch):
        check_row_matrix(np.zeros(5))
    with pytest.raises(ShapeMismatch):
        check_row_matrix(np.zeros((0, 3)))
    bad = np.ones((2, 2))
    bad[0, 0] = np.inf
    with pytest.raises(DataError, match="non-finite"):
        check_row_matrix(bad)


# --- scalers ------------------------------------------------------------------


def test_feature_scaler_standardizes_rows():
    rows = stream(1, PURPOSE_TESTDATA).normal(3.0, 2.5, size=(400, 7))
    scaler = FeatureScaler()
    assert scaler.fit(rows) is scaler
    z = scaler.transform(rows)
    assert np.abs(z.mean(axis=0)).max() < 1e-9
    assert np.abs(z.std(axis=0) - 1.0).max() < 1e-9
    back = scaler.inverse_transform(z)
    assert np.allclose(back, rows, atol=1e-12)


def test_feature_scaler_pools_window_tensors():
    x = _windows(seed=2)
    scaler = FeatureScaler().fit(x)
    z = scaler.transform(x)
    assert z.shape == x.shape
    pooled = z.reshape(-1, x.shape[2])
    assert np.abs(pooled.mean(axis=0)).max() < 1e-9
    # stats come from the same pooled rows either way
    direct = FeatureScaler().fit(x.reshape(-1, x.shape[2]))
    assert np.array_equal(scaler.stats_.mean, direct.stats_.mean)
    assert np.array_equal(scaler.stats_.std, direct.stats_.std)


def test_feature_scaler_rejects_constant_columns_and_early_transform():
    rows = np.ones((10, 3))
    rows[:, 0] = np.arange(10.0)
    with pytest.raises(DataError, match="constant"):
        FeatureScaler().fit(rows)
    with pytest.raises(DataError, match="before fit"):
        FeatureScaler().transform(rows)
    with pytest.raises(DataError, match="before fit"):
        FeatureScaler().inverse_transform(rows)


def test_target_max_scaler_maps_into_unit_interval():
    rows = stream(3, PURPOSE_TESTDATA).uniform(60.0, 180.0, size=(50, 3))
    scaler = TargetMaxScaler().fit(rows)
    scaled = scaler.transform(rows)
    assert np.allclose(scaled.max(axis=0), 1.0, rtol=1e-12)
    assert (scaled > 0).all()
    assert np.allclose(scaler.inverse_transform(scaled), rows, rtol=1e-12)


def test_target_max_scaler_rejects_non_positive_and_early_use():
    rows = np.full((4, 3), 100.0)
    rows[2, 1] = 0.0
    with pytest.raises(NonPositiveTarget):
        TargetMaxScaler().fit(rows)
    with pytest.raises(DataError, match="before fit"):
        TargetMaxScaler().transform(rows)


def test_scalers_follow_the_estimator_protocol():
    for est in (FeatureScaler(), TargetMaxScaler()):
        assert est.get_params() == {}
        assert type(clone(est)) is type(est)
    x = _windows(seed=4)
    rows = x.reshape(-1, 7)
    assert np.allclose(FeatureScaler().fit_transform(rows).mean(axis=0), 0.0,
                       atol=1e-9)


# --- the windowed regressor -----------------------------------------------------


def test_regressor_get_params_and_clone_round_trip():
    est = DeepRnnRegressor(hidden_size=4, num_layers=3, max_epochs=7, seed=5)
    params = est.get_params()
    assert params["hidden_size"] == 4
    assert params["num_layers"] == 3
    assert params["max_epochs"] == 7
    assert params["seed"] == 5
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(hidden_size=6)
    assert est.hidden_size == 6 and twin.hidden_size == 4


def test_regressor_fit_predict_shapes_and_scale():
    x = _windows(seed=6, n=10)
    y = _target_windows(x)
    est = DeepRnnRegressor(hidden_size=4, num_layers=2, max_epochs=2,
                           batch_size=4, seed=0)
    assert est.fit(x, y) is est
    pred = est.predict(x)
    assert pred.shape == (10, 6, 3)
    assert np.isfinite(pred).all()
    # output lives in mmHg via the stored maxima, not in (0, 1)
    assert pred.max() > 10.0
    assert np.isfinite(est.score(x, y))


def test_regressor_is_deterministic_per_seed():
    x = _windows(seed=7, n=8)
    y = _target_windows(x)
    kwargs = dict(hidden_size=4, max_epochs=2, batch_size=4)
    a = DeepRnnRegressor(seed=1, **kwargs).fit(x, y).predict(x)
    b = DeepRnnRegressor(seed=1, **kwargs).fit(x, y).predict(x)
    c = DeepRnnRegressor(seed=2, **kwargs).fit(x, y).predict(x)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_regressor_learns_an_easy_mapping():
    """A few epochs on a clean linear map must beat the untrained start."""
    x = _windows(seed=8, n=24)
    y = _target_windows(x)
    est0 = DeepRnnRegressor(hidden_size=8, max_epochs=0, batch_size=8, seed=3)
    # max_epochs=0 keeps the initialized parameters
    est0.fit(x, y)
    est = DeepRnnRegressor(hidden_size=8, max_epochs=60, batch_size=8,
                           learning_rate=1e-2, seed=3)
    est.fit(x, y)
    err0 = np.sqrt(np.mean((est0.predict(x) - y) ** 2))
    err = np.sqrt(np.mean((est.predict(x) - y) ** 2))
    assert err < 0.5 * err0


def test_regressor_input_validation():
    x = _windows(seed=9, n=6)
    y = _target_windows(x)
    est = DeepRnnRegressor(hidden_size=4, max_epochs=1, seed=0)
    with pytest.raises(ShapeMismatch, match="disagree"):
        est.fit(x, y[:5])
    with pytest.raises(ShapeMismatch, match="disagree"):
        est.fit(x, y[:, :4, :])
    with pytest.raises(DataError, match="at least 2"):
        est.fit(x[:1], y[:1])
    with pytest.raises(DataError, match="val_fraction"):
        DeepRnnRegressor(val_fraction=1.5, max_epochs=1).fit(x, y)
    with pytest.raises(NonPositiveTarget):
        est.fit(x, y - 1000.0)
    with pytest.raises(DataError, match="before fit"):
        DeepRnnRegressor().predict(x)


def test_regressor_predict_checks_window_geometry():
    x = _windows(seed=10, n=6)
    y = _target_windows(x)
    est = DeepRnnRegressor(hidden_size=4, max_epochs=1, batch_size=4,
                           seed=0).fit(x, y)
    with pytest.raises(ShapeMismatch, match="width"):
        est.predict(x[:, :, :5])
    with pytest.raises(ShapeMismatch, match="length"):
        est.predict(x[:, :4, :])
