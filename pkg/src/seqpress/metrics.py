"""Agreement metrics for predicted versus reference blood pressure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, ShapeMismatch


def _paired(pred, truth):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeMismatch(f"predictions {p.shape} vs references {t.shape}")
    if p.size == 0:
        raise EmptyInput("no paired values")
    return p, t


def rmse(pred, truth):
    """Root mean squared error.

    1-D inputs give a float; 2-D inputs are treated as (samples,
    channels) and give one value per channel.
    """
    p, t = _paired(pred, truth)
    sq = (p - t) ** 2
    if p.ndim <= 1:
        return float(np.sqrt(sq.mean()))
    return np.sqrt(sq.mean(axis=0))


@dataclass(eq=False)
class BlandAltman:
    """Difference statistics with 1.96-sigma limits of agreement.

    ``means`` and ``diffs`` carry the per-pair scatter coordinates so a
    plot can be drawn (or dumped to CSV) without recomputation.
    """

    bias: float
    sd: float  # population standard deviation of the differences
    lower: float
    upper: float
    fraction_within: float
    means: np.ndarray
    diffs: np.ndarray

    def to_dict(self) -> dict:
        return {"bias": self.bias, "sd": self.sd, "lower": self.lower,
                "upper": self.upper, "fraction_within": self.fraction_within}


def bland_altman(pred, truth) -> BlandAltman:
    """Bland-Altman agreement summary over flattened pairs."""
    p, t = _paired(pred, truth)
    diff = (p - t).reshape(-1)
    mean = 0.5 * (p + t).reshape(-1)
    bias = float(diff.mean())
    sd = float(diff.std())
    lower = bias - 1.96 * sd
    upper = bias + 1.96 * sd
    within = float(np.mean((diff >= lower) & (diff <= upper)))
    return BlandAltman(bias=bias, sd=sd, lower=lower, upper=upper,
                       fraction_within=within, means=mean, diffs=diff)
