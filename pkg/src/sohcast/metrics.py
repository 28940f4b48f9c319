"""Forecast scores and one-step forecast traces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, TooShort, ZeroVarianceTarget


@dataclass(frozen=True)
class Metrics:
    rmse: float
    evar: float
    r2: float
    n: int

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "evar": self.evar, "r2": self.r2, "n": self.n}


@dataclass
class ForecastTrace:
    """One-step predictions, each made before its observation was revealed."""

    timestamps: np.ndarray
    predicted: np.ndarray
    observed: np.ndarray
    model_per_step: np.ndarray  # True where the model was refit for that step

    def __len__(self) -> int:
        return len(self.predicted)


def score(observed, predicted) -> Metrics:
    """RMSE, explained variance and R^2 of ``predicted`` against ``observed``.

    Explained variance is ``1 - var(residual) / var(observed)``, so a constant
    bias leaves it at 1 while R^2 drops. A constant target raises
    :class:`ZeroVarianceTarget` carrying the RMSE-only result.
    """
    y = np.asarray(observed, dtype=float)
    yhat = np.asarray(predicted, dtype=float)
    if y.shape != yhat.shape:
        raise LengthMismatch(f"lengths differ: {len(y)} vs {len(yhat)}")
    if len(y) == 0:
        raise TooShort("cannot score an empty series")
    resid = y - yhat
    rmse = float(np.sqrt(np.mean(resid**2)))
    var_y = float(np.var(y))
    if var_y == 0:
        raise ZeroVarianceTarget("target has zero variance", Metrics(rmse, float("nan"), float("nan"), len(y)))
    evar = 1.0 - float(np.var(resid)) / var_y
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    return Metrics(rmse, evar, r2, len(y))


def score_lenient(observed, predicted) -> Metrics:
    """Like :func:`score` but returns NaN EVAR/R^2 for a constant target."""
    try:
        return score(observed, predicted)
    except ZeroVarianceTarget as exc:
        return exc.metrics


def split_point(n: int, split) -> int:
    """Training length for ``split`` given as a fraction of ``n`` or an explicit count."""
    if isinstance(split, (int, np.integer)) and not isinstance(split, bool):
        return int(split)
    return int(round(float(split) * n))
