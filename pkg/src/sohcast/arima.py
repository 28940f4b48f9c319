"""Non-seasonal ARIMA by conditional sum of squares, plus the persistence baseline.

The differenced series ``w`` follows

    w_t = mu + sum_i phi_i w_{t-i} + sum_j theta_j e_{t-j} + e_t

Residuals are computed recursively with pre-sample errors set to zero and
pre-sample ``w`` values set to the mean of ``w``. The sum of squared residuals
is minimised with a deterministic multi-start Nelder-Mead search, or a
grid-plus-golden-section search when there is a single parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import minimize

from .errors import DegenerateSeries, InvalidOrder, NonInvertible, SohError, TooShort
from .metrics import ForecastTrace, Metrics, score_lenient, split_point
from .stats import difference, inverse_difference

ROOT_MARGIN = 1e-3
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ArimaOrder:
    p: int
    d: int
    q: int

    def __post_init__(self):
        for name in ("p", "d", "q"):
            v = getattr(self, name)
            if not 0 <= v <= 5:
                raise InvalidOrder(f"{name}={v} outside 0..5")
        if self.p + self.q < 1 and (self.p, self.d, self.q) != (0, 1, 0):
            raise InvalidOrder(f"ARIMA{self.astuple()} has no AR or MA terms")

    def astuple(self) -> tuple[int, int, int]:
        return (self.p, self.d, self.q)

    @classmethod
    def parse(cls, text: str) -> "ArimaOrder":
        p, d, q = (int(x) for x in text.replace("(", "").replace(")", "").split(","))
        return cls(p, d, q)

    def __str__(self) -> str:
        return f"ARIMA({self.p},{self.d},{self.q})"


@dataclass
class ArimaModel:
    order: ArimaOrder
    mu: float
    phi: np.ndarray
    theta: np.ndarray
    residuals: np.ndarray
    sigma2: float
    training_history: np.ndarray  # last d original-scale values
    w_tail: np.ndarray  # last p differenced values
    css: float
    drift: bool = False

    def to_dict(self) -> dict:
        return {
            "format": "sohcast-arima",
            "version": 1,
            "order": list(self.order.astuple()),
            "mu": self.mu,
            "phi": self.phi.tolist(),
            "theta": self.theta.tolist(),
            "sigma2": self.sigma2,
            "css": self.css,
            "drift": self.drift,
            "training_history": self.training_history.tolist(),
            "w_tail": self.w_tail.tolist(),
            "residuals": self.residuals.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ArimaModel":
        return cls(
            order=ArimaOrder(*doc["order"]),
            mu=float(doc["mu"]),
            phi=np.array(doc["phi"], dtype=float),
            theta=np.array(doc["theta"], dtype=float),
            residuals=np.array(doc["residuals"], dtype=float),
            sigma2=float(doc["sigma2"]),
            training_history=np.array(doc["training_history"], dtype=float),
            w_tail=np.array(doc["w_tail"], dtype=float),
            css=float(doc["css"]),
            drift=bool(doc["drift"]),
        )


@njit(cache=True)
def _css_residuals(w, mu, phi, theta, fill):
    n = w.shape[0]
    p = phi.shape[0]
    q = theta.shape[0]
    e = np.zeros(n)
    for t in range(n):
        pred = mu
        for i in range(1, p + 1):
            pred += phi[i - 1] * (w[t - i] if t - i >= 0 else fill)
        for j in range(1, q + 1):
            if t - j >= 0:
                pred += theta[j - 1] * e[t - j]
        e[t] = w[t] - pred
    return e


def _roots_ok(coefs: np.ndarray, sign: float, margin: float) -> bool:
    """True when 1 + sign*(c1 z + ... + ck z^k) has all roots outside the unit circle (plus margin)."""
    if len(coefs) == 0:
        return True
    if len(coefs) == 1:
        return abs(coefs[0]) < 1.0 / (1.0 + margin)
    poly = np.concatenate([[1.0], sign * coefs])[::-1]
    return bool(np.all(np.abs(np.roots(poly)) > 1.0 + margin))


def is_stationary(phi) -> bool:
    return _roots_ok(np.asarray(phi, dtype=float), -1.0, 0.0)


def is_invertible(theta) -> bool:
    return _roots_ok(np.asarray(theta, dtype=float), 1.0, 0.0)


class _Objective:
    def __init__(self, w: np.ndarray, order: ArimaOrder, estimate_mu: bool):
        self.w = w
        self.p, self.q = order.p, order.q
        self.estimate_mu = estimate_mu
        self.fill = float(w.mean())

    def unpack(self, x: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        k = 1 if self.estimate_mu else 0
        mu = float(x[0]) if self.estimate_mu else 0.0
        return mu, x[k : k + self.p].copy(), x[k + self.p : k + self.p + self.q].copy()

    def feasible(self, x) -> bool:
        _, phi, theta = self.unpack(x)
        return _roots_ok(phi, -1.0, ROOT_MARGIN) and _roots_ok(theta, 1.0, ROOT_MARGIN)

    def residuals(self, x) -> np.ndarray:
        mu, phi, theta = self.unpack(x)
        return _css_residuals(self.w, mu, phi, theta, self.fill)

    def __call__(self, x) -> float:
        if not self.feasible(x):
            return math.inf
        e = self.residuals(x)
        return float(e @ e)


def css_objective(y, order: ArimaOrder, mu: float, phi, theta) -> float:
    """Conditional sum of squares of ``y`` under the given parameters."""
    w = difference(y, order.d)
    e = _css_residuals(w, float(mu), np.asarray(phi, dtype=float), np.asarray(theta, dtype=float), float(w.mean()))
    return float(e @ e)


def _golden(f, lo: float, hi: float, n_grid: int = 41, tol: float = 1e-10) -> float:
    grid = np.linspace(lo, hi, n_grid)
    vals = [f(np.array([g])) for g in grid]
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)]
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(np.array([c])), f(np.array([d]))
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(np.array([c]))
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(np.array([d]))
    best = min((vals[k], grid[k]), (fc, c), (fd, d))
    return float(best[1])


def _starts(obj: _Objective) -> list[np.ndarray]:
    k_arma = obj.p + obj.q
    mu0 = [obj.fill] if obj.estimate_mu else []
    if k_arma <= 2:
        levels = (-0.6, -0.2, 0.2, 0.6)
        grids = np.array(np.meshgrid(*[levels] * k_arma, indexing="ij")).reshape(k_arma, -1).T
        starts = [np.array(mu0 + [0.0] * k_arma)] + [np.array(mu0 + list(g)) for g in grids]
    else:
        starts = [np.array(mu0 + [0.0] * k_arma)]
        for i in range(k_arma):
            for v in (-0.3, 0.3):
                x = [0.0] * k_arma
                x[i] = v
                starts.append(np.array(mu0 + x))
    return [s for s in starts if obj.feasible(s)]


def _optimize(obj: _Objective, n_params: int) -> np.ndarray:
    if n_params == 1 and not obj.estimate_mu:
        bound = 1.0 / (1.0 + ROOT_MARGIN) - 1e-9
        return np.array([_golden(obj, -bound, bound)])
    if n_params == 1:  # drift only
        return np.array([float(obj.w.mean())])
    best_x, best_f = None, math.inf
    for x0 in _starts(obj):
        res = minimize(obj, x0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000 * n_params})
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
    return np.asarray(best_x, dtype=float)


def fit_arima(y, order: ArimaOrder, drift: bool = False) -> ArimaModel:
    """Estimate an ARIMA(p,d,q) model by conditional sum of squares.

    The constant is estimated when ``d == 0`` or ``drift`` is set; otherwise it is 0.
    """
    y = np.asarray(y, dtype=float)
    p, d, q = order.astuple()
    if len(y) < 10 + p + q + d:
        raise TooShort(f"{order} needs at least {10 + p + q + d} observations, got {len(y)}")
    w = difference(y, d)
    estimate_mu = d == 0 or drift
    n_params = p + q + int(estimate_mu)
    obj = _Objective(w, order, estimate_mu)
    if n_params > 0 and p + q > 0 and np.var(w) == 0:
        raise DegenerateSeries("differenced series has zero variance")
    x = _optimize(obj, n_params) if n_params else np.zeros(0)
    mu, phi, theta = obj.unpack(x)
    if not (is_stationary(phi) and is_invertible(theta)):
        raise NonInvertible(f"{order} optimum violates the stationarity/invertibility guards")
    e = obj.residuals(x)
    css = float(e @ e)
    dof = len(w) - n_params
    if dof <= 0:
        raise TooShort("no residual degrees of freedom")
    return ArimaModel(
        order=order,
        mu=mu,
        phi=phi,
        theta=theta,
        residuals=e,
        sigma2=css / dof,
        training_history=y[len(y) - d :].copy() if d else np.zeros(0),
        w_tail=w[len(w) - p :].copy() if p else np.zeros(0),
        css=css,
        drift=drift,
    )


def forecast(model: ArimaModel, h: int = 1) -> np.ndarray:
    """``h``-step forecasts on the original scale; future errors are zero."""
    if h < 1:
        raise ValueError("horizon must be >= 1")
    p, d, q = model.order.astuple()
    w_hist = list(model.w_tail)
    e_hist = list(model.residuals[len(model.residuals) - q :]) if q else []
    preds = []
    for step in range(h):
        value = model.mu
        for i in range(1, p + 1):
            value += model.phi[i - 1] * w_hist[-i]
        for j in range(1, q + 1):
            if j > step:  # known in-sample residual
                value += model.theta[j - 1] * e_hist[len(e_hist) - (j - step)]
        preds.append(value)
        w_hist.append(value)
    return inverse_difference(np.array(preds), model.training_history, d)


def in_sample_forecasts(model: ArimaModel, y) -> np.ndarray:
    """One-step fitted values on the original scale for the training points after the first ``d``."""
    y = np.asarray(y, dtype=float)
    d = model.order.d
    w = difference(y, d)
    what = w - model.residuals
    if d == 0:
        return what
    # undo the differencing using the observed (not predicted) previous values
    levels = [y]
    for _ in range(d - 1):
        levels.append(np.diff(levels[-1]))
    out = what
    for lvl in reversed(levels):
        out = lvl[len(lvl) - len(out) - 1 : -1] + out
    return out


def _check_split(y: np.ndarray, split, min_train: int) -> int:
    n_train = split_point(len(y), split)
    if n_train < min_train or n_train >= len(y):
        raise TooShort(f"need >= {min_train} training points and a non-empty validation part (n={len(y)}, train={n_train})")
    return n_train


def rolling_forecast(y, order: ArimaOrder, split=0.66, refit: bool = True, drift: bool = False, timestamps=None):
    """Walk through the validation part one step at a time.

    Each prediction uses only ``y[:t]``; with ``refit`` the model is re-estimated
    at every step, otherwise the first fit's parameters are kept and only the
    residuals are updated.
    """
    y = np.asarray(y, dtype=float)
    n_train = _check_split(y, split, 10 + order.p + order.q + order.d)
    base = None if refit else fit_arima(y[:n_train], order, drift)
    preds, refits = [], []
    for t in range(n_train, len(y)):
        if refit:
            model = fit_arima(y[:t], order, drift)
        else:
            model = _update(base, y[:t])
        preds.append(forecast(model, 1)[0])
        refits.append(refit or t == n_train)
    ts = np.arange(n_train, len(y)) if timestamps is None else np.asarray(timestamps)[n_train:]
    trace = ForecastTrace(ts, np.array(preds), y[n_train:].copy(), np.array(refits))
    return trace, score_lenient(trace.observed, trace.predicted)


def _update(model: ArimaModel, y: np.ndarray) -> ArimaModel:
    p, d, _ = model.order.astuple()
    w = difference(y, d)
    e = _css_residuals(w, model.mu, model.phi, model.theta, float(w.mean()))
    return ArimaModel(
        order=model.order,
        mu=model.mu,
        phi=model.phi,
        theta=model.theta,
        residuals=e,
        sigma2=model.sigma2,
        training_history=y[len(y) - d :].copy() if d else np.zeros(0),
        w_tail=w[len(w) - p :].copy() if p else np.zeros(0),
        css=float(e @ e),
        drift=model.drift,
    )


def persistence_forecast(y, split=0.66, timestamps=None) -> tuple[ForecastTrace, Metrics]:
    """Naive baseline: the prediction for step t is the observation at t-1."""
    y = np.asarray(y, dtype=float)
    n_train = _check_split(y, split, 1)
    preds = y[n_train - 1 : -1].copy()
    ts = np.arange(n_train, len(y)) if timestamps is None else np.asarray(timestamps)[n_train:]
    trace = ForecastTrace(ts, preds, y[n_train:].copy(), np.zeros(len(preds), dtype=bool))
    return trace, score_lenient(trace.observed, trace.predicted)


def select_order_by_aic(y, max_p: int = 2, max_q: int = 2, d: int = 1) -> tuple[ArimaOrder, list[dict]]:
    """Fit every candidate order and rank by the CSS-based AIC ``n log(css/n) + 2k``."""
    table = []
    for p in range(max_p + 1):
        for q in range(max_q + 1):
            try:
                order = ArimaOrder(p, d, q)
                model = fit_arima(y, order)
            except SohError:
                continue
            n = len(model.residuals)
            k = p + q + int(model.drift or d == 0)
            aic = n * math.log(max(model.css, 1e-300) / n) + 2 * k
            table.append({"order": str(order), "p": p, "d": d, "q": q, "css": model.css, "aic": aic})
    if not table:
        raise TooShort("no candidate order could be fitted")
    table.sort(key=lambda r: (r["aic"], r["p"] + r["q"]))
    best = table[0]
    return ArimaOrder(best["p"], best["d"], best["q"]), table
