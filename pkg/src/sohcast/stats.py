"""Time-series and hypothesis-test primitives.

Variance conventions differ per routine and are deliberate: ACF uses the
biased 1/n autocovariance, the paired t-test uses the sample (n-1) standard
deviation, and :func:`standardize` scales by the population standard deviation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.special import stdtr
from scipy.stats import rankdata

from .errors import (
    AllZeroDifferences,
    LengthMismatch,
    MissingHistory,
    SingularRegression,
    TooShort,
    ZeroVariance,
)

LEVELS = (0.01, 0.05, 0.10)
EXACT_MAX_N = 25


@dataclass
class TestResult:
    statistic: float
    p_value: float
    method: str  # "exact" | "normal-approx" | "t" | "degenerate"
    n_effective: int
    reject_at: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "method": self.method,
            "n_effective": self.n_effective,
            "reject_at": {str(k): v for k, v in self.reject_at.items()},
        }


@dataclass
class AdfResult:
    statistic: float
    lags_used: int
    n_used: int
    critical_values: dict
    stationary_at: dict
    params: np.ndarray | None = None  # [const, level, lagged diffs...]

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "lags_used": self.lags_used,
            "n_used": self.n_used,
            "critical_values": dict(self.critical_values),
            "stationary_at": dict(self.stationary_at),
        }


def _decisions(p: float) -> dict:
    return {level: bool(p < level) for level in LEVELS}


def difference(y, d: int = 1) -> np.ndarray:
    """Apply first differencing ``d`` times."""
    y = np.asarray(y, dtype=float)
    if d < 0:
        raise ValueError("d must be >= 0")
    if len(y) <= d:
        raise TooShort(f"series of length {len(y)} cannot be differenced {d} times")
    for _ in range(d):
        y = y[1:] - y[:-1]
    return y


def inverse_difference(yhat, history, d: int = 1) -> np.ndarray:
    """Undo ``d`` rounds of differencing, continuing from the trailing ``history`` values.

    Values are accumulated left to right from the seed, so exactly representable
    inputs reconstruct bit-for-bit.
    """
    out = np.asarray(yhat, dtype=float)
    if d == 0:
        return out.copy()
    history = np.asarray(history, dtype=float)
    if len(history) < d:
        raise MissingHistory(f"need {d} trailing original values, got {len(history)}")
    h = history[-d:]
    seeds = []
    for _ in range(d):
        seeds.append(h[-1])
        h = h[1:] - h[:-1]
    for seed in reversed(seeds):
        out = np.add.accumulate(np.concatenate([[seed], out]))[1:]
    return out


def acf_pacf(y, max_lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Biased sample ACF and Durbin-Levinson PACF for lags ``0..max_lag``."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    if max_lag < 1 or n <= max_lag:
        raise TooShort(f"need length > max_lag >= 1, got n={n}, max_lag={max_lag}")
    z = y - y.mean()
    c0 = z @ z / n
    if c0 <= 0:
        raise ZeroVariance("series has zero variance")
    acf = np.array([z[k:] @ z[: n - k] / n / c0 for k in range(max_lag + 1)])

    pacf = np.zeros(max_lag + 1)
    pacf[0] = 1.0
    phi = np.zeros(0)
    v = 1.0
    for k in range(1, max_lag + 1):
        a = (acf[k] - phi @ acf[1:k][::-1]) / v if k > 1 else acf[1]
        phi = np.append(phi - a * phi[::-1], a)
        v *= 1.0 - a * a
        pacf[k] = a
    return acf, pacf


@lru_cache(maxsize=1)
def _critical_table() -> dict:
    text = resources.files("sohcast").joinpath("data/adf_critical_values.json").read_text()
    return json.loads(text)


def adf_critical_values(n: int) -> dict:
    """Constant-only unit-root critical values, interpolated in 1/n from the shipped table."""
    table = _critical_table()
    inv = np.array([0.0 if m is None else 1.0 / m for m in table["n"]])
    order = np.argsort(inv)
    out = {}
    for level in ("1%", "5%", "10%"):
        vals = np.array(table["values"][level])[order]
        out[level] = float(np.interp(1.0 / n, inv[order], vals))
    return out


def _adf_design(y: np.ndarray, lags: int, start: int) -> tuple[np.ndarray, np.ndarray]:
    dy = np.diff(y)
    rows = np.arange(start, len(dy))
    cols = [np.ones(len(rows)), y[rows]]
    cols += [dy[rows - k] for k in range(1, lags + 1)]
    return np.column_stack(cols), dy[rows]


def _ols(X: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise SingularRegression("ADF design matrix is rank deficient")
    beta = np.linalg.solve(r, q.T @ target)
    resid = target - X @ beta
    ssr = float(resid @ resid)
    r_inv = np.linalg.inv(r)
    return beta, r_inv @ r_inv.T, ssr


def adf_test(y, max_lags: int | None = None, autolag: bool = True) -> AdfResult:
    """Augmented Dickey-Fuller test with a constant.

    Regresses the first difference on a constant, the lagged level and
    ``k`` lagged differences; the statistic is the level coefficient's t-ratio.
    With ``autolag`` the lag count minimises AIC over ``0..max_lags`` on a
    common sample, then the chosen regression is refit on all usable rows.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    if max_lags is None:
        max_lags = int(np.floor(12.0 * (n / 100.0) ** 0.25))
        max_lags = max(0, min(max_lags, n // 2 - 3))
    if n < 10 + max_lags:
        raise TooShort(f"ADF needs at least {10 + max_lags} observations, got {n}")

    lags = max_lags
    if autolag and max_lags > 0:
        best = None
        for k in range(max_lags + 1):
            X, target = _adf_design(y, k, max_lags)
            X = X[:, : 2 + k]
            _, _, ssr = _ols(X, target)
            nobs = len(target)
            aic = nobs * math.log(ssr / nobs) + 2 * (k + 2)
            if best is None or aic < best[0]:
                best = (aic, k)
        lags = best[1]

    X, target = _adf_design(y, lags, lags)
    beta, xtx_inv, ssr = _ols(X, target)
    nobs, npar = X.shape
    if nobs <= npar:
        raise TooShort("not enough observations for the ADF regression")
    sigma2 = ssr / (nobs - npar)
    stat = float(beta[1] / math.sqrt(sigma2 * xtx_inv[1, 1]))
    crit = adf_critical_values(nobs)
    return AdfResult(
        statistic=stat,
        lags_used=lags,
        n_used=nobs,
        critical_values=crit,
        stationary_at={level: bool(stat < cv) for level, cv in crit.items()},
        params=beta,
    )


def _normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _exact_lower_tail(doubled_ranks: np.ndarray, w2: int) -> int:
    """Number of sign assignments whose positive doubled-rank sum is <= ``w2``."""
    total = int(doubled_ranks.sum())
    counts = [0] * (total + 1)
    counts[0] = 1
    top = 0
    for r in doubled_ranks:
        r = int(r)
        for s in range(top, -1, -1):
            if counts[s]:
                counts[s + r] += counts[s]
        top += r
    return sum(counts[: w2 + 1])


def wilcoxon_signed_rank(a, b, method: str = "auto") -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped; tied magnitudes get average ranks. The exact
    null distribution is used up to 25 non-zero pairs, otherwise a normal
    approximation with tie and continuity corrections and an Edgeworth
    kurtosis term.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths differ: {len(a)} vs {len(b)}")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise AllZeroDifferences("all paired differences are zero")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    use_exact = n <= EXACT_MAX_N if method == "auto" else method == "exact"
    if use_exact:
        doubled = np.rint(2 * ranks).astype(int)
        hits = _exact_lower_tail(doubled, int(round(2 * w)))
        p = min(1.0, 2 * hits / 2**n)
        tag = "exact"
    else:
        # W is a sum of independent +-r/2 terms: exact cumulants, ties included
        mean = n * (n + 1) / 4.0
        var = float(np.sum(ranks**2)) / 4.0
        kappa4 = -float(np.sum(ranks**4)) / 8.0
        z = (w - mean + 0.5) / math.sqrt(var)
        # continuity-corrected normal plus the Edgeworth kurtosis term
        cdf = _normal_cdf(z) - math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi) * kappa4 / var**2 / 24.0 * (z**3 - 3 * z)
        if cdf <= 0:  # the expansion breaks down far in the tail
            cdf = _normal_cdf(z)
        p = min(1.0, 2.0 * cdf)
        tag = "normal-approx"
    return TestResult(statistic=w, p_value=p, method=tag, n_effective=n, reject_at=_decisions(p))


def paired_t_test(a, b) -> TestResult:
    """Two-sided paired Student t-test on ``a - b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths differ: {len(a)} vs {len(b)}")
    d = a - b
    n = len(d)
    if n < 2:
        raise TooShort("paired t-test needs at least 2 pairs")
    sd = float(np.std(d, ddof=1))
    if sd == 0:
        raise ZeroVariance("differences have zero variance")
    t = float(d.mean() / (sd / math.sqrt(n)))
    p = float(min(1.0, 2.0 * stdtr(n - 1, -abs(t))))
    return TestResult(statistic=t, p_value=p, method="t", n_effective=n, reject_at=_decisions(p))


@dataclass
class Standardizer:
    mean: np.ndarray
    sd: np.ndarray
    constant: np.ndarray  # columns with zero spread, scaled by 1

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.sd

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.sd + self.mean


def standardize(X) -> tuple[np.ndarray, Standardizer]:
    """Centre each column and divide by its population standard deviation."""
    X = np.asarray(X, dtype=float)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    constant = sd == 0
    sd = np.where(constant, 1.0, sd)
    params = Standardizer(mean, sd, constant)
    Z = params.transform(X)
    return (Z[:, 0] if squeeze else Z), params
