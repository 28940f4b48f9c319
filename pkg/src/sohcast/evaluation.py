"""Cross-validation, grid search, walk-forward forecasting and model comparison.

``kfold_evar`` shuffles monthly rows and so ignores time order; it measures
how well features explain SoH. ``walk_forward`` and ``compare`` are the
honest temporal evaluations: every prediction uses only earlier months.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .arima import ArimaOrder, persistence_forecast, rolling_forecast
from .ensemble import FeatureMatrix, Learner
from .errors import EmptyGrid, TooFewRows, TooShort, ZeroVarianceTarget
from .features import MonthlyFeatureTable, preset
from .metrics import ForecastTrace, Metrics, score, score_lenient, split_point
from .stats import standardize


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle cut into ``k`` contiguous folds whose sizes differ by at most one."""
    if n < k:
        raise TooFewRows(f"{n} rows cannot be split into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def kfold_evar(learner: Learner, data: FeatureMatrix, k: int = 5, seed: int = 0, n_jobs: int = 1) -> tuple[float, float]:
    """Mean and standard deviation of held-out explained variance over ``k`` folds."""
    folds = kfold_indices(data.n_rows, k, seed)

    def one(i: int) -> float:
        test = folds[i]
        train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        model = learner.fit(data.rows(train), seed=seed)
        try:
            return score(data.target[test], model.predict(data.values[test])).evar
        except ZeroVarianceTarget:
            return float("nan")

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            scores = np.array(list(pool.map(one, range(k))))
    else:
        scores = np.array([one(i) for i in range(k)])
    return float(np.mean(scores)), float(np.std(scores))


@dataclass
class GridResult:
    best_params: dict
    best_score: float
    table: list  # one dict per lattice point: params, mean, sd


def _tie_key(params: dict) -> tuple:
    B = params.get("B", 0)
    depth = params.get("max_depth")
    return (B, np.inf if depth is None else depth)


def grid_search(kind: str, grid: dict, data: FeatureMatrix, k: int = 5, seed: int = 0, n_jobs: int = 1) -> GridResult:
    """Score every point of the parameter lattice by k-fold EVAR and keep the best.

    Equal scores prefer fewer trees, then shallower trees.
    """
    names = sorted(grid)
    if not names or any(len(grid[n]) == 0 for n in names):
        raise EmptyGrid("parameter grid is empty")
    points = [dict(zip(names, values)) for values in itertools.product(*(grid[n] for n in names))]

    def one(params: dict) -> dict:
        mean, sd = kfold_evar(Learner.make(kind, **params), data, k, seed)
        return {"params": params, "mean": mean, "sd": sd}

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            table = list(pool.map(one, points))
    else:
        table = [one(p) for p in points]
    ranked = sorted(table, key=lambda r: (-np.nan_to_num(r["mean"], nan=-np.inf), _tie_key(r["params"])))
    best = ranked[0]
    return GridResult(best["params"], best["mean"], table)


def walk_forward(
    learner: Learner,
    table: MonthlyFeatureTable,
    split=0.66,
    seed: int = 0,
    scale: bool = True,
) -> tuple[ForecastTrace, Metrics]:
    """For each held-out month, fit on all earlier months and predict that month's SoH."""
    data = table.data
    n = data.n_rows
    n_train = split_point(n, split)
    if n_train < 2 or n_train >= n:
        raise TooShort(f"need >= 2 training months and a non-empty test part (n={n}, train={n_train})")
    preds = np.empty(n - n_train)
    for step, t in enumerate(range(n_train, n)):
        X_train = data.values[:t]
        X_next = data.values[t : t + 1]
        if scale:
            X_train, params = standardize(X_train)
            X_next = params.transform(X_next)
        model = learner.fit(FeatureMatrix(data.feature_names, X_train, data.target[:t]), seed=seed)
        preds[step] = model.predict(X_next)[0]
    trace = ForecastTrace(table.months[n_train:], preds, data.target[n_train:].copy(), np.ones(len(preds), dtype=bool))
    return trace, score_lenient(trace.observed, trace.predicted)


@dataclass(frozen=True)
class Forecaster:
    """One row of a comparison: the persistence baseline, an ARIMA order, or a supervised learner."""

    name: str
    kind: str  # "persistence" | "arima" | "learner"
    order: ArimaOrder | None = None
    learner: Learner | None = None
    features: tuple | None = None

    @classmethod
    def persistence(cls) -> "Forecaster":
        return cls("persistence", "persistence")

    @classmethod
    def arima(cls, order: ArimaOrder) -> "Forecaster":
        return cls(str(order), "arima", order=order)

    @classmethod
    def supervised(cls, learner: Learner, features="two", name: str | None = None) -> "Forecaster":
        return cls(name or learner.label(), "learner", learner=learner, features=preset(features))


def default_forecasters(bag_trees: int = 100, order: str = "0,1,1", features="two") -> list[Forecaster]:
    return [
        Forecaster.persistence(),
        Forecaster.arima(ArimaOrder.parse(order)),
        Forecaster.supervised(Learner.make("bagging", B=bag_trees), features, name="BAG"),
    ]


@dataclass
class ComparisonReport:
    rows: list  # dicts: method, rmse_soh, r2, evar, n
    split: dict
    seed: int
    config_digest: str
    serial: str = ""
    traces: dict = field(default_factory=dict)

    def ranking(self) -> list[str]:
        return [r["method"] for r in self.rows]

    def to_dict(self) -> dict:
        return {
            "serial": self.serial,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "split": self.split,
            "rows": self.rows,
            "traces": self.traces,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["method", "rmse_soh", "r2"])
        for r in self.rows:
            out.writerow([r["method"], repr(r["rmse_soh"]), repr(r["r2"])])
        return buf.getvalue()


def run_forecaster(model: Forecaster, table: MonthlyFeatureTable, split=0.66, seed: int = 0) -> tuple[ForecastTrace, Metrics]:
    y = table.data.target
    if model.kind == "persistence":
        return persistence_forecast(y, split, timestamps=table.months)
    if model.kind == "arima":
        return rolling_forecast(y, model.order, split, timestamps=table.months)
    return walk_forward(model.learner, table.select(model.features), split, seed)


def compare(
    models: list[Forecaster],
    table: MonthlyFeatureTable,
    split=0.66,
    seed: int = 0,
    config_digest: str = "",
) -> ComparisonReport:
    """Score every model on the same held-out months; rows sorted by RMSE (stable)."""
    if len(models) < 2:
        raise ValueError("compare needs at least two models")
    n = len(table)
    n_train = split_point(n, split)
    rows, traces = [], {}
    for model in models:
        trace, metrics = run_forecaster(model, table, split, seed)
        rows.append({"method": model.name, "rmse_soh": metrics.rmse, "r2": metrics.r2, "evar": metrics.evar, "n": metrics.n})
        traces[model.name] = {
            "month": [str(m) for m in trace.timestamps],
            "predicted": trace.predicted.tolist(),
            "observed": trace.observed.tolist(),
        }
    rows.sort(key=lambda r: r["rmse_soh"])
    split_doc = {
        "n_months": n,
        "n_train": n_train,
        "n_test": n - n_train,
        "first_test_month": str(table.months[n_train]),
        "fraction": split if not isinstance(split, int) else None,
    }
    return ComparisonReport(rows, split_doc, seed, config_digest, table.serial, traces)
