"""Monthly feature table used by the supervised SoH models.

One row per calendar month that has at least one capacity sample. All
features of month ``m`` are computed from that month's records only
(``cumulative_energy`` also from earlier months), so a row never looks ahead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .derive import ChargingPulse, CapacitySample, SoHSeries, charged_energy_per_record
from .ensemble import FeatureMatrix
from .errors import NoMonths
from .ingest import BatterySeries

ALL_FEATURES = (
    "mean_soc",
    "pulse_mean_current",
    "pulse_mean_minutes",
    "pulse_frequency",
    "energy_charged",
    "cumulative_energy",
    "mean_capacity_sample",
    "mean_voltage",
    "mean_ambient_temp",
    "min_ambient_temp",
    "max_ambient_temp",
)

PRESETS = {
    "all": ALL_FEATURES,
    "four": ("mean_soc", "pulse_mean_current", "pulse_mean_minutes", "pulse_frequency"),
    "two": ("mean_soc", "pulse_frequency"),
}


def preset(name_or_list) -> tuple[str, ...]:
    if isinstance(name_or_list, str):
        if name_or_list in PRESETS:
            return PRESETS[name_or_list]
        name_or_list = [s.strip() for s in name_or_list.split(",") if s.strip()]
    names = tuple(name_or_list)
    unknown = [n for n in names if n not in ALL_FEATURES]
    if unknown:
        raise ValueError(f"unknown feature(s): {unknown}")
    return names


@dataclass
class MonthlyFeatureTable:
    serial: str
    months: np.ndarray  # datetime64[M]
    data: FeatureMatrix

    def __len__(self) -> int:
        return len(self.months)

    def select(self, names) -> "MonthlyFeatureTable":
        return MonthlyFeatureTable(self.serial, self.months, self.data.select(preset(names)))

    def to_rows(self) -> list[dict]:
        rows = []
        for k, month in enumerate(self.months):
            row = {"month": str(month)}
            row.update({n: float(v) for n, v in zip(self.data.feature_names, self.data.values[k])})
            row["soh"] = float(self.data.target[k])
            rows.append(row)
        return rows


def _group(month_index: np.ndarray, values: np.ndarray, n: int, how: str) -> np.ndarray:
    out = np.full(n, np.nan)
    if len(values) == 0:
        return out
    if how in ("sum", "mean", "count"):
        sums = np.bincount(month_index, weights=values, minlength=n)
        counts = np.bincount(month_index, minlength=n)
        if how == "sum":
            return sums
        if how == "count":
            return counts.astype(float)
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    func = np.fmin if how == "min" else np.fmax
    func.at(out, month_index, values)
    return out


def _month_index(ts: np.ndarray, first: np.datetime64) -> np.ndarray:
    return (np.asarray(ts).astype("datetime64[M]") - first).astype(int)


def build_feature_table(
    series: BatterySeries,
    pulses: list[ChargingPulse],
    samples: list[CapacitySample],
    soh: SoHSeries,
    cadence_minutes: float = 1.0,
) -> MonthlyFeatureTable:
    """Aggregate a cleaned series and its derived outputs into monthly rows.

    Rows with a feature that cannot be computed (for example a month with no
    retained pulse) are dropped and counted in ``data.dropped_rows``.
    """
    present = soh.present
    if len(soh) == 0 or not present.any():
        raise NoMonths(f"battery {soh.serial or series.serial} has no month with a capacity sample")
    first = min(soh.months[0], series.timestamp[0].astype("datetime64[M]"))
    last = max(soh.months[-1], series.timestamp[-1].astype("datetime64[M]"))
    n = int((last - first).astype(int)) + 1

    rec = _month_index(series.timestamp, first)
    energy = charged_energy_per_record(series, cadence_minutes)
    days = series.timestamp.astype("datetime64[D]")
    new_day = np.ones(len(days), dtype=bool)
    new_day[1:] = days[1:] != days[:-1]
    active_days = np.bincount(rec[new_day], minlength=n)

    p_idx = _month_index(np.array([p.end_ts for p in pulses], dtype="datetime64[m]"), first)
    p_current = np.array([p.mean_current for p in pulses])
    p_minutes = np.array([p.duration_min for p in pulses])
    s_idx = _month_index(np.array([s.ts for s in samples], dtype="datetime64[m]"), first)
    s_value = np.array([s.c_n_wh for s in samples])

    monthly_energy = _group(rec, energy, n, "sum")
    pulse_count = _group(p_idx, np.ones(len(pulses)), n, "sum") if pulses else np.zeros(n)
    with np.errstate(invalid="ignore", divide="ignore"):
        frequency = np.where(active_days > 0, pulse_count / np.maximum(active_days, 1), np.nan)
    cols = {
        "mean_soc": _group(rec, series.soc, n, "mean"),
        "pulse_mean_current": _group(p_idx, p_current, n, "mean"),
        "pulse_mean_minutes": _group(p_idx, p_minutes, n, "mean"),
        "pulse_frequency": frequency,
        "energy_charged": monthly_energy,
        "cumulative_energy": np.cumsum(monthly_energy),
        "mean_capacity_sample": _group(s_idx, s_value, n, "mean"),
        "mean_voltage": _group(rec, series.voltage, n, "mean"),
        "mean_ambient_temp": _group(rec, series.ambient_temp, n, "mean"),
        "min_ambient_temp": _group(rec, series.ambient_temp, n, "min"),
        "max_ambient_temp": _group(rec, series.ambient_temp, n, "max"),
    }
    X = np.column_stack([cols[name] for name in ALL_FEATURES])

    soh_idx = _month_index(soh.months[present], first)
    X = X[soh_idx]
    target = soh.soh[present]
    ok = np.isfinite(X).all(axis=1)
    if not ok.any():
        raise NoMonths("no month has every feature available")
    data = FeatureMatrix(list(ALL_FEATURES), X[ok], target[ok], dropped_rows=int((~ok).sum()))
    return MonthlyFeatureTable(series.serial, soh.months[present][ok], data)
