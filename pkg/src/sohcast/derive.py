"""Charging pulses, pack capacity, SoH and equivalent cycles.

Record convention: each one-minute record carries the mean current and
voltage over the minute that *ends* at its timestamp, and the SOC reached at
that timestamp. A pulse of ``N`` charging records therefore integrates ``N``
minutes of energy, and the SOC at its start is the SOC of the record one
minute before the first charging record (the anchor). Pulses without an
anchor record still count as pulses but never yield a capacity sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from .errors import InsufficientSamples, NonpositiveC0, NonpositiveNominal
from .ingest import ONE_MINUTE, BatterySeries

MINUTES_PER_YEAR = 365.25 * 24 * 60


@dataclass(frozen=True)
class PulseConfig:
    min_voltage: float = 3.0
    min_minutes: int = 5
    max_minutes: int = 30
    cadence_minutes: float = 1.0


@dataclass(frozen=True)
class CapacityConfig:
    delta_soc: float = 5.0
    delta_soc_tol: float = 0.5
    soc_low: float = 20.0
    soc_high: float = 60.0
    min_initial_samples: int = 10
    trend_window: int = 15
    turn_run: int = 5
    turn_search_fraction: float = 0.25  # break-in is an early-life effect; later rises are noise


@dataclass(frozen=True)
class ChargingPulse:
    start_ts: np.datetime64
    end_ts: np.datetime64
    duration_min: float
    soc_start: float
    soc_end: float
    delta_soc: float
    energy_wh: float
    mean_current: float
    mean_voltage: float
    selected: bool
    anchored: bool = True


@dataclass(frozen=True)
class CapacitySample:
    ts: np.datetime64
    c_n_wh: float


@dataclass
class SoHSeries:
    """Monthly mean SoH; months without samples hold NaN and a zero count."""

    serial: str
    c0_wh: float
    months: np.ndarray  # datetime64[M], contiguous
    soh: np.ndarray
    samples_per_month: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return self.samples_per_month > 0

    def __len__(self) -> int:
        return len(self.months)

    def linear_trend(self) -> tuple[float, float]:
        """Least-squares ``(slope %/yr, intercept %)`` with time in years from the first month."""
        t = np.arange(len(self.months))[self.present] / 12.0
        slope, intercept = np.polyfit(t, self.soh[self.present], 1)
        return float(slope), float(intercept)


@dataclass
class CycleSeries:
    ts: np.ndarray
    cumulative_energy_wh: np.ndarray
    equivalent_cycles: np.ndarray | None = None
    cycles_per_year: float | None = None
    cycles_at_10_years: float | None = None


def qualifies_for_capacity(soc_start: float, soc_end: float, delta_soc: float, cfg: CapacityConfig) -> bool:
    return (
        abs(delta_soc - cfg.delta_soc) <= cfg.delta_soc_tol
        and cfg.soc_low <= soc_start <= cfg.soc_high
        and cfg.soc_low <= soc_end <= cfg.soc_high
    )


def _pulse_runs(series: BatterySeries, cfg: PulseConfig) -> tuple[np.ndarray, np.ndarray]:
    """Start/end (inclusive) indices of maximal charging runs."""
    n = len(series)
    if n == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    charging = (series.current > 0) & (series.voltage >= cfg.min_voltage)
    cont = np.zeros(n, dtype=bool)
    if n > 1:
        step = np.diff(series.timestamp) / ONE_MINUTE
        cont[1:] = (
            charging[1:]
            & charging[:-1]
            & (step <= 1.5 * cfg.cadence_minutes)
            & (series.soc[1:] >= series.soc[:-1])
        )
    starts = np.flatnonzero(charging & ~cont)
    # a run ends where the next record does not continue it
    nxt = np.append(cont[1:], False)
    ends = np.flatnonzero(charging & ~nxt)
    return starts, ends


def detect_charging_pulses(
    series: BatterySeries,
    cfg: PulseConfig = PulseConfig(),
    capacity: CapacityConfig = CapacityConfig(),
) -> list[ChargingPulse]:
    """Maximal runs of charging records, kept when their length is within the duration window.

    Energy is the rectangle sum of ``i * v * dt`` over the run's records.
    """
    starts, ends = _pulse_runs(series, cfg)
    if len(starts) == 0:
        return []
    dt_h = cfg.cadence_minutes / 60.0
    power = series.current * series.voltage
    csum = np.concatenate([[0.0], np.cumsum(power)])
    isum = np.concatenate([[0.0], np.cumsum(series.current)])
    vsum = np.concatenate([[0.0], np.cumsum(series.voltage)])
    count = ends - starts + 1
    energy = (csum[ends + 1] - csum[starts]) * dt_h
    mean_i = (isum[ends + 1] - isum[starts]) / count
    mean_v = (vsum[ends + 1] - vsum[starts]) / count

    prev = np.maximum(starts - 1, 0)
    gap = (series.timestamp[starts] - series.timestamp[prev]) / ONE_MINUTE
    anchored = (starts > 0) & (gap <= 1.5 * cfg.cadence_minutes)
    soc_start = np.where(anchored, series.soc[prev], series.soc[starts])
    soc_end = series.soc[ends]
    duration = count * cfg.cadence_minutes

    pulses = []
    for k in range(len(starts)):
        d = float(duration[k])
        delta = float(soc_end[k] - soc_start[k])
        if d < cfg.min_minutes or d > cfg.max_minutes or delta <= 0 or energy[k] <= 0:
            continue
        s0, s1 = float(soc_start[k]), float(soc_end[k])
        pulses.append(
            ChargingPulse(
                start_ts=series.timestamp[starts[k]],
                end_ts=series.timestamp[ends[k]],
                duration_min=d,
                soc_start=s0,
                soc_end=s1,
                delta_soc=delta,
                energy_wh=float(energy[k]),
                mean_current=float(mean_i[k]),
                mean_voltage=float(mean_v[k]),
                selected=bool(anchored[k]) and qualifies_for_capacity(s0, s1, delta, capacity),
                anchored=bool(anchored[k]),
            )
        )
    return pulses


def charged_energy_per_record(series: BatterySeries, cadence_minutes: float = 1.0) -> np.ndarray:
    return np.where(series.current > 0, series.current * series.voltage, 0.0) * (cadence_minutes / 60.0)


def cumulative_energy(series: BatterySeries, cadence_minutes: float = 1.0) -> CycleSeries:
    """Running sum of charged energy (Wh) over the series."""
    return CycleSeries(
        ts=series.timestamp.copy(),
        cumulative_energy_wh=np.cumsum(charged_energy_per_record(series, cadence_minutes)),
    )


def capacity_samples(pulses: list[ChargingPulse], cfg: CapacityConfig = CapacityConfig()) -> list[CapacitySample]:
    """One pack-capacity estimate per qualifying pulse: ``energy * 100 / delta_soc``."""
    return [
        CapacitySample(ts=p.end_ts, c_n_wh=p.energy_wh * 100.0 / p.delta_soc)
        for p in pulses
        if p.anchored and qualifies_for_capacity(p.soc_start, p.soc_end, p.delta_soc, cfg)
    ]


def find_capacity_turn(values, cfg: CapacityConfig = CapacityConfig()) -> int | None:
    """First index where the smoothed capacity trend starts a sustained rise.

    The trend is a centred moving median; a turn needs ``turn_run`` consecutive
    positive steps. Indices below ``min_initial_samples`` or past the first
    ``turn_search_fraction`` of the samples are not considered.
    """
    values = np.asarray(values, dtype=float)
    trend = median_filter(values, size=cfg.trend_window, mode="nearest")
    rising = np.diff(trend) > 0
    w = cfg.turn_run
    if len(rising) < w:
        return None
    runs = np.convolve(rising.astype(int), np.ones(w, dtype=int), mode="valid") == w
    stop = max(cfg.min_initial_samples, int(np.ceil(cfg.turn_search_fraction * len(values))))
    hits = np.flatnonzero(runs[cfg.min_initial_samples : stop])
    return int(hits[0] + cfg.min_initial_samples) if len(hits) else None


def initial_capacity(samples: list[CapacitySample], cfg: CapacityConfig = CapacityConfig()) -> float:
    """Mean capacity before the break-in rise; the first samples when there is none."""
    if len(samples) < cfg.min_initial_samples:
        raise InsufficientSamples(f"{len(samples)} capacity samples, need {cfg.min_initial_samples}")
    values = np.array([s.c_n_wh for s in samples])
    turn = find_capacity_turn(values, cfg)
    if turn is None:
        return float(values[: cfg.min_initial_samples].mean())
    return float(values[:turn].mean())


def soh_monthly(samples: list[CapacitySample], c0_wh: float, serial: str = "") -> SoHSeries:
    """Calendar-month mean of ``100 * c_n / c0``."""
    if not c0_wh > 0:
        raise NonpositiveC0(f"c0 must be positive, got {c0_wh}")
    if not samples:
        empty = np.zeros(0)
        return SoHSeries(serial, c0_wh, np.zeros(0, dtype="datetime64[M]"), empty, empty.astype(int))
    ts = np.array([s.ts for s in samples]).astype("datetime64[M]")
    soh = 100.0 * np.array([s.c_n_wh for s in samples]) / c0_wh
    months = np.arange(ts.min(), ts.max() + 1)
    idx = (ts - months[0]).astype(int)
    counts = np.bincount(idx, minlength=len(months))
    sums = np.bincount(idx, weights=soh, minlength=len(months))
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return SoHSeries(serial, float(c0_wh), months, means, counts)


def equivalent_cycles(cum: CycleSeries, nominal_pack_energy_wh: float) -> CycleSeries:
    """Charged-energy throughput in units of the nominal pack energy, plus a 10-year extrapolation."""
    if not nominal_pack_energy_wh > 0:
        raise NonpositiveNominal(f"nominal pack energy must be positive, got {nominal_pack_energy_wh}")
    cycles = cum.cumulative_energy_wh / nominal_pack_energy_wh
    rate = at10 = None
    if len(cum.ts) >= 2:
        t = (cum.ts - cum.ts[0]) / ONE_MINUTE / MINUTES_PER_YEAR
        if t[-1] > 0:
            rate, intercept = np.polyfit(t, cycles, 1)
            rate, at10 = float(rate), float(intercept + 10.0 * rate)
    return CycleSeries(cum.ts, cum.cumulative_energy_wh, cycles, rate, at10)


def years_to_threshold(slope: float, intercept: float, threshold: float = 80.0) -> float:
    """Years until a linear SoH trend reaches ``threshold`` (inf for a non-negative slope)."""
    if slope >= 0:
        return float("inf")
    return (threshold - intercept) / slope
