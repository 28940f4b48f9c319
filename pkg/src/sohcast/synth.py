"""Seeded synthetic fleet telemetry with a ground-truth ledger.

Generation is truth first: a capacity trajectory and a monthly operating
SOC level are drawn per battery, then daily charging events are rendered as
one-minute records consistent with that truth. Each day holds

* ``n`` probe pulses (two discharge minutes, an idle anchor minute, the
  charging minutes, an idle minute), with ``n`` growing as the pack ages,
* one short burst that is too brief to count as a pulse,
* one long charge that tops the day's charged energy up to the duty target.

The energy of a probe pulse is ``delta_soc * apparent_capacity / 100`` times a
small efficiency noise, so the capacity estimate it yields tracks the
apparent capacity. The apparent capacity is the true capacity scaled by the
month's operating SOC level, which is what makes SOC informative for SoH.

Corruption replaces values of randomly chosen rows with sensor-failure
values that exactly one cleaning rule catches; row indices are logged.
"""

from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InvalidConfig
from .ingest import CSV_DECIMALS, NUMERIC, BatterySeries, series_from_arrays

CORRUPTION_KINDS = ("soc_range", "negative_voltage", "voltage_spike", "temp_range", "unparseable", "absurd_current")
KIND_PULSE, KIND_LONG, KIND_BURST = 0, 1, 2
DAY_START_MIN = 5 * 60


@dataclass(frozen=True)
class FleetConfig:
    n_batteries: int = 14
    months: int = 32
    start: str = "2017-01-01"
    nominal_capacity_wh: float = 40000.0
    nominal_voltage: float = 80.0
    internal_resistance_ohm: float = 0.02
    # capacity trajectory
    fade_rate: float = 2.2  # %/yr, compounded
    divergent: tuple = ()  # battery indices whose capacity grows at fade_rate instead
    break_in_delay_months: float = 2.0
    break_in_months: float = 4.0
    break_in_gain: float = 2.0  # % capacity rise over the break-in
    # duty profile
    cycles_per_year: float = 300.0
    pulses_per_day: float = 6.0  # at full health
    duty_exponent: float = 6.0  # pulses per day scale as (100 / SoH) ** duty_exponent
    delta_soc_mean: float = 5.5
    delta_soc_sd: float = 1.2
    charge_rate_range: tuple = (0.6, 1.0)  # %SOC per minute
    long_charge_kw: tuple = (20.0, 30.0)
    soc_level_mean: float = 45.0
    soc_level_sd: float = 8.0
    soc_effect: float = 0.6  # apparent capacity change per SOC point, in % per %
    # ambient
    temp_mean_range: tuple = (5.0, 15.0)
    temp_amplitude_range: tuple = (8.0, 15.0)
    temp_noise: float = 1.5
    temp_limits: tuple = (-20.0, 36.0)
    # noise
    voltage_noise: float = 0.05
    soc_noise: float = 0.015
    soc_resolution: float = 0.1
    energy_noise: float = 0.005
    corruption_rate: float = 0.02
    seed: int = 0

    def __post_init__(self):
        positive = (
            "n_batteries",
            "months",
            "nominal_capacity_wh",
            "nominal_voltage",
            "cycles_per_year",
            "pulses_per_day",
            "delta_soc_mean",
            "soc_resolution",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")
        nonneg = ("fade_rate", "break_in_delay_months", "break_in_months", "break_in_gain", "delta_soc_sd",
                  "soc_level_sd", "soc_effect", "duty_exponent", "temp_noise", "voltage_noise", "soc_noise", "energy_noise",
                  "internal_resistance_ohm")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be >= 0")
        if not 0 <= self.corruption_rate <= 0.5:
            raise InvalidConfig("corruption_rate must lie in [0, 0.5]")
        lo, hi = self.charge_rate_range
        if not 0 < lo <= hi:
            raise InvalidConfig("charge_rate_range must be positive and ordered")
        if not 0 < self.long_charge_kw[0] <= self.long_charge_kw[1]:
            raise InvalidConfig("long_charge_kw must be positive and ordered")
        if any(not 0 <= i < self.n_batteries for i in self.divergent):
            raise InvalidConfig("divergent battery index out of range")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "FleetConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise InvalidConfig(f"unknown key(s): {', '.join(unknown)}")
        doc = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        try:
            return cls(**doc)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc


def battery_serial(index: int) -> str:
    letters = ""
    index += 1
    while index:
        index, r = divmod(index - 1, 26)
        letters = chr(65 + r) + letters
    return f"BAT-{letters}"


@dataclass
class BatteryTruth:
    serial: str
    months: np.ndarray  # datetime64[M]
    true_soh: np.ndarray  # % of nominal, monthly mean
    apparent_soh: np.ndarray  # % of nominal as seen by the probes
    true_capacity_wh: np.ndarray
    soc_level: np.ndarray
    cumulative_energy_wh: np.ndarray  # at month end
    features: dict  # monthly feature ledger from the emitted, pre-corruption records
    corrupted_rows: np.ndarray
    corruption_kinds: list
    n_records: int
    pulse_energy_wh: np.ndarray = field(repr=False, default=None)
    pulse_capacity_wh: np.ndarray = field(repr=False, default=None)  # apparent capacity at each probe pulse
    pulse_delta_soc: np.ndarray = field(repr=False, default=None)  # true SOC rise of each probe pulse

    def to_dict(self) -> dict:
        return {
            "serial": self.serial,
            "months": [str(m) for m in self.months],
            "true_soh": self.true_soh.tolist(),
            "apparent_soh": self.apparent_soh.tolist(),
            "true_capacity_wh": self.true_capacity_wh.tolist(),
            "soc_level": self.soc_level.tolist(),
            "cumulative_energy_wh": self.cumulative_energy_wh.tolist(),
            "features": {k: np.asarray(v).tolist() for k, v in self.features.items()},
            "corrupted_rows": self.corrupted_rows.tolist(),
            "corruption_kinds": list(self.corruption_kinds),
            "n_records": self.n_records,
        }


def _soh_curve(cfg: FleetConfig, t_years: np.ndarray, sign: float) -> np.ndarray:
    months = t_years * 12.0
    fade = (1.0 - sign * cfg.fade_rate / 100.0) ** t_years
    if cfg.break_in_months > 0:
        ramp = np.clip((months - cfg.break_in_delay_months) / cfg.break_in_months, 0.0, 1.0)
    else:
        ramp = (months >= cfg.break_in_delay_months).astype(float)
    return 100.0 * fade * (1.0 + cfg.break_in_gain / 100.0 * ramp)


def _dither(rate: np.ndarray) -> np.ndarray:
    """Integer counts whose running total tracks the running total of ``rate``."""
    total = np.floor(np.cumsum(rate) + 0.5)
    return np.diff(np.concatenate([[0.0], total])).astype(int)


def _ocv(cfg: FleetConfig, soc: np.ndarray) -> np.ndarray:
    return cfg.nominal_voltage * (0.92 + 0.16 * soc / 100.0)


def generate_battery(cfg: FleetConfig, index: int) -> tuple[BatterySeries, BatteryTruth]:
    """Render battery ``index`` of the fleet; independent of the other batteries."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(cfg.n_batteries)[index])
    serial = battery_serial(index)
    start = np.datetime64(cfg.start, "D")
    first_month = start.astype("datetime64[M]")
    months = first_month + np.arange(cfg.months)
    end = (months[-1] + 1).astype("datetime64[D]")
    days = np.arange(start, end)
    n_days = len(days)
    day_month = (days.astype("datetime64[M]") - first_month).astype(int)
    t_years = (days - start).astype(float) / 365.25
    sign = -1.0 if index in cfg.divergent else 1.0

    # truth
    soh_true = _soh_curve(cfg, t_years, sign)
    soc_level = np.clip(rng.normal(cfg.soc_level_mean, cfg.soc_level_sd, cfg.months), 30.0, 58.0)
    apparent = soh_true * (1.0 + cfg.soc_effect * (soc_level[day_month] - 50.0) / 100.0)
    cap_true = cfg.nominal_capacity_wh * soh_true / 100.0
    cap_app = cfg.nominal_capacity_wh * apparent / 100.0

    t_mean = rng.uniform(*cfg.temp_mean_range)
    t_amp = rng.uniform(*cfg.temp_amplitude_range)
    phase = rng.uniform(-0.05, 0.05)
    season = np.sin(2 * np.pi * (t_years - 0.29 - phase))
    temp_day = np.clip(t_mean + t_amp * season + rng.normal(0.0, cfg.temp_noise, n_days), *cfg.temp_limits)

    # events: probe pulses, one burst, one long charge per day
    n_pulse = _dither(cfg.pulses_per_day * (100.0 / soh_true) ** cfg.duty_exponent)
    n_events = n_pulse + 2
    ev_day = np.repeat(np.arange(n_days), n_events)
    n_ev = len(ev_day)
    kind = np.full(n_ev, KIND_PULSE)
    first_ev = np.concatenate([[0], np.cumsum(n_events)[:-1]])
    kind[first_ev + n_pulse] = KIND_BURST
    kind[first_ev + n_pulse + 1] = KIND_LONG
    # shuffle the order of events within each day
    order = np.lexsort((rng.random(n_ev), ev_day))
    kind = kind[order]

    is_pulse = kind == KIND_PULSE
    cap_ev = cap_app[ev_day]
    dsoc = np.clip(rng.normal(cfg.delta_soc_mean, cfg.delta_soc_sd, n_ev), 2.5, 9.0)
    rate = rng.uniform(*cfg.charge_rate_range, n_ev)
    dur = np.clip(np.rint(dsoc / rate), 5, 30).astype(int)
    level = soc_level[day_month[ev_day]]
    s0 = level + rng.uniform(-15.0, 5.0, n_ev)
    # probe pulses start and end on reportable SOC values
    res = cfg.soc_resolution
    dsoc = np.round(dsoc / res) * res
    s0 = np.round(s0 / res) * res
    energy = dsoc * cap_ev / 100.0 * (1.0 + rng.normal(0.0, cfg.energy_noise, n_ev))

    burst_dur = rng.integers(2, 5, n_ev)
    burst_energy = rng.uniform(3000.0, 6000.0, n_ev) * burst_dur / 60.0
    is_burst = kind == KIND_BURST
    dur = np.where(is_burst, burst_dur, dur)
    energy = np.where(is_burst, burst_energy, energy)
    dsoc = np.where(is_burst, energy / cap_ev * 100.0, dsoc)

    daily_target = cfg.cycles_per_year * cfg.nominal_capacity_wh / 365.0
    spent = np.bincount(ev_day, weights=np.where(kind == KIND_LONG, 0.0, energy), minlength=n_days)
    is_long = kind == KIND_LONG
    long_energy = np.maximum(daily_target - spent, 1000.0)[ev_day]
    long_kw = rng.uniform(*cfg.long_charge_kw, n_ev)
    long_dur = np.maximum(35, np.rint(long_energy / (long_kw * 1000.0) * 60.0)).astype(int)
    dur = np.where(is_long, long_dur, dur)
    energy = np.where(is_long, long_energy, energy)
    long_dsoc = energy / cap_ev * 100.0
    dsoc = np.where(is_long, long_dsoc, dsoc)
    s0 = np.where(is_long, np.clip(level - 25.0 + rng.normal(0, 2, n_ev), 5.0, 95.0 - long_dsoc), s0)
    s0 = np.where(is_burst, level + rng.uniform(-5, 5, n_ev), s0)
    power = energy * 60.0 / dur
    dis_current = rng.uniform(50.0, 150.0, n_ev)

    n_pre = np.where(is_pulse, 2, 0)
    length = n_pre + dur + 2
    gap = rng.integers(20, 60, n_ev)
    span = length + gap
    day_first = np.concatenate([[0], np.cumsum(n_events)[:-1]])
    cum_span = np.cumsum(span) - span
    offset = cum_span - np.repeat(cum_span[day_first], n_events)

    # expand to records
    n_rec = int(length.sum())
    ev = np.repeat(np.arange(n_ev), length)
    j = np.arange(n_rec) - np.repeat(np.cumsum(length) - length, length)
    pre = n_pre[ev]
    k = j - pre  # 0 anchor, 1..dur charging, dur + 1 post
    d_ev = dur[ev]
    charging = (k >= 1) & (k <= d_ev)
    discharging = k < 0
    soc_true = np.where(
        discharging,
        s0[ev] + 0.2 * (-k),
        s0[ev] + dsoc[ev] * np.clip(k, 0, d_ev) / d_ev,
    )
    soc_true = np.clip(soc_true, 0.0, 100.0)
    i_nom = power[ev] / cfg.nominal_voltage
    ir = cfg.internal_resistance_ohm
    v = _ocv(cfg, soc_true) + rng.normal(0.0, cfg.voltage_noise, n_rec)
    v = np.where(charging, v + i_nom * ir, np.where(discharging, v - dis_current[ev] * ir, v))
    current = np.where(charging, power[ev] / v, np.where(discharging, -dis_current[ev], 0.0))
    soc = np.round(np.clip(soc_true + rng.normal(0.0, cfg.soc_noise, n_rec), 0.0, 100.0) / res) * res
    soc = np.round(soc, 6)
    rec_day = ev_day[ev]
    minute = DAY_START_MIN + offset[ev] + j
    ts = days[rec_day].astype("datetime64[m]") + minute.astype("timedelta64[m]")
    temp = np.round(temp_day[rec_day], 2)

    # ledger features, from the emitted records before corruption
    rec_month = day_month[rec_day]
    ev_month = day_month[ev_day]
    rec_energy = np.where(current > 0, current * v, 0.0) / 60.0
    pulse_sel = is_pulse
    ev_energy = np.bincount(ev, weights=rec_energy, minlength=n_ev)
    ev_current = np.bincount(ev, weights=np.where(charging, current, 0.0), minlength=n_ev) / dur
    anchor_idx = np.cumsum(length) - length + n_pre
    end_idx = anchor_idx + dur
    obs_dsoc = soc[end_idx] - soc[anchor_idx]
    qualifies = (
        pulse_sel
        & (np.abs(obs_dsoc - 5.0) <= 0.5)
        & (soc[anchor_idx] >= 20) & (soc[anchor_idx] <= 60)
        & (soc[end_idx] >= 20) & (soc[end_idx] <= 60)
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        sample = np.where(qualifies, ev_energy * 100.0 / obs_dsoc, np.nan)

    def by_month(idx, values, how="mean", mask=None):
        if mask is not None:
            idx, values = idx[mask], values[mask]
        s = np.bincount(idx, weights=values, minlength=cfg.months)
        c = np.bincount(idx, minlength=cfg.months)
        if how == "sum":
            return s
        with np.errstate(invalid="ignore", divide="ignore"):
            return s / c

    active_days = np.bincount(day_month, minlength=cfg.months)
    monthly_energy = by_month(rec_month, rec_energy, "sum")
    temp_min = np.full(cfg.months, np.inf)
    temp_max = np.full(cfg.months, -np.inf)
    np.minimum.at(temp_min, rec_month, temp)
    np.maximum.at(temp_max, rec_month, temp)
    features = {
        "mean_soc": by_month(rec_month, soc),
        "pulse_mean_current": by_month(ev_month, ev_current, mask=pulse_sel),
        "pulse_mean_minutes": by_month(ev_month, dur.astype(float), mask=pulse_sel),
        "pulse_frequency": np.bincount(ev_month[pulse_sel], minlength=cfg.months) / active_days,
        "energy_charged": monthly_energy,
        "cumulative_energy": np.cumsum(monthly_energy),
        "mean_capacity_sample": by_month(ev_month, np.nan_to_num(sample), mask=qualifies),
        "mean_voltage": by_month(rec_month, v),
        "mean_ambient_temp": by_month(rec_month, temp),
        "min_ambient_temp": temp_min,
        "max_ambient_temp": temp_max,
    }

    # corruption
    n_bad = int(round(cfg.corruption_rate * n_rec))
    bad_rows = np.sort(rng.choice(n_rec, n_bad, replace=False)) if n_bad else np.zeros(0, dtype=int)
    bad_kind = rng.integers(0, len(CORRUPTION_KINDS), n_bad)
    v_out, i_out, soc_out, temp_out = v.copy(), current.copy(), soc.copy(), temp.copy()
    mag = rng.uniform(0.0, 1.0, n_bad)
    side = rng.random(n_bad) < 0.5
    for code, name in enumerate(CORRUPTION_KINDS):
        rows = bad_rows[bad_kind == code]
        m, up = mag[bad_kind == code], side[bad_kind == code]
        if name == "soc_range":
            soc_out[rows] = np.where(up, 100.0 + 5 + 45 * m, -5 - 45 * m)
        elif name == "negative_voltage":
            v_out[rows] = -(1.0 + 79.0 * m)
        elif name == "voltage_spike":
            v_out[rows] = v[rows] + 60.0 + 140.0 * m
        elif name == "temp_range":
            temp_out[rows] = np.where(up, 65.0 + 35 * m, -45.0 - 35 * m)
        elif name == "unparseable":
            v_out[rows] = np.nan
        else:
            i_out[rows] = np.where(up, 1.0, -1.0) * (2500.0 + 7500.0 * m)

    series = series_from_arrays(serial, ts, v_out, i_out, soc_out, temp_out)
    day_energy = np.bincount(rec_day, weights=rec_energy, minlength=n_days)
    month_end = np.flatnonzero(np.append(day_month[1:] != day_month[:-1], True))
    truth = BatteryTruth(
        serial=serial,
        months=months,
        true_soh=by_month(day_month, soh_true),
        apparent_soh=by_month(day_month, apparent),
        true_capacity_wh=by_month(day_month, cap_true),
        soc_level=soc_level,
        cumulative_energy_wh=np.cumsum(day_energy)[month_end],
        features=features,
        corrupted_rows=bad_rows,
        corruption_kinds=[CORRUPTION_KINDS[c] for c in bad_kind],
        n_records=n_rec,
        pulse_energy_wh=ev_energy[pulse_sel],
        pulse_capacity_wh=cap_ev[pulse_sel],
        pulse_delta_soc=dsoc[pulse_sel],
    )
    return series, truth


def generate_fleet(cfg: FleetConfig) -> tuple[dict[str, BatterySeries], dict[str, BatteryTruth]]:
    """All batteries in memory, keyed by serial."""
    series, truth = {}, {}
    for b in range(cfg.n_batteries):
        s, t = generate_battery(cfg, b)
        series[s.serial], truth[s.serial] = s, t
    return series, truth


def _write_battery(series: BatterySeries, root: Path) -> None:
    folder = root / series.serial
    folder.mkdir(parents=True, exist_ok=True)
    df = series.to_frame()
    df["timestamp"] = np.datetime_as_string(series.timestamp, unit="m") + "Z"
    buf = io.StringIO()
    df[list(NUMERIC)] = df[list(NUMERIC)].round(CSV_DECIMALS)
    df.to_csv(buf, index=False, na_rep="ERR", lineterminator="\n")
    header, *lines = buf.getvalue().splitlines(keepends=True)
    dates = pd.Series([ln[:10] for ln in lines])
    for date, idx in dates.groupby(dates, sort=True).indices.items():
        with open(folder / f"{date}.csv", "w", newline="") as fh:
            fh.write(header)
            fh.writelines(lines[i] for i in idx)


def write_fleet(cfg: FleetConfig, root) -> dict[str, BatteryTruth]:
    """Generate the fleet into ``<root>/<serial>/<date>.csv`` plus ``ground_truth.json``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    truths = {}
    for b in range(cfg.n_batteries):
        series, truth = generate_battery(cfg, b)
        _write_battery(series, root)
        truths[truth.serial] = truth
    doc = {"config": cfg.to_dict(), "batteries": {s: t.to_dict() for s, t in truths.items()}}
    with open(root / "ground_truth.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return truths


# config variants used by the acceptance suite
def fade_only_config(**kw) -> FleetConfig:
    """Pure compounded fade: no break-in and no SOC-level effect on apparent capacity."""
    base = dict(soc_effect=0.0, break_in_gain=0.0, n_batteries=1)
    base.update(kw)
    return FleetConfig(**base)


def same_distribution_config(**kw) -> FleetConfig:
    """Low month-to-month fluctuation so that only the fade separates batteries."""
    base = dict(soc_effect=0.0, break_in_gain=0.0)
    base.update(kw)
    return FleetConfig(**base)
