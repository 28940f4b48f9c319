"""Raw series to monthly SoH and features for one battery."""

from __future__ import annotations

from dataclasses import dataclass

from .config import RunConfig
from .derive import (
    CapacitySample,
    ChargingPulse,
    CycleSeries,
    SoHSeries,
    capacity_samples,
    cumulative_energy,
    detect_charging_pulses,
    equivalent_cycles,
    initial_capacity,
    soh_monthly,
)
from .features import MonthlyFeatureTable, build_feature_table
from .ingest import BatterySeries, CleaningReport, clean


@dataclass
class BatteryAnalysis:
    serial: str
    series: BatterySeries  # cleaned
    cleaning: CleaningReport
    pulses: list[ChargingPulse]
    samples: list[CapacitySample]
    c0_wh: float
    soh: SoHSeries
    cycles: CycleSeries
    features: MonthlyFeatureTable | None


def analyze_battery(raw: BatterySeries, cfg: RunConfig = RunConfig(), with_features: bool = True) -> BatteryAnalysis:
    series, report = clean(raw, cfg.cleaning)
    pulses = detect_charging_pulses(series, cfg.pulse, cfg.capacity)
    samples = capacity_samples(pulses, cfg.capacity)
    c0 = initial_capacity(samples, cfg.capacity)
    soh = soh_monthly(samples, c0, serial=series.serial)
    cycles = equivalent_cycles(cumulative_energy(series, cfg.pulse.cadence_minutes), cfg.nominal_pack_energy_wh)
    table = build_feature_table(series, pulses, samples, soh, cfg.pulse.cadence_minutes) if with_features else None
    return BatteryAnalysis(series.serial, series, report, pulses, samples, c0, soh, cycles, table)
