"""Telemetry parsing and cleaning.

Raw files hold one-minute battery-pack measurements with the header
``timestamp,serial,voltage,current,soc,ambient_temp``. Several files (one per
date) may belong to the same battery; they are concatenated and time-sorted.
A series is held column-wise as numpy arrays; :attr:`BatterySeries.records`
gives the row view when needed.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.ndimage import maximum_filter1d, median_filter

from .errors import AllDropped, EmptySource, MissingColumn, MixedSerial, TooManyParseFailures

COLUMNS = ("timestamp", "serial", "voltage", "current", "soc", "ambient_temp")
NUMERIC = ("voltage", "current", "soc", "ambient_temp")
ONE_MINUTE = np.timedelta64(1, "m")
CSV_DECIMALS = 6

CLEANING_RULES = (
    "unparseable",
    "range_soc",
    "range_voltage",
    "range_temp",
    "range_current",
    "duplicate_ts",
    "spike_voltage",
)


@dataclass(frozen=True)
class TelemetryRecord:
    timestamp: np.datetime64
    serial: str
    voltage: float
    current: float
    soc: float
    ambient_temp: float


@dataclass(frozen=True)
class Schema:
    """Maps canonical column names to the names used in a source file.

    ``current_sign`` flips the sign convention for datasets that report
    charging current as negative.
    """

    timestamp: str = "timestamp"
    serial: str = "serial"
    voltage: str = "voltage"
    current: str = "current"
    soc: str = "soc"
    ambient_temp: str = "ambient_temp"
    current_sign: float = 1.0
    gap_minutes: float = 10.0

    def mapping(self) -> dict[str, str]:
        return {name: getattr(self, name) for name in COLUMNS}


@dataclass
class BatterySeries:
    serial: str
    timestamp: np.ndarray  # datetime64[m]
    voltage: np.ndarray
    current: np.ndarray
    soc: np.ndarray
    ambient_temp: np.ndarray
    gaps: list = field(default_factory=list)
    unparsed_rows: int = 0

    def __len__(self) -> int:
        return len(self.timestamp)

    @property
    def records(self) -> list[TelemetryRecord]:
        return [
            TelemetryRecord(t, self.serial, float(v), float(i), float(s), float(a))
            for t, v, i, s, a in zip(self.timestamp, self.voltage, self.current, self.soc, self.ambient_temp)
        ]

    def take(self, index) -> "BatterySeries":
        """Row subset (boolean mask or index array); gaps are recomputed."""
        out = replace(
            self,
            timestamp=self.timestamp[index],
            voltage=self.voltage[index],
            current=self.current[index],
            soc=self.soc[index],
            ambient_temp=self.ambient_temp[index],
            unparsed_rows=0,
        )
        out.gaps = find_gaps(out.timestamp)
        return out

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "timestamp": self.timestamp,
                "serial": self.serial,
                "voltage": self.voltage,
                "current": self.current,
                "soc": self.soc,
                "ambient_temp": self.ambient_temp,
            }
        )


@dataclass(frozen=True)
class CleaningConfig:
    soc_min: float = 0.0
    soc_max: float = 100.0
    voltage_min: float = 0.0
    temp_min: float = -40.0
    temp_max: float = 60.0
    max_abs_current: float = 2000.0
    spike_threshold_v: float = 20.0
    spike_window: int = 5


@dataclass
class CleaningReport:
    rows_in: int
    rows_kept: int
    rows_dropped_by_rule: dict

    @property
    def drop_fraction(self) -> float:
        return (self.rows_in - self.rows_kept) / self.rows_in if self.rows_in else 0.0

    def to_dict(self) -> dict:
        return {
            "rows_in": self.rows_in,
            "rows_kept": self.rows_kept,
            "rows_dropped_by_rule": dict(self.rows_dropped_by_rule),
            "drop_fraction": self.drop_fraction,
        }


def find_gaps(timestamp: np.ndarray, gap_minutes: float = 10.0) -> list:
    """Intervals ``(start, end)`` between consecutive records more than ``gap_minutes`` apart."""
    if len(timestamp) < 2:
        return []
    step = np.diff(timestamp) / ONE_MINUTE
    where = np.flatnonzero(step > gap_minutes)
    return [(timestamp[i], timestamp[i + 1]) for i in where]


def _read_csv(source) -> pd.DataFrame:
    return pd.read_csv(source, dtype=str, keep_default_na=False, skipinitialspace=True)


def _read_paths(paths: list) -> list[pd.DataFrame]:
    """Read many small files; files sharing a header are parsed in one pass."""
    groups: dict[str, list[str]] = {}
    for path in paths:
        text = Path(path).read_text()
        header, _, body = text.partition("\n")
        if body and not body.endswith("\n"):
            body += "\n"
        groups.setdefault(header, []).append(body)
    return [_read_csv(io.StringIO(header + "\n" + "".join(bodies))) for header, bodies in groups.items()]


def _read_frames(source) -> list[pd.DataFrame]:
    if isinstance(source, (list, tuple)):
        if all(isinstance(item, (str, os.PathLike)) for item in source):
            return _read_paths(source)
        frames = []
        for item in source:
            frames.extend(_read_frames(item))
        return frames
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    elif isinstance(source, (str, os.PathLike)):
        source = Path(source)
    return [_read_csv(source)]


def _frame_to_series(df: pd.DataFrame, schema: Schema, serial: str | None) -> BatterySeries:
    n_rows = len(df)
    ts = pd.to_datetime(df["timestamp"], utc=True, errors="coerce", format="ISO8601")
    serials = df["serial"].str.strip()
    valid = ts.notna().to_numpy() & (serials != "").to_numpy()
    unparsed = int(n_rows - valid.sum())

    numeric = {name: pd.to_numeric(df[name], errors="coerce").to_numpy(dtype=float) for name in NUMERIC}
    bad_numeric = np.zeros(n_rows, dtype=bool)
    for values in numeric.values():
        bad_numeric |= ~np.isfinite(values)
    failures = unparsed + int((bad_numeric & valid).sum())
    if not valid.any():
        raise EmptySource("no row with a parseable timestamp and serial")
    if failures > 0.5 * n_rows:
        raise TooManyParseFailures(f"{failures} of {n_rows} rows failed to parse")

    found = sorted(set(serials[valid]))
    if serial is None:
        if len(found) > 1:
            raise MixedSerial(f"serials {found} in one battery stream")
        serial = found[0]
    elif found != [serial]:
        raise MixedSerial(f"expected serial {serial!r}, found {found}")

    stamps = ts[valid].dt.tz_convert(None).to_numpy().astype("datetime64[m]")
    order = np.argsort(stamps, kind="stable")
    stamps = stamps[order]
    cols = {name: numeric[name][valid][order] for name in NUMERIC}
    return BatterySeries(
        serial=serial,
        timestamp=stamps,
        voltage=cols["voltage"],
        current=cols["current"] * schema.current_sign,
        soc=cols["soc"],
        ambient_temp=cols["ambient_temp"],
        gaps=find_gaps(stamps, schema.gap_minutes),
        unparsed_rows=unparsed,
    )


def parse_telemetry(source, schema: Schema = Schema(), serial: str | None = None) -> BatterySeries:
    """Parse one battery's telemetry from a path, bytes, file object, or a list of them.

    Rows whose timestamp or serial cannot be parsed are dropped and counted in
    ``unparsed_rows``; rows with an unparseable numeric field keep a NaN there and
    are removed by :func:`clean`. More than half the rows failing is fatal.
    """
    frames = _read_frames(source)
    mapping = schema.mapping()
    renamed = []
    for df in frames:
        missing = [src for src in mapping.values() if src not in df.columns]
        if missing:
            raise MissingColumn(f"missing column(s): {', '.join(missing)}")
        renamed.append(df.rename(columns={src: name for name, src in mapping.items()})[list(COLUMNS)])
    df = pd.concat(renamed, ignore_index=True)
    if df.empty:
        raise EmptySource("source has a header but no rows")
    return _frame_to_series(df, schema, serial)


def parse_directory(root, schema: Schema = Schema()) -> dict[str, BatterySeries]:
    """Walk ``<root>/<serial>/<date>.csv`` and parse each battery separately."""
    root = Path(root)
    out = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(sub.glob("*.csv"))
        if files:
            out[sub.name] = parse_telemetry(files, schema, serial=sub.name)
    if not out:
        raise EmptySource(f"no <serial>/<date>.csv files under {root}")
    return out


def _spike_mask(voltage: np.ndarray, window: int, threshold: float) -> np.ndarray:
    if len(voltage) == 0:
        return np.zeros(0, dtype=bool)
    dev = np.abs(voltage - median_filter(voltage, size=window, mode="nearest"))
    flagged = np.where(dev > threshold, dev, 0.0)
    # a cluster of spikes can drag the median onto a good row; drop only the
    # worst spike in each neighbourhood per pass and let the caller repeat
    return (flagged > 0) & (flagged >= maximum_filter1d(flagged, size=window, mode="nearest"))


def clean(series: BatterySeries, rules: CleaningConfig = CleaningConfig()) -> tuple[BatterySeries, CleaningReport]:
    """Drop transient sensor failures.

    Rules run in a fixed order and each dropped row is charged to the first
    rule that catches it. The voltage spike rule is repeated until it removes
    nothing, which makes cleaning idempotent.
    """
    n = len(series)
    dropped = dict.fromkeys(CLEANING_RULES, 0)
    dropped["unparseable"] = series.unparsed_rows
    keep = np.ones(n, dtype=bool)

    def apply(rule: str, bad: np.ndarray) -> None:
        hit = keep & bad
        dropped[rule] += int(hit.sum())
        keep[hit] = False

    finite = np.ones(n, dtype=bool)
    for name in NUMERIC:
        finite &= np.isfinite(getattr(series, name))
    with np.errstate(invalid="ignore"):
        apply("unparseable", ~finite)
        apply("range_soc", (series.soc < rules.soc_min) | (series.soc > rules.soc_max))
        apply("range_voltage", series.voltage < rules.voltage_min)
        apply("range_temp", (series.ambient_temp < rules.temp_min) | (series.ambient_temp > rules.temp_max))
        apply("range_current", np.abs(series.current) > rules.max_abs_current)

    idx = np.flatnonzero(keep)
    if len(idx) > 1:
        dup = np.zeros(n, dtype=bool)
        dup[idx[1:]] = series.timestamp[idx[1:]] == series.timestamp[idx[:-1]]
        apply("duplicate_ts", dup)

    while True:
        idx = np.flatnonzero(keep)
        spikes = _spike_mask(series.voltage[idx], rules.spike_window, rules.spike_threshold_v)
        if not spikes.any():
            break
        bad = np.zeros(n, dtype=bool)
        bad[idx[spikes]] = True
        apply("spike_voltage", bad)

    rows_in = n + series.unparsed_rows
    kept = int(keep.sum())
    if kept == 0:
        raise AllDropped(f"all {rows_in} rows of {series.serial} were dropped")
    report = CleaningReport(rows_in=rows_in, rows_kept=kept, rows_dropped_by_rule=dropped)
    return series.take(keep), report


def series_from_arrays(serial: str, timestamp, voltage, current, soc, ambient_temp) -> BatterySeries:
    """Build a series from in-memory columns (sorted stably by time)."""
    ts = np.asarray(timestamp).astype("datetime64[m]")
    order = np.argsort(ts, kind="stable")
    ts = ts[order]
    return BatterySeries(
        serial=serial,
        timestamp=ts,
        voltage=np.asarray(voltage, dtype=float)[order],
        current=np.asarray(current, dtype=float)[order],
        soc=np.asarray(soc, dtype=float)[order],
        ambient_temp=np.asarray(ambient_temp, dtype=float)[order],
        gaps=find_gaps(ts),
    )


def write_series(series: BatterySeries, path) -> None:
    """Write a series in the ingest CSV layout (ISO-8601 UTC timestamps)."""
    df = series.to_frame()
    df["timestamp"] = np.datetime_as_string(series.timestamp, unit="m") + "Z"
    df[list(NUMERIC)] = df[list(NUMERIC)].round(CSV_DECIMALS)
    df.to_csv(path, index=False, lineterminator="\n")
