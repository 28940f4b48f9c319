"""Report and plot-data files.

Every output directory gets a ``run.json`` manifest holding the subcommand,
seed and config digest. JSON is written with sorted keys and CSV floats with
full precision, so repeated runs are byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .derive import SoHSeries
from .ensemble import FeatureMatrix
from .errors import BadConfig
from .features import ALL_FEATURES, MonthlyFeatureTable


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.datetime64, np.bool_)):
        return str(obj) if isinstance(obj, np.datetime64) else bool(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BadConfig(f"cannot read {path}: {exc}") from exc


def write_csv(path, frame: pd.DataFrame) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")


def soh_frame(soh: SoHSeries) -> pd.DataFrame:
    return pd.DataFrame({"month": soh.months.astype(str), "soh": soh.soh, "samples": soh.samples_per_month})


def read_soh(path, c0_wh: float = float("nan"), serial: str = "") -> SoHSeries:
    df = pd.read_csv(path)
    months = df["month"].to_numpy().astype("datetime64[M]")
    counts = df["samples"].to_numpy(dtype=int) if "samples" in df else np.isfinite(df["soh"]).astype(int).to_numpy()
    return SoHSeries(serial, c0_wh, months, df["soh"].to_numpy(dtype=float), counts)


def feature_frame(table: MonthlyFeatureTable) -> pd.DataFrame:
    df = pd.DataFrame(table.data.values, columns=table.data.feature_names)
    df.insert(0, "month", table.months.astype(str))
    df.insert(0, "serial", table.serial)
    df["soh"] = table.data.target
    return df


def read_features(path) -> MonthlyFeatureTable:
    df = pd.read_csv(path)
    missing = [c for c in ("month", "soh") if c not in df]
    if missing:
        raise BadConfig(f"{path} lacks column(s) {missing}")
    names = [c for c in ALL_FEATURES if c in df]
    serial = str(df["serial"].iloc[0]) if "serial" in df and len(df) else Path(path).parent.name
    data = FeatureMatrix(names, df[names].to_numpy(dtype=float), df["soh"].to_numpy(dtype=float))
    return MonthlyFeatureTable(serial, df["month"].to_numpy().astype("datetime64[M]"), data)


def read_series_column(path, column: str = "soh") -> tuple[np.ndarray, np.ndarray | None]:
    """Values (and months, when present) of one column of a CSV, NaN rows removed."""
    df = pd.read_csv(path)
    if column not in df:
        raise BadConfig(f"{path} has no column {column!r}")
    ok = df[column].notna().to_numpy()
    months = df["month"].to_numpy()[ok] if "month" in df else None
    return df[column].to_numpy(dtype=float)[ok], months
