"""Command-line entry point: ``sohcast <subcommand> [options]``.

Exit codes: 0 success, 1 domain error (one ``error: <Code>: <message>`` line
on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import io
from .arima import ArimaModel, ArimaOrder, fit_arima, forecast
from .config import RunConfig, load_config
from .derive import years_to_threshold
from .ensemble import Ensemble, FeatureMatrix, Learner, feature_importance
from .errors import BadConfig, EmptySource, SohError, UnknownSubcommand
from .evaluation import compare, default_forecasters, grid_search, kfold_evar, run_forecaster
from .features import PRESETS, MonthlyFeatureTable, preset
from .fleet import fleet_wilcoxon
from .ingest import clean, parse_directory, parse_telemetry, write_series
from .pipeline import BatteryAnalysis, analyze_battery
from .stats import acf_pacf, adf_test, difference, standardize, Standardizer
from .synth import FleetConfig, write_fleet

log = logging.getLogger("sohcast")
COMMANDS = (
    "ingest",
    "derive",
    "diagnose",
    "fit-arima",
    "forecast",
    "fit-bag",
    "predict",
    "grid-search",
    "evaluate",
    "compare",
    "fleet-test",
    "synth",
)


# ---------------------------------------------------------------- inputs


def _raw_or_clean(path: Path) -> dict:
    """Telemetry under ``path``: an ingest output, a ``<serial>/<date>.csv`` tree, or one CSV file."""
    if path.is_file():
        s = parse_telemetry(path)
        return {s.serial: s}
    clean_dir = path / "clean"
    if clean_dir.is_dir():
        return {f.stem: parse_telemetry(f, serial=f.stem) for f in sorted(clean_dir.glob("*.csv"))}
    return parse_directory(path)


def _is_derived(path: Path) -> bool:
    return path.is_dir() and (path / "derive_summary.json").is_file()


def _analyses(path: Path, cfg: RunConfig) -> dict[str, BatteryAnalysis]:
    return {serial: analyze_battery(raw, cfg) for serial, raw in sorted(_raw_or_clean(path).items())}


def _tables(path: Path, cfg: RunConfig) -> dict[str, MonthlyFeatureTable]:
    if path.is_file():
        table = io.read_features(path)
        return {table.serial: table}
    if _is_derived(path):
        summary = io.read_json(path / "derive_summary.json")
        return {s: io.read_features(path / s / "features.csv") for s in sorted(summary["batteries"])}
    return {s: a.features for s, a in _analyses(path, cfg).items()}


def _sohs(path: Path, cfg: RunConfig) -> dict:
    if _is_derived(path):
        summary = io.read_json(path / "derive_summary.json")["batteries"]
        return {s: io.read_soh(path / s / "soh_monthly.csv", summary[s]["c0_wh"], s) for s in sorted(summary)}
    return {s: a.soh for s, a in _analyses(path, cfg).items()}


def _pick(tables: dict, serial: str | None, cfg: RunConfig):
    serial = serial or cfg.fleet.reference or sorted(tables)[0]
    if serial not in tables:
        raise EmptySource(f"no battery {serial!r}; have {sorted(tables)}")
    return tables[serial]


def _manifest(out: Path, command: str, cfg: RunConfig, extra: dict | None = None) -> None:
    doc = {"command": command, "seed": cfg.seed, "config_digest": cfg.digest(), "config": cfg.to_dict()}
    doc.update(extra or {})
    io.write_json(out / "run.json", doc)


# ---------------------------------------------------------------- commands


def cmd_synth(args, cfg: RunConfig) -> None:
    doc = io.read_json(args.fleet_config) if args.fleet_config else {}
    overrides = {"seed": cfg.seed if args.seed is not None else doc.get("seed", 0)}
    for key in ("n_batteries", "months", "corruption_rate"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    fleet_cfg = FleetConfig.from_dict({**doc, **overrides})
    truths = write_fleet(fleet_cfg, args.out)
    _manifest(args.out, "synth", cfg, {"fleet_config": fleet_cfg.to_dict()})
    print(f"wrote {len(truths)} batteries to {args.out}")


def cmd_ingest(args, cfg: RunConfig) -> None:
    raw = parse_directory(args.input) if args.input.is_dir() else _raw_or_clean(args.input)
    reports = {}
    for serial, series in sorted(raw.items()):
        cleaned, report = clean(series, cfg.cleaning)
        (args.out / "clean").mkdir(parents=True, exist_ok=True)
        write_series(cleaned, args.out / "clean" / f"{serial}.csv")
        reports[serial] = report.to_dict()
        log.info("%s: kept %d of %d rows", serial, report.rows_kept, report.rows_in)
    io.write_json(args.out / "cleaning_report.json", {"config_digest": cfg.digest(), "batteries": reports})
    _manifest(args.out, "ingest", cfg)


def cmd_derive(args, cfg: RunConfig) -> None:
    summary = {}
    for serial, a in _analyses(args.input, cfg).items():
        folder = args.out / serial
        pulses = pd.DataFrame(
            [
                {
                    "start": str(p.start_ts),
                    "end": str(p.end_ts),
                    "minutes": p.duration_min,
                    "soc_start": p.soc_start,
                    "soc_end": p.soc_end,
                    "delta_soc": p.delta_soc,
                    "energy_wh": p.energy_wh,
                    "mean_current": p.mean_current,
                    "mean_voltage": p.mean_voltage,
                    "selected": p.selected,
                }
                for p in a.pulses
            ]
        )
        io.write_csv(folder / "pulses.csv", pulses)
        io.write_csv(
            folder / "capacity.csv",
            pd.DataFrame({"ts": [str(s.ts) for s in a.samples], "c_n_wh": [s.c_n_wh for s in a.samples]}),
        )
        io.write_csv(folder / "soh_monthly.csv", io.soh_frame(a.soh))
        day_end = np.flatnonzero(
            np.append(a.cycles.ts[1:].astype("datetime64[D]") != a.cycles.ts[:-1].astype("datetime64[D]"), True)
        )
        io.write_csv(
            folder / "cycles.csv",
            pd.DataFrame(
                {
                    "date": a.cycles.ts[day_end].astype("datetime64[D]").astype(str),
                    "cumulative_energy_wh": a.cycles.cumulative_energy_wh[day_end],
                    "equivalent_cycles": a.cycles.equivalent_cycles[day_end],
                }
            ),
        )
        io.write_csv(folder / "features.csv", io.feature_frame(a.features))
        slope, intercept = a.soh.linear_trend()
        summary[serial] = {
            "c0_wh": a.c0_wh,
            "pulses": len(a.pulses),
            "capacity_samples": len(a.samples),
            "soh_slope_per_year": slope,
            "soh_intercept": intercept,
            "years_to_80": years_to_threshold(slope, intercept),
            "cycles_per_year": a.cycles.cycles_per_year,
            "cycles_at_10_years": a.cycles.cycles_at_10_years,
            "cleaning": a.cleaning.to_dict(),
        }
    io.write_json(args.out / "derive_summary.json", {"config_digest": cfg.digest(), "batteries": summary})
    _manifest(args.out, "derive", cfg)


def cmd_diagnose(args, cfg: RunConfig) -> None:
    y, _ = io.read_series_column(args.input, args.column)
    w = difference(y, args.difference) if args.difference else y
    max_lag = min(args.max_lag, len(w) - 1)
    acf, pacf = acf_pacf(w, max_lag)
    adf = adf_test(w)
    counts, edges = np.histogram(w, bins=args.bins)
    io.write_csv(args.out / "acf.csv", pd.DataFrame({"lag": np.arange(max_lag + 1), "acf": acf, "pacf": pacf}))
    io.write_csv(args.out / "histogram.csv", pd.DataFrame({"left": edges[:-1], "right": edges[1:], "count": counts}))
    doc = {"config_digest": cfg.digest(), "difference": args.difference, "n": len(w), "adf": adf.to_dict()}
    io.write_json(args.out / "diagnose.json", doc)
    _manifest(args.out, "diagnose", cfg)
    verdict = "stationary" if adf.stationary_at["1%"] else "not stationary"
    print(f"ADF statistic {adf.statistic:.4f} (1% critical {adf.critical_values['1%']:.4f}): {verdict} at 1%")


def cmd_fit_arima(args, cfg: RunConfig) -> None:
    y, _ = io.read_series_column(args.input, args.column)
    order = ArimaOrder.parse(args.order or cfg.model.arima_order)
    model = fit_arima(y, order, drift=args.drift)
    io.write_json(args.out, {"config_digest": cfg.digest(), "model": model.to_dict()})
    print(f"{order}: phi={model.phi.tolist()} theta={model.theta.tolist()} sigma2={model.sigma2:.6g}")


def cmd_forecast(args, cfg: RunConfig) -> None:
    model = ArimaModel.from_dict(io.read_json(args.model)["model"])
    preds = forecast(model, args.steps)
    io.write_csv(args.out, pd.DataFrame({"step": np.arange(1, args.steps + 1), "forecast": preds}))


def _table_arg(args, cfg: RunConfig) -> MonthlyFeatureTable:
    return _pick(_tables(args.input, cfg), args.serial, cfg)


def cmd_fit_bag(args, cfg: RunConfig) -> None:
    table = _table_arg(args, cfg).select(args.features or cfg.model.features)
    X, scaler = standardize(table.data.values)
    data = FeatureMatrix(table.data.feature_names, X, table.data.target)
    model = Learner.make("bagging", B=args.trees or cfg.model.bag_trees, seed=cfg.seed, n_jobs=args.threads).fit(data)
    doc = {
        "config_digest": cfg.digest(),
        "features": table.data.feature_names,
        "scaler": {"mean": scaler.mean.tolist(), "sd": scaler.sd.tolist()},
        "importance": feature_importance(model).tolist(),
        "model": model.to_dict(),
    }
    io.write_json(args.out, doc)
    print(f"fitted {model.B} trees on {data.n_rows} months")


def cmd_predict(args, cfg: RunConfig) -> None:
    doc = io.read_json(args.model)
    model = Ensemble.from_dict(doc["model"])
    scaler = Standardizer(np.array(doc["scaler"]["mean"]), np.array(doc["scaler"]["sd"]), None)
    table = io.read_features(args.input).select(doc["features"])
    preds = model.predict(scaler.transform(table.data.values))
    io.write_csv(args.out, pd.DataFrame({"month": table.months.astype(str), "predicted": preds, "observed": table.data.target}))


def cmd_grid_search(args, cfg: RunConfig) -> None:
    table = _table_arg(args, cfg).select(args.features or cfg.model.features)
    try:
        grid = json.loads(args.grid)
    except json.JSONDecodeError as exc:
        raise BadConfig(f"--grid is not valid JSON: {exc}") from exc
    X, _ = standardize(table.data.values)
    data = FeatureMatrix(table.data.feature_names, X, table.data.target)
    result = grid_search(args.kind, grid, data, k=cfg.model.kfold, seed=cfg.seed, n_jobs=args.threads)
    doc = {"config_digest": cfg.digest(), "best_params": result.best_params, "best_evar": result.best_score, "table": result.table}
    io.write_json(args.out / "grid.json", doc)
    _manifest(args.out, "grid-search", cfg)
    print(f"best {result.best_params} mean EVAR {result.best_score:.4f}")


def cmd_evaluate(args, cfg: RunConfig) -> None:
    table = _table_arg(args, cfg)
    models = default_forecasters(cfg.model.bag_trees, cfg.model.arima_order, cfg.model.features)
    traces, metrics = {}, {}
    for model in models:
        trace, m = run_forecaster(model, table, cfg.model.split, cfg.seed)
        traces[model.name], metrics[model.name] = trace, m.to_dict()
    kfold = {}
    for name in PRESETS:
        data = table.data.select(preset(name))
        mean, sd = kfold_evar(Learner.make("bagging", B=cfg.model.bag_trees, n_jobs=args.threads), data, cfg.model.kfold, cfg.seed)
        kfold[name] = {"mean_evar": mean, "sd_evar": sd}
    first = next(iter(traces.values()))
    frame = pd.DataFrame({"month": first.timestamps.astype(str), "observed": first.observed})
    for name, trace in traces.items():
        frame[name] = trace.predicted
    io.write_csv(args.out / "forecast_trace.csv", frame)
    doc = {"config_digest": cfg.digest(), "serial": table.serial, "walk_forward": metrics, "kfold": kfold}
    io.write_json(args.out / "evaluate.json", doc)
    _manifest(args.out, "evaluate", cfg)


def cmd_compare(args, cfg: RunConfig) -> None:
    table = _table_arg(args, cfg)
    models = default_forecasters(cfg.model.bag_trees, cfg.model.arima_order, cfg.model.features)
    report = compare(models, table, cfg.model.split, cfg.seed, cfg.digest())
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "report.json").write_text(report.to_json())
    (args.out / "report.csv").write_text(report.to_csv())
    _manifest(args.out, "compare", cfg)
    for row in report.rows:
        print(f"{row['method']:<14} rmse {row['rmse_soh']:.3f}  r2 {row['r2']:.3f}")


def cmd_fleet_test(args, cfg: RunConfig) -> None:
    sohs = _sohs(args.input, cfg)
    reference = args.reference or cfg.fleet.reference or sorted(sohs)[0]
    if reference not in sohs:
        raise EmptySource(f"no battery {reference!r}")
    others = [s for k, s in sohs.items() if k != reference]
    study = fleet_wilcoxon(sohs[reference], others, cfg.fleet.alpha, cfg.fleet.min_months)
    doc = study.to_dict()
    doc["config_digest"] = cfg.digest()
    io.write_json(args.out / "fleet_report.json", doc)
    _manifest(args.out, "fleet-test", cfg)
    print(f"{study.fraction_same:.0%} of {len(study.comparisons)} batteries match {reference}")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sohcast", description="Battery SoH derivation and forecasting.")
    sub = parser.add_subparsers(dest="command", metavar="<command>")

    def add(name, func, help_text, needs_input=True, out_is_file=False):
        p = sub.add_parser(name, help=help_text)
        if needs_input:
            p.add_argument("--input", "-i", type=Path, required=True)
        p.add_argument("--out", "-o", type=Path, required=True, help="output file" if out_is_file else "output directory")
        p.add_argument("--config", type=Path, help="JSON config (default: $SOHCAST_CONFIG)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("-v", "--verbose", action="count", default=0)
        p.set_defaults(func=func)
        return p

    add("ingest", cmd_ingest, "parse and clean raw telemetry")
    add("derive", cmd_derive, "pulses, capacity, monthly SoH, cycles and features")
    p = add("diagnose", cmd_diagnose, "ACF/PACF, ADF test and histogram of a series")
    p.add_argument("--column", default="soh")
    p.add_argument("--difference", type=int, default=0)
    p.add_argument("--max-lag", type=int, default=12)
    p.add_argument("--bins", type=int, default=10)
    p = add("fit-arima", cmd_fit_arima, "fit an ARIMA model to a series", out_is_file=True)
    p.add_argument("--column", default="soh")
    p.add_argument("--order", help="p,d,q")
    p.add_argument("--drift", action="store_true")
    p = add("forecast", cmd_forecast, "forecast from a fitted ARIMA model", needs_input=False, out_is_file=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--steps", type=int, default=1)
    for name, func, text, is_file in (
        ("fit-bag", cmd_fit_bag, "fit bagged regression trees on monthly features", True),
        ("grid-search", cmd_grid_search, "k-fold grid search over ensemble hyperparameters", False),
        ("evaluate", cmd_evaluate, "walk-forward and k-fold evaluation of one battery", False),
        ("compare", cmd_compare, "persistence vs ARIMA vs bagging report", False),
    ):
        p = add(name, func, text, out_is_file=is_file)
        p.add_argument("--serial")
        if name in ("fit-bag", "grid-search"):
            p.add_argument("--features", help="preset (all, four, two) or comma-separated names")
        if name == "fit-bag":
            p.add_argument("--trees", type=int)
        if name == "grid-search":
            p.add_argument("--kind", default="bagging", choices=["cart", "bagging", "random_forest", "gbm"])
            p.add_argument("--grid", default='{"B": [10, 50, 100], "max_depth": [null, 3, 5]}')
    p = add("predict", cmd_predict, "predict SoH with a fitted ensemble", out_is_file=True)
    p.add_argument("--model", type=Path, required=True)
    p = add("fleet-test", cmd_fleet_test, "Wilcoxon screening of the fleet against a reference")
    p.add_argument("--reference")
    p = add("synth", cmd_synth, "generate a synthetic fleet", needs_input=False)
    p.add_argument("--fleet-config", type=Path, help="JSON with generator parameters")
    p.add_argument("--n-batteries", dest="n_batteries", type=int)
    p.add_argument("--months", type=int)
    p.add_argument("--corruption-rate", dest="corruption_rate", type=float)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    if not argv[0].startswith("-") and argv[0] not in COMMANDS:
        exc = UnknownSubcommand(f"{argv[0]!r} (choose from {', '.join(COMMANDS)})")
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        args.func(args, cfg)
    except SohError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
