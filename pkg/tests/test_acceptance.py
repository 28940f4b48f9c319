"""The twelve acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion NN: PASS|FAIL`` line; the lines are
repeated in the terminal summary.
"""

import filecmp
import json
import math
import time

import numpy as np
import pytest

from oracles import adf_normal_equations, cart_exhaustive, ses_path, tree_matches, wilcoxon_enumeration
from sohcast.arima import ArimaOrder, fit_arima, forecast, in_sample_forecasts
from sohcast.cli import main
from sohcast.derive import cumulative_energy, equivalent_cycles, years_to_threshold
from sohcast.ensemble import FeatureMatrix, Learner, fit_cart
from sohcast.evaluation import compare, default_forecasters, kfold_evar
from sohcast.fleet import fleet_wilcoxon
from sohcast.ingest import clean
from sohcast.metrics import score
from sohcast.pipeline import analyze_battery
from sohcast.stats import adf_test, wilcoxon_signed_rank
from sohcast.synth import FleetConfig, fade_only_config, generate_battery, same_distribution_config

EXPECTED_ORDER = ["BAG", "ARIMA(0,1,1)", "persistence"]


@pytest.fixture(scope="module")
def default_sweep():
    """Battery A of the default fleet for 50 seeds: ranking, k-fold EVAR and wall time."""
    start = time.perf_counter()
    rankings, evars = [], []
    for seed in range(50):
        series, _ = generate_battery(FleetConfig(seed=seed), 0)
        table = analyze_battery(series).features
        rankings.append(compare(default_forecasters(), table, 0.66, seed).ranking())
        learner = Learner.make("bagging", B=100)
        evars.append(kfold_evar(learner, table.select("two").data, 5, seed)[0])
    return rankings, np.array(evars), time.perf_counter() - start


def test_criterion_01_table2_ordering(default_sweep, verdict):
    rankings, _, elapsed = default_sweep
    share = np.mean([r == EXPECTED_ORDER for r in rankings])
    ok = share >= 0.8 and elapsed < 180
    verdict(1, ok, f"BAG < ARIMA(0,1,1) < persistence in {share:.0%} of 50 seeds ({elapsed:.0f} s incl. k-fold)")
    assert ok


def test_criterion_02_arima011_is_ses(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(20, 120))
        y = 50 + rng.normal(size=n).cumsum() + rng.normal(size=n) * rng.uniform(0.1, 3)
        model = fit_arima(y, ArimaOrder(0, 1, 1))
        path = ses_path(y, 1 + model.theta[0])
        ours = np.append(in_sample_forecasts(model, y), forecast(model, 1))
        worst = max(worst, float(np.max(np.abs(ours - path))))
    ok = worst <= 1e-8
    verdict(2, ok, f"max |ARIMA(0,1,1) - SES| = {worst:.1e} over 100 series")
    assert ok


def test_criterion_03_cart_oracle(verdict):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    fit_time, mismatches = 0.0, 0
    for case in range(200):
        n, p = int(rng.integers(2, 51)), int(rng.integers(1, 5))
        if case % 2:
            # small integer grids produce many exact ties
            X = rng.integers(0, 5, size=(n, p)).astype(float)
            y = rng.integers(-3, 4, size=n).astype(float)
        else:
            X = rng.normal(size=(n, p))
            y = rng.normal(size=n)
        t0 = time.perf_counter()
        tree = fit_cart(FeatureMatrix([f"x{j}" for j in range(p)], X, y))
        fit_time += time.perf_counter() - t0
        mismatches += not tree_matches(tree, cart_exhaustive(X, y))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 60
    verdict(3, ok, f"{200 - mismatches}/200 trees match exhaustive search ({elapsed:.1f} s, fitting {fit_time:.2f} s)")
    assert ok


def test_criterion_04_wilcoxon_exact(verdict):
    rng = np.random.default_rng(4)
    worst_exact = 0.0
    for n in range(1, 13):
        for _ in range(10):
            d = rng.normal(size=n) if n % 2 else rng.integers(-4, 5, size=n).astype(float)
            if not np.any(d):
                continue
            got = wilcoxon_signed_rank(d, np.zeros(n)).p_value
            worst_exact = max(worst_exact, abs(got - wilcoxon_enumeration(d)))
    worst_normal = 0.0
    samples = [rng.normal(0.3, 1, size=20) for _ in range(10)]
    # plus one sample for every attainable statistic: ranks 1..20 with a chosen negative set
    for w in range(0, 106):
        d, rest = np.arange(1.0, 21.0), w
        for r in range(20, 0, -1):
            if r <= rest:
                d[r - 1], rest = -r, rest - r
        samples.append(d)
    for d in samples:
        approx = wilcoxon_signed_rank(d, np.zeros(20), method="normal").p_value
        worst_normal = max(worst_normal, abs(approx - wilcoxon_enumeration(d)))
    ok = worst_exact <= 1e-12 and worst_normal <= 0.005
    verdict(4, ok, f"exact vs enumeration {worst_exact:.1e} (n<=12); normal vs exact {worst_normal:.4f} at n=20 (all W)")
    assert ok


def test_criterion_05_adf(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for lags in range(5):
        y = rng.normal(size=120).cumsum()
        res = adf_test(y, max_lags=lags, autolag=False)
        beta, stat = adf_normal_equations(y, lags)
        worst = max(worst, float(np.max(np.abs(res.params - beta))), abs(res.statistic - stat))
    stationary = walks = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        e = rng.normal(size=200)
        ar = np.zeros(200)
        for t in range(1, 200):
            ar[t] = 0.2 * ar[t - 1] + e[t]
        stationary += adf_test(ar).stationary_at["1%"]
        walks += not adf_test(np.cumsum(rng.normal(size=200))).stationary_at["1%"]
    ok = worst <= 1e-6 and stationary >= 180 and walks >= 180
    verdict(5, ok, f"internals {worst:.1e}; AR(1) rejected {stationary}/200; random walk kept {walks}/200")
    assert ok


def test_criterion_06_soh_recovery(verdict):
    slopes, years = [], []
    for seed in range(20):
        series, _ = generate_battery(fade_only_config(seed=seed), 0)
        slope, intercept = analyze_battery(series, with_features=False).soh.linear_trend()
        slopes.append(slope)
        years.append(years_to_threshold(slope, intercept))
    slopes, years = np.array(slopes), np.array(years)
    ok = bool(np.all(np.abs(slopes + 2.2) <= 0.3) and np.all((years >= 9) & (years <= 10)))
    verdict(
        6,
        ok,
        f"slope {slopes.min():.2f}..{slopes.max():.2f} %/yr, years to 80% {years.min():.2f}..{years.max():.2f} (20 seeds)",
    )
    assert ok


def test_criterion_07_cycle_life(verdict):
    errors, ten_year = [], []
    for seed in range(5):
        series, _ = generate_battery(FleetConfig(n_batteries=1, months=24, seed=seed), 0)
        cleaned, _ = clean(series)
        cyc = equivalent_cycles(cumulative_energy(cleaned), 40_000.0)
        years = (cyc.ts[-1] - cyc.ts[0]) / np.timedelta64(1, "m") / (365.25 * 24 * 60)
        errors.append(abs(cyc.equivalent_cycles[-1] / (300 * years) - 1))
        ten_year.append(cyc.cycles_at_10_years)
    ok = max(errors) <= 0.05 and all(abs(c / 3000 - 1) <= 0.10 for c in ten_year)
    verdict(7, ok, f"cycle count error <= {max(errors):.1%}; 10-year {min(ten_year):.0f}..{max(ten_year):.0f} (5 seeds)")
    assert ok


def test_criterion_08_cleaning_fidelity(verdict):
    dirty, clean_drops = [], []
    for seed in range(3):
        _, report = clean(generate_battery(FleetConfig(n_batteries=1, corruption_rate=0.25, seed=seed), 0)[0])
        dirty.append(report.drop_fraction)
        _, report = clean(generate_battery(FleetConfig(n_batteries=1, corruption_rate=0.0, seed=seed), 0)[0])
        clean_drops.append(report.rows_in - report.rows_kept)
    ok = all(0.20 <= f <= 0.30 for f in dirty) and not any(clean_drops)
    verdict(8, ok, f"drop fraction {min(dirty):.4f}..{max(dirty):.4f} at 25%; {sum(clean_drops)} drops at 0% (3 seeds)")
    assert ok


def test_criterion_09_kfold_evar(default_sweep, verdict):
    _, evars, _ = default_sweep
    ok = evars.mean() >= 0.9
    verdict(9, ok, f"two-feature k-fold EVAR mean {evars.mean():.3f} (min {evars.min():.3f}) over 50 seeds")
    assert ok


def test_criterion_10_fleet_study(verdict):
    fractions, rejected = [], 0
    for seed in range(20):
        cfg = same_distribution_config(seed=seed, divergent=(13,))
        sohs = [analyze_battery(generate_battery(cfg, b)[0], with_features=False).soh for b in range(cfg.n_batteries)]
        fractions.append(fleet_wilcoxon(sohs[0], sohs[1:13]).fraction_same)
        rejected += fleet_wilcoxon(sohs[0], [sohs[13]]).comparisons[0].status == "different"
    ok = np.mean(fractions) >= 0.9 and rejected >= 18
    verdict(10, ok, f"fraction_same mean {np.mean(fractions):.3f} (min {min(fractions):.3f}); divergent rejected {rejected}/20")
    assert ok


def test_criterion_11_metric_micro_cases(verdict):
    cases = [
        (score([1, 2, 4, 8], [1, 2, 4, 8]), (0.0, 1.0, 1.0)),
        (score([1, 2, 3], [2, 2, 2]), (math.sqrt(2 / 3), 0.0, 0.0)),
        (score([1, 2, 3, 4], [3, 4, 5, 6]), (2.0, 1.0, 1 - 16 / 5)),
        (score([0, 2, 4], [1, 1, 5]), (1.0, 2 / 3, 1 - 3 / 8)),
    ]
    worst = max(abs(got - want) for m, expect in cases for got, want in zip((m.rmse, m.evar, m.r2), expect))
    rng = np.random.default_rng(11)
    y, e = rng.normal(size=40), rng.normal(size=40)
    m = score(y, y - (e - e.mean()))
    gap = abs(m.evar - m.r2)
    ok = worst <= 1e-9 and gap <= 1e-9
    verdict(11, ok, f"hand cases within {worst:.1e}; |evar - r2| = {gap:.1e} for zero-mean residuals")
    assert ok


def _run_all(root, threads):
    def run(*argv):
        assert main([str(a) for a in argv] + ["--threads", str(threads)]) == 0, argv

    root.mkdir()
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"fleet": {"min_months": 18}, "model": {"bag_trees": 20}, "seed": 3}))
    common = ["--config", cfg]
    run("synth", "-o", root / "raw", "--n-batteries", 2, "--months", 20, *common)
    run("ingest", "-i", root / "raw", "-o", root / "ing", *common)
    run("derive", "-i", root / "ing", "-o", root / "der", *common)
    soh = root / "der" / "BAT-A" / "soh_monthly.csv"
    features = root / "der" / "BAT-A" / "features.csv"
    run("diagnose", "-i", soh, "-o", root / "diag", "--difference", 1, *common)
    run("fit-arima", "-i", soh, "-o", root / "arima.json", *common)
    run("forecast", "--model", root / "arima.json", "--steps", 6, "-o", root / "forecast.csv", *common)
    run("fit-bag", "-i", features, "-o", root / "bag.json", *common)
    run("predict", "-i", features, "--model", root / "bag.json", "-o", root / "predict.csv", *common)
    run("grid-search", "-i", root / "der", "-o", root / "grid", "--grid", '{"B": [5, 20], "max_depth": [null, 3]}', *common)
    run("evaluate", "-i", root / "der", "-o", root / "eval", *common)
    run("compare", "-i", root / "der", "-o", root / "cmp", *common)
    run("fleet-test", "-i", root / "der", "-o", root / "fleet", *common)
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_criterion_12_determinism(tmp_path, verdict):
    first = _run_all(tmp_path / "a", threads=1)
    second = _run_all(tmp_path / "b", threads=3)
    differing = [str(p) for p in first if not filecmp.cmp(tmp_path / "a" / p, tmp_path / "b" / p, shallow=False)]
    ok = first == second and not differing and len(first) > 100
    verdict(12, ok, f"{len(first)} files from 12 subcommands identical across runs with 1 and 3 threads {differing[:3]}")
    assert ok
