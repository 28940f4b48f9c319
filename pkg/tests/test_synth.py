import hashlib
import json

import numpy as np
import pytest

from sohcast.errors import InvalidConfig
from sohcast.ingest import clean, parse_directory
from sohcast.pipeline import analyze_battery
from sohcast.synth import (
    CORRUPTION_KINDS,
    FleetConfig,
    battery_serial,
    generate_battery,
    generate_fleet,
    write_fleet,
)

NOISELESS = dict(
    fade_rate=0.0,
    break_in_gain=0.0,
    soc_effect=0.0,
    voltage_noise=0.0,
    soc_noise=0.0,
    energy_noise=0.0,
    corruption_rate=0.0,
    internal_resistance_ohm=0.0,
)

# the cleaning rule each corruption kind is built to trip
RULE_FOR_KIND = {
    "soc_range": "range_soc",
    "negative_voltage": "range_voltage",
    "voltage_spike": "spike_voltage",
    "temp_range": "range_temp",
    "unparseable": "unparseable",
    "absurd_current": "range_current",
}


def tree_digest(root):
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def test_serials():
    assert [battery_serial(i) for i in (0, 1, 25, 26, 27)] == ["BAT-A", "BAT-B", "BAT-Z", "BAT-AA", "BAT-AB"]


def test_files_are_byte_identical(tmp_path):
    cfg = FleetConfig(n_batteries=2, months=1, seed=7)
    write_fleet(cfg, tmp_path / "a")
    write_fleet(cfg, tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    write_fleet(FleetConfig(n_batteries=2, months=1, seed=8), tmp_path / "c")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_battery_independent_of_fleet_size():
    small, _ = generate_battery(FleetConfig(n_batteries=2, months=1, seed=3), 1)
    again, _ = generate_fleet(FleetConfig(n_batteries=2, months=1, seed=3))
    assert np.array_equal(small.voltage, again["BAT-B"].voltage, equal_nan=True)


def test_written_layout_parses_back(tmp_path):
    cfg = FleetConfig(n_batteries=2, months=1, seed=1)
    truths = write_fleet(cfg, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["BAT-A", "BAT-B", "ground_truth.json"]
    assert len(list((tmp_path / "BAT-A").glob("2017-01-*.csv"))) == 31
    fleet = parse_directory(tmp_path)
    for serial, series in fleet.items():
        assert len(series) == truths[serial].n_records
    doc = json.loads((tmp_path / "ground_truth.json").read_text())
    assert FleetConfig.from_dict(doc["config"]) == cfg
    assert set(doc["batteries"]) == {"BAT-A", "BAT-B"}


def test_noiseless_constant_capacity_gives_full_health():
    series, truth = generate_battery(FleetConfig(n_batteries=1, months=3, **NOISELESS), 0)
    a = analyze_battery(series, with_features=False)
    assert np.all(truth.true_soh == 100.0)
    # capacity samples agree with c0 up to float summation order
    np.testing.assert_allclose(a.soh.soh, 100.0, rtol=0, atol=1e-9)


def test_corruption_fraction():
    series, truth = generate_battery(FleetConfig(n_batteries=1, months=2, corruption_rate=0.25, seed=2), 0)
    _, report = clean(series)
    assert 0.20 <= report.drop_fraction <= 0.30
    series, truth = generate_battery(FleetConfig(n_batteries=1, months=2, corruption_rate=0.0, seed=2), 0)
    _, report = clean(series)
    assert report.drop_fraction == 0 and len(truth.corrupted_rows) == 0


def test_ledger_indexes_every_corruption():
    series, truth = generate_battery(FleetConfig(n_batteries=1, months=1, corruption_rate=0.1, seed=4), 0)
    assert len(truth.corrupted_rows) == round(0.1 * truth.n_records)
    assert set(truth.corruption_kinds) == set(CORRUPTION_KINDS)
    _, report = clean(series)
    expected = {rule: 0 for rule in report.rows_dropped_by_rule}
    for kind in truth.corruption_kinds:
        expected[RULE_FOR_KIND[kind]] += 1
    assert report.rows_dropped_by_rule == expected


def test_corrupted_rows_are_the_only_changes():
    cfg = FleetConfig(n_batteries=1, months=1, seed=5)
    bad, truth = generate_battery(cfg, 0)
    good, _ = generate_battery(FleetConfig(n_batteries=1, months=1, seed=5, corruption_rate=0.0), 0)
    # same draws up to the corruption step, so untouched rows must agree exactly
    assert len(bad) == len(good)
    diff = np.zeros(len(bad), dtype=bool)
    for name in ("voltage", "current", "soc", "ambient_temp"):
        a, b = getattr(bad, name), getattr(good, name)
        diff |= ~((a == b) | (np.isnan(a) & np.isnan(b)))
    assert set(np.flatnonzero(diff)) <= set(truth.corrupted_rows.tolist())


def test_pulse_energy_consistent_with_capacity():
    _, truth = generate_battery(FleetConfig(n_batteries=1, months=2, seed=6), 0)
    ratio = truth.pulse_energy_wh / truth.pulse_capacity_wh * 100 / truth.pulse_delta_soc
    # energy noise 0.5% plus internal resistance and voltage noise
    assert abs(np.median(ratio) - 1) < 0.01
    assert np.quantile(np.abs(ratio - 1), 0.95) < 0.03


def test_every_charging_minute_in_energy_ledger():
    series, truth = generate_battery(FleetConfig(n_batteries=1, months=2, seed=8, corruption_rate=0), 0)
    energy = np.where(series.current > 0, series.current * series.voltage, 0) / 60
    month = (series.timestamp.astype("datetime64[M]") - truth.months[0]).astype(int)
    per_month = np.bincount(month, weights=energy)
    np.testing.assert_allclose(np.cumsum(per_month), truth.cumulative_energy_wh, rtol=1e-9)


def test_ambient_within_limits():
    series, _ = generate_battery(FleetConfig(n_batteries=1, months=12, seed=0, corruption_rate=0), 0)
    assert series.ambient_temp.min() >= -20 and series.ambient_temp.max() <= 36


def test_divergent_battery_grows():
    cfg = FleetConfig(n_batteries=2, months=24, divergent=(1,), break_in_gain=0.0)
    _, down = generate_battery(cfg, 0)
    _, up = generate_battery(cfg, 1)
    assert down.true_soh[-1] < 97 and up.true_soh[-1] > 103


@pytest.mark.parametrize(
    "bad",
    [
        {"n_batteries": 0},
        {"months": -1},
        {"fade_rate": -1.0},
        {"corruption_rate": 0.6},
        {"charge_rate_range": (1.0, 0.5)},
        {"divergent": (3,), "n_batteries": 2},
    ],
)
def test_invalid_config(bad):
    with pytest.raises(InvalidConfig):
        FleetConfig(**bad)


def test_config_round_trip():
    cfg = FleetConfig(n_batteries=3, divergent=(2,), seed=11)
    doc = json.loads(json.dumps(cfg.to_dict()))
    assert FleetConfig.from_dict(doc) == cfg
    with pytest.raises(InvalidConfig):
        FleetConfig.from_dict({"bogus": 1})
