import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sohcast.errors import AllDropped, EmptySource, MissingColumn, MixedSerial, TooManyParseFailures
from sohcast.ingest import (
    CLEANING_RULES,
    CleaningConfig,
    Schema,
    clean,
    find_gaps,
    parse_directory,
    parse_telemetry,
    series_from_arrays,
    write_series,
)

HEADER = "timestamp,serial,voltage,current,soc,ambient_temp\n"


def csv(*rows, header=HEADER):
    return io.StringIO(header + "".join(r + "\n" for r in rows))


def minute_series(n, soc=None, voltage=None, serial="A", start="2020-01-01T00:00"):
    ts = np.datetime64(start) + np.arange(n).astype("timedelta64[m]")
    return series_from_arrays(
        serial,
        ts,
        np.full(n, 80.0) if voltage is None else voltage,
        np.zeros(n),
        np.full(n, 50.0) if soc is None else soc,
        np.full(n, 10.0),
    )


# --- parse ---------------------------------------------------------------


def test_parse_sorts_rows():
    s = parse_telemetry(
        csv(
            "2020-01-01T00:02:00Z,A,80,1,50,10",
            "2020-01-01T00:00:00Z,A,81,2,51,11",
            "2020-01-01T00:01:00Z,A,82,3,52,12",
        )
    )
    assert len(s) == 3 and s.serial == "A"
    assert s.voltage.tolist() == [81, 82, 80]
    assert np.all(np.diff(s.timestamp) > np.timedelta64(0, "m"))
    assert s.records[0].soc == 51


def test_parse_header_only():
    with pytest.raises(EmptySource):
        parse_telemetry(csv())


def test_parse_missing_column():
    with pytest.raises(MissingColumn):
        parse_telemetry(csv("2020-01-01T00:00Z,A,80,1,50", header="timestamp,serial,voltage,current,soc\n"))


def test_parse_mixed_serial():
    with pytest.raises(MixedSerial):
        parse_telemetry(csv("2020-01-01T00:00Z,A,80,1,50,10", "2020-01-01T00:01Z,B,80,1,50,10"))


def test_parse_counts_bad_rows():
    s = parse_telemetry(
        csv(
            "2020-01-01T00:00Z,A,80,1,50,10",
            "garbage,A,80,1,50,10",
            "2020-01-01T00:02Z,A,ERR,1,50,10",
            "2020-01-01T00:03Z,A,80,1,50,10",
        )
    )
    assert s.unparsed_rows == 1 and len(s) == 3 and np.isnan(s.voltage[1])
    _, report = clean(s)
    assert report.rows_in == 4 and report.rows_dropped_by_rule["unparseable"] == 2


def test_parse_too_many_failures():
    with pytest.raises(TooManyParseFailures):
        parse_telemetry(csv("2020-01-01T00:00Z,A,80,1,50,10", "x,A,1,1,1,1", "y,A,1,1,1,1"))


def test_parse_schema_mapping_and_sign():
    schema = Schema(timestamp="time", serial="id", voltage="V", current="I", soc="SOC", ambient_temp="T", current_sign=-1.0)
    s = parse_telemetry(csv("2020-01-01T00:00Z,A,80,-5,50,10", header="time,id,V,I,SOC,T\n"), schema)
    assert s.current.tolist() == [5.0]


def test_two_files_concatenate_with_gap(tmp_path):
    day1 = tmp_path / "A" / "2020-01-01.csv"
    day2 = tmp_path / "A" / "2020-01-02.csv"
    day1.parent.mkdir()
    day1.write_text(HEADER + "2020-01-01T23:58Z,A,80,1,50,10\n2020-01-01T23:59Z,A,80,1,50,10\n")
    day2.write_text(HEADER + "2020-01-02T00:15Z,A,80,1,50,10\n2020-01-02T00:16Z,A,80,1,50,10\n")
    s = parse_telemetry([day2, day1])
    assert len(s) == 4
    assert s.gaps == [(np.datetime64("2020-01-01T23:59"), np.datetime64("2020-01-02T00:15"))]
    fleet = parse_directory(tmp_path)
    assert list(fleet) == ["A"] and len(fleet["A"]) == 4


def test_find_gaps_threshold():
    ts = np.datetime64("2020-01-01T00:00") + np.array([0, 1, 11, 22, 23]).astype("timedelta64[m]")
    assert [(int((b - a) / np.timedelta64(1, "m"))) for a, b in find_gaps(ts)] == [11]


def test_write_then_parse_round_trip(tmp_path):
    s = minute_series(20, soc=np.linspace(20, 40, 20))
    write_series(s, tmp_path / "a.csv")
    back = parse_telemetry(tmp_path / "a.csv")
    assert np.array_equal(back.timestamp, s.timestamp)
    np.testing.assert_allclose(back.soc, s.soc, atol=1e-6)


# --- clean ---------------------------------------------------------------


def test_clean_soc_out_of_range():
    soc = np.full(10, 50.0)
    soc[4] = 250.0
    out, report = clean(minute_series(10, soc=soc))
    assert len(out) == 9 and report.rows_dropped_by_rule["range_soc"] == 1
    assert report.drop_fraction == pytest.approx(0.1)


def test_clean_identity_on_clean_series():
    s = minute_series(30, soc=np.linspace(30, 60, 30))
    out, report = clean(s)
    assert report.drop_fraction == 0
    for name in ("timestamp", "voltage", "current", "soc", "ambient_temp"):
        assert np.array_equal(getattr(out, name), getattr(s, name))


def test_clean_each_rule():
    n = 40
    s = minute_series(n)
    s.voltage[3] = -5
    s.voltage[10] = 300
    s.ambient_temp[15] = 90
    s.current[20] = 1e6
    s.soc[25] = np.nan
    s.timestamp[31] = s.timestamp[30]
    _, report = clean(s)
    counts = report.rows_dropped_by_rule
    assert set(counts) == set(CLEANING_RULES)
    assert counts == {
        "unparseable": 1,
        "range_soc": 0,
        "range_voltage": 1,
        "range_temp": 1,
        "range_current": 1,
        "duplicate_ts": 1,
        "spike_voltage": 1,
    }
    assert report.rows_kept + sum(counts.values()) == report.rows_in


def test_clean_spike_cluster_spares_good_rows():
    v = np.full(12, 80.0)
    v[[4, 5, 8]] = [281.0, 223.0, 180.0]
    out, report = clean(minute_series(12, voltage=v))
    assert report.rows_dropped_by_rule["spike_voltage"] == 3
    assert np.all(out.voltage == 80.0)


def test_clean_all_dropped():
    with pytest.raises(AllDropped):
        clean(minute_series(5, soc=np.full(5, -1.0)))


def test_clean_respects_config():
    soc = np.full(10, 50.0)
    soc[0] = 95.0
    _, report = clean(minute_series(10, soc=soc), CleaningConfig(soc_max=90.0))
    assert report.rows_dropped_by_rule["range_soc"] == 1


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.one_of(st.floats(-20, 200), st.just(float("nan"))),
            st.floats(-50, 150, allow_nan=False),
            st.floats(-60, 80, allow_nan=False),
        ),
        min_size=3,
        max_size=60,
    )
)
def test_clean_idempotent_conserving_order_preserving(rows):
    v, soc, temp = (np.array(c, dtype=float) for c in zip(*rows))
    n = len(rows)
    ts = np.datetime64("2020-01-01T00:00") + np.arange(n).astype("timedelta64[m]")
    s = series_from_arrays("A", ts, v, np.ones(n), soc, temp)
    try:
        once, report = clean(s)
    except AllDropped:
        return
    assert report.rows_kept + sum(report.rows_dropped_by_rule.values()) == report.rows_in
    assert np.all(np.diff(once.timestamp) > np.timedelta64(0, "m"))
    twice, again = clean(once)
    assert again.drop_fraction == 0 and len(twice) == len(once)
    assert np.all(once.soc >= 0) and np.all(once.soc <= 100) and np.all(once.voltage >= 0)
