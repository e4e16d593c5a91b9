from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotbotsim.metrics import (
    SeriesError,
    TimeSeries,
    availability,
    export,
    read_csv,
    record,
    summarize,
    window_availability,
)


def series(name, units, pairs):
    s = TimeSeries(name, units)
    for t, v in pairs:
        s.record(t, v)
    return s


# -- recording ----------------------------------------------------------------------------------


def test_record_in_order():
    s = TimeSeries("x", "count")
    record(s, 1, 5)
    record(s, 2, 7)
    assert s.samples == [(1.0, 5.0), (2.0, 7.0)]


def test_record_out_of_order_rejected():
    s = series("x", "count", [(2, 7)])
    with pytest.raises(SeriesError):
        s.record(1, 5)
    with pytest.raises(SeriesError):
        s.record(2, 8)
    with pytest.raises(SeriesError):
        TimeSeries("y", "count").record(float("nan"), 1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e9, allow_nan=False), min_size=1, max_size=50, unique=True))
def test_times_stay_strictly_increasing(times):
    s = TimeSeries("x", "count")
    for t in sorted(times):
        s.record(t, 0.0)
    assert all(a < b for a, b in zip(s.times, s.times[1:]))


# -- availability ---------------------------------------------------------------------------------


def test_availability_examples():
    assert availability(1e9, 1e9) == 1.0
    assert availability(0.1e9 / 2.1, 0.1e9) == pytest.approx(0.476, abs=5e-4)
    assert availability(0.0, 0.0) is None
    assert availability(0.0, 1.0) == 0.0


def test_window_mean():
    s = series("availability", "fraction", [(0, 1.0), (10, 0.5), (20, 0.0), (30, 1.0)])
    assert window_availability(s, 5, 25) == pytest.approx(0.25)
    assert window_availability(s, 100, 200) is None


# -- summary --------------------------------------------------------------------------------------


def test_empty_summary():
    r = summarize({})
    assert r.peak_attack_ingress == 0.0
    assert r.mean_availability == 1.0
    assert r.peak_infected == 0.0
    assert r.dns_load_multiplier == 1.0


def test_summary_reads_series():
    recorded = {
        "attack_ingress": series("attack_ingress", "bits/s", [(0, 0), (60, 5e9), (120, 2e9)]),
        "availability": series("availability", "fraction", [(0, 1.0), (60, 0.5), (120, 0.9)]),
        "infected": series("infected", "devices", [(0, 10), (60, 40), (120, 30)]),
        "infections_total": series("infections_total", "devices", [(0, 0), (3600, 100), (7200, 400)]),
        "dns_load_multiplier.example": series("dns_load_multiplier.example", "ratio", [(0, 1.0), (60, 12.0)]),
    }
    r = summarize(recorded, {"incident": "test"})
    assert r.peak_attack_ingress == 5e9
    assert r.mean_availability == pytest.approx(0.8)
    assert (r.peak_infected, r.time_to_peak_infection) == (40.0, 60.0)
    assert r.dns_load_multiplier == 12.0
    assert r.peak_infection_rate_per_hour == pytest.approx(300.0)
    assert r.annotations == {"incident": "test"}
    # a pure function of the series
    assert summarize(recorded, {"incident": "test"}) == r


# -- export ----------------------------------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    s = series("attack_ingress", "bits/s", [(0, 0.1), (1.5, 623e9)])
    paths = export({"attack_ingress": s}, summarize({"attack_ingress": s}), tmp_path)
    csv_path = tmp_path / "attack_ingress.csv"
    assert csv_path in paths
    assert csv_path.read_text().splitlines()[0] == "t_seconds,value,units"
    back = read_csv(csv_path)
    assert back.samples == s.samples and back.units == "bits/s"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["peak_attack_ingress"] == 623e9


def test_structured_export(tmp_path):
    s = series("infected", "devices", [(0, 1), (1, 2)])
    export({"infected": s}, summarize({"infected": s}), tmp_path, fmt="structured")
    doc = json.loads((tmp_path / "series.json").read_text())
    assert doc["infected"]["values"] == [1.0, 2.0]
    with pytest.raises(ValueError):
        export({}, summarize({}), tmp_path, fmt="xml")


def test_bad_csv_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("time,value\n0,1\n")
    with pytest.raises(SeriesError):
        read_csv(p)


# -- over a preset run ---------------------------------------------------------------------------------


def test_growth_preset_infected_count_never_drops(preset_runs):
    run = preset_runs("mirai-growth")
    inf = run.series["infected"]
    assert inf.times[1] - inf.times[0] == 60.0
    assert np.all(np.diff(inf.values) >= 0)
    assert run.report.peak_infected == pytest.approx(483_000, rel=0.05)
