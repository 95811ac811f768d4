import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from appengage.core import DomainError, DwellRecord, EngagementLevel, Session, Taxonomy, UsageEvent
from appengage.sessionizer import (
    QuantileTable,
    aggregate_dwell,
    empirical_quantile,
    fit_quantiles,
    label_engagement,
    level_for,
    sessionize,
)

from conftest import make_events
from oracles import dwell_bruteforce, sessions_bruteforce, type7_quantile

TAX = Taxonomy(["weather", "games", "news"])


def rec(cat, dwell, start=0, user="u", app="a"):
    return DwellRecord(user, app, TAX.by_name(cat), 0, start, float(dwell), 0, 0, start + dwell)


def test_gap_of_300_is_inclusive():
    evs = make_events(TAX, [(0, "a", "news", 60), (360, "b", "news", 1)])
    assert len(sessionize(evs)) == 1


def test_gap_of_301_splits():
    evs = make_events(TAX, [(0, "a", "news", 60), (361, "b", "news", 1)])
    assert len(sessionize(evs)) == 2


def test_unsorted_input_rejected():
    evs = make_events(TAX, [(10, "a", "news", 1), (5, "b", "news", 1)])
    with pytest.raises(DomainError):
        sessionize(evs)


def test_empty_stream():
    assert sessionize([]) == []


def _session(spec):
    return Session("u1", tuple(make_events(TAX, spec)))


def test_consecutive_merge():
    recs = aggregate_dwell(_session([(0, "A", "news", 30), (30, "A", "news", 40), (70, "B", "news", 10)]))
    assert [(r.app_id, r.dwell_seconds) for r in recs] == [("A", 70.0), ("B", 10.0)]


def test_single_event_identity():
    recs = aggregate_dwell(_session([(0, "A", "news", 30)]))
    assert [(r.app_id, r.dwell_seconds) for r in recs] == [("A", 30.0)]


def test_runs_broken_by_other_app():
    recs = aggregate_dwell(_session([(0, "A", "news", 5), (5, "B", "news", 5), (10, "A", "news", 5)]))
    assert [r.app_id for r in recs] == ["A", "B", "A"]


streams = st.lists(
    st.tuples(st.integers(0, 700), st.sampled_from("ABC"), st.floats(0, 400, allow_nan=False)),
    min_size=1, max_size=200,
)


def _stream(spec):
    t, out = 0, []
    for dt, app, dur in spec:
        t += dt
        out.append(UsageEvent("u1", t, app, TAX.by_name("news"), dur))
    return out


@given(streams)
def test_sessionize_matches_bruteforce(spec):
    evs = _stream(spec)
    got = [[evs.index(e) for e in s.events] for s in sessionize(evs)]
    # index() is ambiguous for duplicates, so compare sizes and the flattening instead
    sizes = [len(s.events) for s in sessionize(evs)]
    assert sizes == [len(ix) for ix in sessions_bruteforce(evs)]
    assert [e for s in sessionize(evs) for e in s.events] == evs
    assert len(got) == len(sizes)


@given(streams)
def test_dwell_matches_bruteforce(spec):
    evs = _stream(spec)
    recs = [r for i, s in enumerate(sessionize(evs)) for r in aggregate_dwell(s, i)]
    assert [(r.session_index, r.app_id, r.start, r.dwell_seconds) for r in recs] == dwell_bruteforce(evs)


@given(streams)
def test_session_invariants(spec):
    evs = _stream(spec)
    sessions = sessionize(evs)
    for s in sessions:
        for a, b in zip(s.events, s.events[1:]):
            assert b.timestamp - a.end <= 300
    for a, b in zip(sessions, sessions[1:]):
        assert b.events[0].timestamp - a.events[-1].end > 300
    flat = [e for s in sessions for e in s.events]
    assert [len(s.events) for s in sessionize(flat)] == [len(s.events) for s in sessions]
    for s in sessions:
        recs = aggregate_dwell(s)
        assert all(a.app_id != b.app_id for a, b in zip(recs, recs[1:]))
        assert sum(r.dwell_seconds for r in recs) == pytest.approx(sum(e.duration_seconds for e in s.events))


def _weather_sample():
    # 101 values: order statistic 33 is 6 s and 67 is 23 s, so type-7 quantiles land on them exactly
    vals = [1 + 4 * k / 32 for k in range(33)] + [6] + [6 + 16 * (k + 1) / 34 for k in range(33)] + [23] + \
        [24 + k for k in range(33)]
    return [rec("weather", v) for v in vals]


def test_weather_thresholds():
    table = fit_quantiles(_weather_sample(), TAX)
    q33, q67 = table.lookup(TAX.by_name("weather"))
    assert q33 == pytest.approx(6.0, abs=1e-12) and q67 == pytest.approx(23.0, abs=1e-12)
    assert label_engagement(rec("weather", 10), table) == EngagementLevel.MEDIUM


def test_game_example_intensive():
    assert level_for(5.5 * 60, 1.3 * 60, 5.4 * 60) == EngagementLevel.INTENSIVE


def test_boundaries():
    assert level_for(6.0, 6.0, 23.0) == EngagementLevel.LIGHT
    assert level_for(23.0, 6.0, 23.0) == EngagementLevel.MEDIUM
    assert level_for(23.0001, 6.0, 23.0) == EngagementLevel.INTENSIVE


def test_degenerate_distribution():
    table = fit_quantiles([rec("news", 10) for _ in range(7)], TAX)
    assert table.lookup(TAX.by_name("news")) == (10.0, 10.0)


def test_empty_fit_rejected():
    with pytest.raises(DomainError):
        fit_quantiles([], TAX)


@given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=1000), st.floats(0, 1))
def test_quantile_matches_oracle(vals, p):
    assert empirical_quantile(vals, p) == pytest.approx(type7_quantile(vals, p), abs=1e-9, rel=1e-12)


def test_thousand_durations_against_numpy():
    vals = np.random.default_rng(0).exponential(30, 1000)
    for p in (0.33, 0.67):
        assert empirical_quantile(vals, p) == pytest.approx(type7_quantile(vals, p), abs=1e-9)
        assert empirical_quantile(vals, p) == pytest.approx(np.quantile(vals, p), abs=1e-9)


@given(st.lists(st.floats(0.01, 1e4, allow_nan=False), min_size=1, max_size=50),
       st.floats(0, 1e4), st.floats(0, 1e4))
def test_label_monotone(vals, a, b):
    table = fit_quantiles([rec("news", v) for v in vals], TAX)
    lo, hi = min(a, b), max(a, b)
    assert label_engagement(rec("news", lo), table) <= label_engagement(rec("news", hi), table)


def test_unfitted_category_uses_global_fallback():
    table = fit_quantiles([rec("news", v) for v in (1, 2, 3, 4)], TAX)
    assert table.lookup(TAX.by_name("games")) == table.global_thresholds


def test_foreign_category_rejected():
    table = fit_quantiles([rec("news", 1)], TAX)
    other = Taxonomy(["x", "y", "z", "w"]).by_name("w")
    with pytest.raises(DomainError):
        table.lookup(other)


def test_table_json_round_trip():
    table = fit_quantiles(_weather_sample() + [rec("news", 3)], TAX)
    doc = json.loads(table.to_json())
    assert {"version", "categories"} <= set(doc)
    assert {"name", "q33", "q67", "n"} == set(doc["categories"][0])
    assert QuantileTable.from_json(table.to_json()) == table


def test_fitted_shares_near_a_third():
    vals = np.random.default_rng(1).lognormal(3, 1, 3000)
    table = fit_quantiles([rec("news", v) for v in vals], TAX)
    levels = np.array([int(label_engagement(rec("news", v), table)) for v in vals])
    shares = np.bincount(levels, minlength=3) / levels.size
    assert np.all(np.abs(shares - 1 / 3) < 0.03)
