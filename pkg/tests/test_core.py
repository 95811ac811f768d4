import datetime as dt

import pytest
from hypothesis import given
from hypothesis import strategies as st

from appengage.core import (
    AGE_BANDS,
    DEVICE_TYPES,
    GENDERS,
    OSES,
    DomainError,
    DwellRecord,
    EngagementLevel,
    Taxonomy,
    UsageEvent,
    UserProfile,
    default_taxonomy,
    local_time_fields,
    register_taxonomy,
)


def test_single_category_registry():
    tax = register_taxonomy(["weather"])
    assert tax.id_of("weather") == 0
    assert tax.by_id(0).name == "weather"


def test_default_taxonomy_has_45_dense_ids():
    tax = default_taxonomy()
    assert len(tax) == 45
    assert [c.id for c in tax] == list(range(45))
    assert len(set(tax.names)) == 45


def test_duplicate_and_empty_names_rejected():
    with pytest.raises(DomainError):
        register_taxonomy(["a", "a"])
    with pytest.raises(DomainError):
        register_taxonomy([])


def test_unknown_category_lookup_fails():
    with pytest.raises(DomainError):
        register_taxonomy(["a"]).by_name("b")


def test_local_time_fields_examples():
    assert local_time_fields(0, 0) == (0, 3)
    assert local_time_fields(3600, 0)[0] == 1
    assert local_time_fields(0, -60) == (23, 2)


@given(st.integers(0, 4_000_000_000), st.integers(-720, 840))
def test_local_time_matches_datetime(ts, offset):
    local = dt.datetime.fromtimestamp(ts, dt.timezone(dt.timedelta(minutes=offset)))
    assert local_time_fields(ts, offset) == (local.hour, local.weekday())


def test_offset_out_of_range():
    with pytest.raises(DomainError):
        local_time_fields(0, 900)


def test_profile_enums_validated():
    with pytest.raises(DomainError):
        UserProfile("u", "18-24", "other", "phone", "ios")


def test_negative_duration_rejected():
    with pytest.raises(DomainError):
        UsageEvent("u", 0, "a", register_taxonomy(["x"]).by_id(0), -1.0)


def test_levels_are_three():
    assert [lv.value for lv in EngagementLevel] == [0, 1, 2]


profiles = st.builds(UserProfile, st.text(min_size=1, max_size=5), st.sampled_from(AGE_BANDS),
                     st.sampled_from(GENDERS), st.sampled_from(DEVICE_TYPES), st.sampled_from(OSES))


@given(profiles)
def test_profile_round_trip(p):
    assert UserProfile.from_dict(p.to_dict()) == p


@given(st.integers(0, 2**31), st.floats(0, 1e5, allow_nan=False), st.integers(0, 44))
def test_event_round_trip(ts, dur, cid):
    tax = default_taxonomy()
    e = UsageEvent("u", ts, "app", tax.by_id(cid), dur)
    assert UsageEvent.from_dict(e.to_dict(), tax) == e


@given(st.integers(0, 2**31), st.floats(0.001, 1e5, allow_nan=False), st.integers(0, 5))
def test_dwell_record_round_trip(ts, dwell, cid):
    tax = default_taxonomy()
    h, d = local_time_fields(ts)
    r = DwellRecord("u", "app", tax.by_id(cid), 2, ts, dwell, h, d, ts + dwell)
    assert DwellRecord.from_dict(r.to_dict(), tax) == r


def test_taxonomy_equality_by_names():
    assert Taxonomy(["a", "b"]) == Taxonomy(["a", "b"])
    assert Taxonomy(["a", "b"]) != Taxonomy(["b", "a"])
