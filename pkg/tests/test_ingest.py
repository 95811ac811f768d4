import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from appengage.core import Taxonomy, UserProfile
from appengage.ingest import Corpus, IngestError, filter_engaged_users, parse_log, write_log
from appengage.synthgen import generate, write_corpus

from conftest import make_events, tiny_config

HEADER = "user_id,timestamp,app_id,category,duration_seconds,age_band,gender,device_type,os\n"


def write(tmp_path, body, header=HEADER, name="log.csv"):
    p = tmp_path / name
    p.write_text(header + body, encoding="utf-8")
    return p


def test_three_rows_sorted(tmp_path, small_taxonomy):
    p = write(tmp_path, "u1,30,a,news,5,18-24,male,phone,ios\n"
                        "u1,10,b,weather,3,18-24,male,phone,ios\n"
                        "u1,20,a,news,1,18-24,male,phone,ios\n")
    c = parse_log(p, taxonomy=small_taxonomy)
    assert c.n_events == 3
    assert [e.timestamp for e in c.events["u1"]] == [10, 20, 30]
    assert c.provenance["rows"] == 3
    assert (c.provenance["window_start"], c.provenance["window_end"]) == (10, 35)


def test_ties_keep_input_order(tmp_path, small_taxonomy):
    p = write(tmp_path, "u1,10,b,news,1,18-24,male,phone,ios\n"
                        "u1,10,a,news,1,18-24,male,phone,ios\n")
    assert [e.app_id for e in parse_log(p, taxonomy=small_taxonomy).events["u1"]] == ["b", "a"]


def test_bad_enum_names_row(tmp_path, small_taxonomy):
    p = write(tmp_path, "u1,10,a,news,1,18-24,male,phone,ios\n"
                        "u2,10,a,news,1,18-24,other,phone,ios\n")
    with pytest.raises(IngestError, match="row 3"):
        parse_log(p, taxonomy=small_taxonomy)


def test_tolerance_allows_skips(tmp_path, small_taxonomy):
    p = write(tmp_path, "u1,10,a,news,1,18-24,male,phone,ios\n"
                        "u1,xx,a,news,1,18-24,male,phone,ios\n")
    c = parse_log(p, taxonomy=small_taxonomy, tolerance=1)
    assert c.n_events == 1 and c.provenance["malformed"] == 1


def test_missing_column(tmp_path, small_taxonomy):
    p = write(tmp_path, "u1,10,a,news,1,18-24,male,phone\n",
              header="user_id,timestamp,app_id,category,duration_seconds,age_band,gender,device_type\n")
    with pytest.raises(IngestError, match="missing column"):
        parse_log(p, taxonomy=small_taxonomy)


def test_unparseable_duration(tmp_path, small_taxonomy):
    p = write(tmp_path, "u1,10,a,news,nan,18-24,male,phone,ios\n")
    with pytest.raises(IngestError, match="duration"):
        parse_log(p, taxonomy=small_taxonomy)


def test_background_rows_dropped(tmp_path, small_taxonomy):
    p = write(tmp_path, "u1,10,a,news,1,18-24,male,phone,ios,true\n"
                        "u1,11,a,news,1,18-24,male,phone,ios,false\n",
              header=HEADER.strip() + ",user_triggered\n")
    c = parse_log(p, taxonomy=small_taxonomy)
    assert c.n_events == 1 and c.provenance["background_dropped"] == 1


def test_jsonl(tmp_path, small_taxonomy):
    rows = [dict(user_id="u1", timestamp=5, app_id="a", category="news", duration_seconds=2.5,
                 age_band="55+", gender="male", device_type="tablet", os="android")]
    p = tmp_path / "log.jsonl"
    p.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    c = parse_log(p, "jsonl", small_taxonomy)
    assert c.events["u1"][0].duration_seconds == 2.5


def test_counts_match_generator_manifest(tmp_path):
    g = generate(tiny_config(seed=7, n_users=10, days=5))
    write_corpus(g, tmp_path)
    c = parse_log(tmp_path / "events.csv", taxonomy=g.taxonomy)
    expected = {u: n for u, n in g.manifest["per_user_events"].items() if n}
    assert c.counts() == expected


@pytest.mark.parametrize("background", [0.0, 0.2])
def test_round_trip_with_generator(tmp_path, background):
    g = generate(tiny_config(seed=3, background_rate=background))
    for fmt in ("csv", "jsonl"):
        write_corpus(g, tmp_path / fmt, fmt)
        c = parse_log(tmp_path / fmt / f"events.{fmt}", fmt, g.taxonomy)
        flags = g.user_triggered or [True] * len(g.events)
        kept = [e for e, t in zip(g.events, flags) if t]
        got = sorted((e for u in c.users for e in c.events[u]), key=lambda e: (e.user_id, e.timestamp))
        assert sorted(kept, key=lambda e: (e.user_id, e.timestamp)) == got


def test_filter_removes_four_category_user(small_taxonomy, profile):
    evs = make_events(small_taxonomy, [(i, f"a{i}", c, 1) for i, c in enumerate(["social", "weather", "news", "games"])])
    c = Corpus(small_taxonomy, {"u1": profile}, {"u1": tuple(evs)})
    assert filter_engaged_users(c, 5).users == []
    assert filter_engaged_users(c, 1).events == c.events


corpus_spec = st.dictionaries(
    st.sampled_from(["u1", "u2", "u3", "u4"]),
    st.lists(st.integers(0, 5), min_size=1, max_size=12),
    min_size=1,
)


def _corpus(spec):
    tax = Taxonomy([f"c{i}" for i in range(6)])
    profiles = {u: UserProfile(u, "25-34", "male", "phone", "ios") for u in spec}
    events = {u: tuple(make_events(tax, [(t, f"a{k}", f"c{k}", 1) for t, k in enumerate(cats)], u))
              for u, cats in spec.items()}
    return Corpus(tax, profiles, events)


@given(corpus_spec, st.integers(1, 6))
def test_filter_matches_set_comprehension(spec, k):
    c = _corpus(spec)
    expected = {u for u, cats in spec.items() if len(set(cats)) >= k}
    out = filter_engaged_users(c, k)
    assert set(out.users) == expected
    assert all(out.events[u] == c.events[u] for u in expected)


@given(corpus_spec, st.integers(1, 6))
def test_filter_idempotent(spec, k):
    once = filter_engaged_users(_corpus(spec), k)
    twice = filter_engaged_users(once, k)
    assert once.events == twice.events and once.profiles == twice.profiles


def test_write_then_parse_identity(tmp_path, small_taxonomy, profile):
    evs = make_events(small_taxonomy, [(1, "a", "news", 0.25), (9, "b", "music", 12.0)])
    write_log(tmp_path / "x.csv", evs, {"u1": profile})
    assert list(parse_log(tmp_path / "x.csv", taxonomy=small_taxonomy).events["u1"]) == evs
