import json

import numpy as np
import pytest

from appengage.analytics import (
    MAX_INTERVAL_HOURS,
    age_effect,
    analytics_bundle,
    device_effect,
    dispersion_index,
    gender_effect,
    histogram_peak,
    interval_bucket,
    interval_histograms,
    last_app_transitions,
    level_transitions_same_app,
    write_analytics,
)
from appengage.core import DwellRecord, Taxonomy, UserProfile, local_time_fields
from appengage.sessionizer import build_dwell_records, fit_quantiles
from appengage.synthgen import effects_config, generate, periodic_config

import oracles
from conftest import as_corpus, tiny_config

TOL = 1e-9


def _small(seed):
    g = generate(tiny_config(seed=seed, n_users=8, pairs=[], mean_session_length=3.5))
    assert len(g.events) <= 500
    corpus = as_corpus(g)
    records = build_dwell_records(corpus)
    table = fit_quantiles([r for u in sorted(records) for r in records[u]], corpus.taxonomy)

    def level_of(r):
        return oracles.level_bruteforce(r.dwell_seconds, *table.lookup(r.category))

    return corpus, records, table, level_of


@pytest.fixture(params=range(5), ids=lambda s: f"seed{s}")
def small(request):
    return _small(request.param)


def _flat(records):
    return [r for u in sorted(records) for r in records[u]]


def test_gender_and_device_effects_match_oracle(small):
    corpus, records, _, _ = small
    for fn, attr, groups in ((gender_effect, "gender", ("female", "male")),
                             (device_effect, "device_type", ("phone", "tablet"))):
        rep = fn(records, corpus.profiles)
        ratios = oracles.mean_ratio_bruteforce(_flat(records), corpus.profiles, attr, *groups)
        assert set(rep.entries) == set(ratios)
        for cat, ratio in ratios.items():
            e = rep.entries[cat]
            assert e.effect == pytest.approx(max(ratio, 1 / ratio), rel=TOL)
            assert e.favored == (groups[0] if ratio >= 1 else groups[1])
            assert e.effect >= 1


def test_age_effect_matches_oracle(small):
    corpus, records, _, _ = small
    rep = age_effect(records, corpus.profiles)
    expected = oracles.age_effect_bruteforce(_flat(records), corpus.profiles)
    assert set(rep.entries) == set(expected)
    for cat, bands in expected.items():
        got = rep.entries[cat].per_group
        assert set(got) == set(bands)
        for b, v in bands.items():
            assert got[b] == pytest.approx(v, rel=TOL)
        assert rep.entries[cat].effect == pytest.approx(max(bands.values()), rel=TOL)


def test_dispersion_matches_oracle(small):
    _, records, _, _ = small
    rep = dispersion_index(records)
    per, overall = oracles.dispersion_bruteforce(_flat(records))
    assert set(rep.per_category) == set(per)
    for cat, d in per.items():
        assert rep.per_category[cat] == pytest.approx(d, rel=TOL, abs=TOL)
    assert rep.global_index == pytest.approx(overall, rel=TOL, abs=TOL)


def test_last_app_transitions_match_oracle(small):
    corpus, records, table, level_of = small
    tax = corpus.taxonomy
    rep = last_app_transitions(records, table, tax)
    counts = oracles.last_app_bruteforce(records, level_of)
    got = {(tax.names[i], tax.names[j]): rep.matrix.counts[i, j].tolist()
           for i in range(len(tax)) for j in range(len(tax)) if rep.matrix.counts[i, j].sum()}
    assert got == {k: [float(x) for x in v] for k, v in counts.items()}
    by_j = {}
    for (i, j), c in counts.items():
        n = sum(c)
        probs = [x / n for x in c]
        assert rep.matrix.probs[tax.id_of(i), tax.id_of(j)].tolist() == pytest.approx(probs, abs=TOL)
        sigma = oracles.population_std(probs)
        assert rep.sigma_ij[tax.id_of(i), tax.id_of(j)] == pytest.approx(sigma, abs=TOL)
        by_j.setdefault(j, []).append(sigma)
    assert set(rep.sigma_j) == set(by_j)
    for j, s in by_j.items():
        assert rep.sigma_j[j] == pytest.approx(sum(s) / len(s), abs=TOL)


def test_level_transitions_match_oracle(small):
    corpus, records, table, level_of = small
    mats = level_transitions_same_app(records, table, corpus.taxonomy)
    expected = oracles.same_category_levels_bruteforce(records, level_of)
    for cat, m in mats.items():
        want = np.array(expected.get(cat, [[0] * 3] * 3), dtype=float)
        assert np.array_equal(m.counts, want)
        for row, p, empty in zip(want, m.probs, m.empty_rows):
            if row.sum():
                assert not empty
                assert p.sum() == pytest.approx(1.0, abs=TOL)
                assert p.tolist() == pytest.approx((row / row.sum()).tolist(), abs=TOL)
            else:
                assert empty and not p.any()


def test_interval_histograms_match_oracle(small):
    corpus, records, table, level_of = small
    hists = interval_histograms(records, table, corpus.taxonomy)
    expected = oracles.interval_bruteforce(records, level_of)
    got = {(cat, int(b), int(lv)): int(h[b, lv]) for cat, h in hists.items() for b, lv in zip(*np.nonzero(h))}
    assert got == expected


def test_interval_bucket_examples():
    assert interval_bucket(1.6 * 3600) == 2
    assert interval_bucket(28 * 60) == 0
    assert interval_bucket(30 * 60) == 1
    assert interval_bucket(10 * 24 * 3600) == MAX_INTERVAL_HOURS


# hand-built corpora for the forced cases -------------------------------------

TAX = Taxonomy(["alpha", "beta", "gamma"])
PROFILES = {
    "f": UserProfile("f", "18-24", "female", "phone", "android"),
    "m": UserProfile("m", "25-34", "male", "tablet", "ios"),
}


def _rec(user, cat, dwell, start, session=0, app=None):
    h, d = local_time_fields(start)
    return DwellRecord(user, app or cat, TAX.by_name(cat), session, start, float(dwell), h, d, start + dwell)


def test_equal_group_means_give_unit_effects():
    records = {u: (_rec(u, "alpha", 40, 0), _rec(u, "alpha", 60, 100)) for u in PROFILES}
    assert gender_effect(records, PROFILES).entries["alpha"].effect == 1.0
    assert device_effect(records, PROFILES).entries["alpha"].effect == 1.0


def test_single_group_category_is_skipped():
    records = {"f": (_rec("f", "beta", 10, 0),), "m": (_rec("m", "alpha", 10, 0),)}
    rep = gender_effect(records, PROFILES)
    assert set(rep.skipped) == {"alpha", "beta"}
    assert rep.entries == {}
    assert rep.to_dict()["skipped"] == ["alpha", "beta"]


def test_low_support_flag():
    records = {u: tuple(_rec(u, "alpha", 10, 100 * k) for k in range(5)) for u in PROFILES}
    assert gender_effect(records, PROFILES).entries["alpha"].low_support


def test_single_band_age_effect_is_one():
    records = {"f": (_rec("f", "alpha", 10, 0), _rec("f", "alpha", 30, 100))}
    e = age_effect(records, PROFILES).entries["alpha"]
    assert e.per_group == {"18-24": 1.0}


def test_constant_hourly_means_give_zero_dispersion():
    records = {"f": tuple(_rec("f", "alpha", 90, 3600 * h) for h in range(24))}
    rep = dispersion_index(records)
    assert rep.per_category["alpha"] == 0.0
    assert rep.coverage["alpha"] == 24 and rep.partial == []


def test_partial_hour_coverage_flagged():
    records = {"f": (_rec("f", "alpha", 60, 0), _rec("f", "alpha", 180, 3600))}
    rep = dispersion_index(records)
    assert rep.coverage["alpha"] == 2 and rep.partial == ["alpha"]
    assert rep.per_category["alpha"] == pytest.approx(0.5)  # minutes 1 and 3: var 1, mean 2


def test_forced_light_transition_row():
    recs = []
    for s in range(10):
        recs += [_rec("f", "alpha", 50, 10_000 * s, s), _rec("f", "beta", 1, 10_000 * s + 60, s)]
    recs += [_rec("f", "beta", 100, 10 ** 6 + k, 99) for k in range(3)]  # lifts beta's thresholds above 1 s
    records = {"f": tuple(recs)}
    table = fit_quantiles(recs, TAX)
    rep = last_app_transitions(records, table, TAX)
    row = rep.matrix.probs[TAX.id_of("alpha"), TAX.id_of("beta")]
    assert row.tolist() == [1.0, 0.0, 0.0]
    assert rep.sigma_ij[TAX.id_of("alpha"), TAX.id_of("beta")] == pytest.approx(np.std([1, 0, 0]))


def test_constant_level_gives_diagonal_matrix():
    recs = tuple(_rec("f", "alpha", 5, 1000 * k, k) for k in range(6))
    table = fit_quantiles(recs, TAX)
    m = level_transitions_same_app({"f": recs}, table, TAX)["alpha"]
    assert m.probs[0].tolist() == [1.0, 0.0, 0.0]
    assert m.empty_rows.tolist() == [False, True, True]
    assert not m.probs[1:].any()


def test_planted_effects_recovered():
    g = generate(effects_config())
    corpus = as_corpus(g)
    records = build_dwell_records(corpus)
    assert 4000 <= sum(len(v) for v in records.values()) <= 7000
    ge = gender_effect(records, corpus.profiles).entries["shopping"]
    assert ge.favored == "female"
    assert ge.effect == pytest.approx(2.0, abs=0.15)
    dte = device_effect(records, corpus.profiles).entries["navigation"]
    assert dte.favored == "phone"
    assert dte.effect == pytest.approx(1.5, abs=0.15)
    assert g.manifest["expected"]["gender_effect"]["shopping"]["favored"] == "female"


def test_planted_daily_period_peaks_at_24():
    g = generate(periodic_config())
    corpus = as_corpus(g)
    records = build_dwell_records(corpus)
    assert 4000 <= sum(len(v) for v in records.values()) <= 7000
    table = fit_quantiles(_flat(records), corpus.taxonomy)
    hist = interval_histograms(records, table, corpus.taxonomy)["shopping"]
    assert histogram_peak(hist) == g.manifest["expected"]["interval_peak_bucket"]["shopping"] == 24


def test_bundle_writes_json_and_csvs(tmp_path):
    corpus, records, table, _ = _small(0)
    bundle = analytics_bundle(records, corpus.profiles, table, corpus.taxonomy)
    paths = write_analytics(bundle, tmp_path)
    doc = json.loads((tmp_path / "analytics.json").read_text())
    assert {"gender_effect", "age_effect", "device_effect", "dispersion", "last_app_sigma",
            "level_transitions", "interval_peaks"} <= set(doc)
    assert all(p.exists() for p in paths)
    again = write_analytics(analytics_bundle(records, corpus.profiles, table, corpus.taxonomy), tmp_path / "b")
    assert [p.read_bytes() for p in paths] == [p.read_bytes() for p in again]
