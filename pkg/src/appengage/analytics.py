"""Descriptive dwell-time statistics: demographic effects, dispersion, transitions, periodicity."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import AGE_BANDS, DEVICE_TYPES, GENDERS, DwellRecord, Taxonomy, UserProfile
from .sessionizer import QuantileTable, label_engagement

LOW_SUPPORT = 30
MAX_INTERVAL_HOURS = 168

Records = Mapping[str, Sequence[DwellRecord]]


def _flat(records: Records) -> list[DwellRecord]:
    return [r for u in sorted(records) for r in records[u]]


@dataclass
class EffectEntry:
    effect: float
    favored: str
    sample_sizes: dict[str, int]
    low_support: bool
    per_group: dict[str, float] = field(default_factory=dict)


@dataclass
class EffectReport:
    kind: str
    entries: dict[str, EffectEntry]
    skipped: list[str]

    def top(self, n: int = 5, favored: str | None = None) -> list[tuple[str, EffectEntry]]:
        items = [(c, e) for c, e in self.entries.items() if favored is None or e.favored == favored]
        return sorted(items, key=lambda kv: (-kv[1].effect, kv[0]))[:n]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "skipped": list(self.skipped),
            "entries": {
                c: {
                    "effect": e.effect, "favored": e.favored, "sample_sizes": e.sample_sizes,
                    "low_support": e.low_support, "per_group": e.per_group,
                }
                for c, e in sorted(self.entries.items())
            },
        }


def _group_means(records: Records, profiles: Mapping[str, UserProfile], attr: str):
    sums: dict[tuple[str, str], float] = {}
    counts: dict[tuple[str, str], int] = {}
    for r in _flat(records):
        key = (r.category.name, getattr(profiles[r.user_id], attr))
        sums[key] = sums.get(key, 0.0) + r.dwell_seconds
        counts[key] = counts.get(key, 0) + 1
    return sums, counts


def _pairwise_effect(records, profiles, attr, groups, kind) -> EffectReport:
    sums, counts = _group_means(records, profiles, attr)
    entries, skipped = {}, []
    for cat in sorted({c for c, _ in counts}):
        n = {g: counts.get((cat, g), 0) for g in groups}
        if min(n.values()) == 0:
            skipped.append(cat)
            continue
        means = {g: sums[(cat, g)] / n[g] for g in groups}
        a, b = groups
        if means[a] >= means[b]:
            hi, lo = a, b
        else:
            hi, lo = b, a
        effect = means[hi] / means[lo] if means[lo] > 0 else math.inf
        entries[cat] = EffectEntry(effect, hi, n, min(n.values()) < LOW_SUPPORT, means)
    return EffectReport(kind, entries, skipped)


def gender_effect(records: Records, profiles: Mapping[str, UserProfile]) -> EffectReport:
    """Ratio of mean dwell between genders, longer-dwell group in the numerator."""
    return _pairwise_effect(records, profiles, "gender", GENDERS, "gender")


def device_effect(records: Records, profiles: Mapping[str, UserProfile]) -> EffectReport:
    return _pairwise_effect(records, profiles, "device_type", DEVICE_TYPES, "device")


def age_effect(records: Records, profiles: Mapping[str, UserProfile]) -> EffectReport:
    """Per band, mean dwell of the band over the mean dwell of all users of the category.

    ``effect``/``favored`` hold the maximum over bands; ``per_group`` holds every band.
    """
    sums, counts = _group_means(records, profiles, "age_band")
    entries, skipped = {}, []
    for cat in sorted({c for c, _ in counts}):
        n = {b: counts.get((cat, b), 0) for b in AGE_BANDS if counts.get((cat, b), 0)}
        total_n = sum(n.values())
        overall = sum(sums[(cat, b)] for b in n) / total_n
        if overall <= 0:
            skipped.append(cat)
            continue
        per_band = {b: (sums[(cat, b)] / n[b]) / overall for b in n}
        best = max(per_band, key=lambda b: (per_band[b], -AGE_BANDS.index(b)))
        entries[cat] = EffectEntry(per_band[best], best, n, n[best] < LOW_SUPPORT, per_band)
    return EffectReport("age", entries, skipped)


@dataclass
class DispersionReport:
    per_category: dict[str, float]
    coverage: dict[str, int]
    hourly_means: dict[str, dict[int, float]]
    global_index: float
    unit: str

    @property
    def partial(self) -> list[str]:
        return sorted(c for c, n in self.coverage.items() if n < 24)

    def to_dict(self) -> dict:
        return {
            "unit": self.unit,
            "global": self.global_index,
            "per_category": dict(sorted(self.per_category.items())),
            "coverage": dict(sorted(self.coverage.items())),
            "partial": self.partial,
        }


def _index_of_dispersion(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=float)
    mu = arr.mean()
    if mu == 0:
        return 0.0
    return float(arr.var() / mu)


def dispersion_index(records: Records, unit: str = "minutes") -> DispersionReport:
    """Variance-to-mean ratio of the hourly mean dwell per category and overall.

    Hours with no records are left out and the coverage count is reported.
    """
    scale = {"seconds": 1.0, "minutes": 60.0, "hours": 3600.0}[unit]
    by_cat: dict[str, dict[int, list[float]]] = {}
    overall: dict[int, list[float]] = {}
    for r in _flat(records):
        v = r.dwell_seconds / scale
        by_cat.setdefault(r.category.name, {}).setdefault(r.hour_of_day, []).append(v)
        overall.setdefault(r.hour_of_day, []).append(v)
    per_cat, coverage, hourly = {}, {}, {}
    for cat, hours in sorted(by_cat.items()):
        means = {h: float(np.mean(v)) for h, v in sorted(hours.items())}
        hourly[cat] = means
        coverage[cat] = len(means)
        per_cat[cat] = _index_of_dispersion(list(means.values()))
    g = [float(np.mean(v)) for _, v in sorted(overall.items())]
    return DispersionReport(per_cat, coverage, hourly, _index_of_dispersion(g) if g else 0.0, unit)


@dataclass
class TransitionMatrix:
    """Row-stochastic transition probabilities; empty rows stay zero and are flagged."""

    row_keys: list
    col_keys: list
    counts: np.ndarray
    probs: np.ndarray = field(init=False)
    empty_rows: np.ndarray = field(init=False)

    def __post_init__(self):
        mass = self.counts.sum(axis=-1, keepdims=True)
        self.empty_rows = mass[..., 0] == 0
        with np.errstate(invalid="ignore", divide="ignore"):
            self.probs = np.where(mass > 0, self.counts / np.where(mass > 0, mass, 1), 0.0)


@dataclass
class LastAppReport:
    matrix: TransitionMatrix
    sigma_ij: np.ndarray
    sigma_j: dict[str, float]

    def summary(self) -> dict:
        vals = np.array(list(self.sigma_j.values()), dtype=float)
        if vals.size == 0:
            return {"min": None, "median": None, "max": None}
        return {"min": float(vals.min()), "median": float(np.median(vals)), "max": float(vals.max())}


def _levels(records: Records, table: QuantileTable) -> dict[str, list[int]]:
    return {u: [int(label_engagement(r, table)) for r in records[u]] for u in sorted(records)}


def last_app_transitions(records: Records, table: QuantileTable, taxonomy: Taxonomy) -> LastAppReport:
    """P(level of next | last category i, next category j) over session-adjacent pairs.

    sigma_ij is the population standard deviation of that 3-vector; sigma_j
    averages sigma_ij over the last categories observed before j.
    """
    c = len(taxonomy)
    counts = np.zeros((c, c, 3))
    levels = _levels(records, table)
    for u in sorted(records):
        recs = records[u]
        for k in range(1, len(recs)):
            prev, nxt = recs[k - 1], recs[k]
            if prev.session_index == nxt.session_index:
                counts[prev.category.id, nxt.category.id, levels[u][k]] += 1
    matrix = TransitionMatrix(list(taxonomy.names), ["light", "medium", "intensive"], counts)
    sigma = np.where(matrix.empty_rows, np.nan, matrix.probs.std(axis=-1))
    sigma_j = {}
    for j in range(c):
        col = sigma[:, j]
        col = col[~np.isnan(col)]
        if col.size:
            sigma_j[taxonomy.names[j]] = float(col.mean())
    return LastAppReport(matrix, sigma, sigma_j)


def level_transitions_same_app(records: Records, table: QuantileTable, taxonomy: Taxonomy) -> dict[str, TransitionMatrix]:
    """3x3 level transition matrix between consecutive uses of one category by one user."""
    c = len(taxonomy)
    counts = np.zeros((c, 3, 3))
    levels = _levels(records, table)
    for u in sorted(records):
        last: dict[int, int] = {}
        for r, lvl in zip(records[u], levels[u]):
            cid = r.category.id
            if cid in last:
                counts[cid, last[cid], lvl] += 1
            last[cid] = lvl
    names = ["light", "medium", "intensive"]
    return {taxonomy.names[i]: TransitionMatrix(names, names, counts[i]) for i in range(c)}


def interval_bucket(seconds: float) -> int:
    """Hours between accesses, rounded half up and capped at one week."""
    return min(int(math.floor(seconds / 3600.0 + 0.5)), MAX_INTERVAL_HOURS)


def interval_histograms(records: Records, table: QuantileTable, taxonomy: Taxonomy) -> dict[str, np.ndarray]:
    """Counts per (re-access interval bucket, level of the re-access) per category.

    The interval runs from the end of one use of an app to the start of the
    next use of the same app by the same user.
    """
    hist = {name: np.zeros((MAX_INTERVAL_HOURS + 1, 3), dtype=np.int64) for name in taxonomy.names}
    levels = _levels(records, table)
    for u in sorted(records):
        last_end: dict[str, float] = {}
        for r, lvl in zip(records[u], levels[u]):
            if r.app_id in last_end:
                hist[r.category.name][interval_bucket(r.start - last_end[r.app_id]), lvl] += 1
            last_end[r.app_id] = r.end
    return hist


def histogram_peak(hist: np.ndarray, min_bucket: int = 0) -> int:
    totals = hist.sum(axis=1)
    return int(min_bucket + np.argmax(totals[min_bucket:]))


def analytics_bundle(records: Records, profiles: Mapping[str, UserProfile], table: QuantileTable, taxonomy: Taxonomy) -> dict:
    last_app = last_app_transitions(records, table, taxonomy)
    levels = level_transitions_same_app(records, table, taxonomy)
    hists = interval_histograms(records, table, taxonomy)
    return {
        "gender_effect": gender_effect(records, profiles).to_dict(),
        "age_effect": age_effect(records, profiles).to_dict(),
        "device_effect": device_effect(records, profiles).to_dict(),
        "dispersion": dispersion_index(records).to_dict(),
        "last_app_sigma": {"sigma_j": dict(sorted(last_app.sigma_j.items())), "summary": last_app.summary()},
        "level_transitions": {
            cat: {"probs": m.probs.tolist(), "empty_rows": m.empty_rows.tolist(), "n": int(m.counts.sum())}
            for cat, m in levels.items() if m.counts.sum() > 0
        },
        "interval_peaks": {
            cat: histogram_peak(h) for cat, h in hists.items() if h.sum() > 0
        },
        "_histograms": hists,
    }


def write_analytics(bundle: dict, outdir: str | Path) -> list[Path]:
    """Write ``analytics.json`` plus one CSV per report; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    doc = {k: v for k, v in bundle.items() if not k.startswith("_")}
    p = outdir / "analytics.json"
    p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    written.append(p)

    for kind in ("gender_effect", "age_effect", "device_effect"):
        p = outdir / f"{kind}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["category", "effect", "favored", "low_support", "sample_sizes"])
            for cat, e in doc[kind]["entries"].items():
                sizes = ";".join(f"{g}={n}" for g, n in sorted(e["sample_sizes"].items()))
                w.writerow([cat, repr(e["effect"]), e["favored"], int(e["low_support"]), sizes])
        written.append(p)

    p = outdir / "dispersion.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", "index_of_dispersion", "hours_covered"])
        w.writerow(["__all__", repr(doc["dispersion"]["global"]), 24])
        for cat, d in doc["dispersion"]["per_category"].items():
            w.writerow([cat, repr(d), doc["dispersion"]["coverage"][cat]])
    written.append(p)

    p = outdir / "last_app_sigma.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["next_category", "sigma_j"])
        for cat, s in doc["last_app_sigma"]["sigma_j"].items():
            w.writerow([cat, repr(s)])
    written.append(p)

    p = outdir / "level_transitions.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", "last_level", "next_level", "probability"])
        for cat, m in doc["level_transitions"].items():
            for i, row in enumerate(m["probs"]):
                if m["empty_rows"][i]:
                    continue
                for j, v in enumerate(row):
                    w.writerow([cat, i, j, repr(v)])
    written.append(p)

    p = outdir / "interval_histograms.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", "interval_hours", "light", "medium", "intensive"])
        for cat, h in sorted(bundle["_histograms"].items()):
            for b in np.flatnonzero(h.sum(axis=1)):
                w.writerow([cat, int(b), *(int(x) for x in h[b])])
    written.append(p)
    return written
