"""Sessionization, dwell aggregation and per-category engagement levels."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (
    SESSION_GAP_SECONDS,
    DomainError,
    DwellRecord,
    EngagementLevel,
    Session,
    Taxonomy,
    UsageEvent,
    local_time_fields,
)
from .ingest import Corpus

QUANTILE_TABLE_VERSION = 1
LEVEL_PROBS = (0.33, 0.67)


def sessionize(events: Sequence[UsageEvent], gap_seconds: float = SESSION_GAP_SECONDS) -> list[Session]:
    """Split one user's time-sorted events wherever the idle gap exceeds ``gap_seconds``.

    The gap runs from the end of an event (start + duration) to the start of
    the next one; a gap of exactly ``gap_seconds`` keeps the session open.
    """
    sessions: list[Session] = []
    if not events:
        return sessions
    current = [events[0]]
    for prev, nxt in zip(events, events[1:]):
        if nxt.timestamp < prev.timestamp:
            raise DomainError(
                f"events out of order for user {nxt.user_id!r}: {nxt.timestamp} < {prev.timestamp}"
            )
        if nxt.user_id != prev.user_id:
            raise DomainError("sessionize expects the events of a single user")
        if nxt.timestamp - prev.end > gap_seconds:
            sessions.append(Session(current[0].user_id, tuple(current)))
            current = []
        current.append(nxt)
    sessions.append(Session(current[0].user_id, tuple(current)))
    return sessions


def aggregate_dwell(session: Session, session_index: int = 0, tz_offset_minutes: int = 0) -> list[DwellRecord]:
    """Collapse maximal runs of the same app into single dwell records."""
    records = []
    run: list[UsageEvent] = []

    def flush():
        first, last = run[0], run[-1]
        hour, weekday = local_time_fields(first.timestamp, tz_offset_minutes)
        records.append(DwellRecord(
            user_id=first.user_id,
            app_id=first.app_id,
            category=first.category,
            session_index=session_index,
            start=first.timestamp,
            dwell_seconds=float(sum(e.duration_seconds for e in run)),
            hour_of_day=hour,
            day_of_week=weekday,
            end=float(last.end),
        ))

    for event in session.events:
        if run and event.app_id != run[-1].app_id:
            flush()
            run = []
        run.append(event)
    flush()
    return records


def build_dwell_records(
    corpus: Corpus,
    gap_seconds: float = SESSION_GAP_SECONDS,
    tz_offset_minutes: int = 0,
) -> dict[str, tuple[DwellRecord, ...]]:
    out = {}
    for user in corpus.users:
        recs: list[DwellRecord] = []
        for i, session in enumerate(sessionize(corpus.events[user], gap_seconds)):
            recs.extend(aggregate_dwell(session, i, tz_offset_minutes))
        out[user] = tuple(recs)
    return out


def empirical_quantile(values: Sequence[float], p: float) -> float:
    """Quantile by linear interpolation between order statistics at (n-1)p."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise DomainError("quantile of an empty sample")
    h = (x.size - 1) * p
    lo = int(np.floor(h))
    hi = min(lo + 1, x.size - 1)
    return float(x[lo] + (h - lo) * (x[hi] - x[lo]))


@dataclass(frozen=True)
class QuantileTable:
    """Per-category (q33, q67) dwell thresholds plus an all-category fallback."""

    taxonomy_names: tuple[str, ...]
    thresholds: Mapping[int, tuple[float, float]]
    fitted_on: Mapping[int, int]
    global_thresholds: tuple[float, float]
    global_n: int

    def __post_init__(self):
        for cid, (q33, q67) in self.thresholds.items():
            if q33 > q67:
                raise DomainError(f"q33 > q67 for category id {cid}")

    def lookup(self, category) -> tuple[float, float]:
        if not (0 <= category.id < len(self.taxonomy_names)) or \
                self.taxonomy_names[category.id] != category.name:
            raise DomainError(f"category {category.name!r} does not belong to this table's taxonomy")
        return self.thresholds.get(category.id, self.global_thresholds)

    def to_json(self) -> str:
        doc = {
            "version": QUANTILE_TABLE_VERSION,
            "categories": [
                {"name": self.taxonomy_names[cid], "q33": q[0], "q67": q[1], "n": self.fitted_on[cid]}
                for cid, q in sorted(self.thresholds.items())
            ],
            "global": {"q33": self.global_thresholds[0], "q67": self.global_thresholds[1], "n": self.global_n},
            "taxonomy": list(self.taxonomy_names),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "QuantileTable":
        doc = json.loads(text)
        if doc.get("version") != QUANTILE_TABLE_VERSION:
            raise DomainError(f"unsupported quantile table version {doc.get('version')!r}")
        names = tuple(doc["taxonomy"])
        index = {n: i for i, n in enumerate(names)}
        thresholds, fitted = {}, {}
        for row in doc["categories"]:
            cid = index[row["name"]]
            thresholds[cid] = (float(row["q33"]), float(row["q67"]))
            fitted[cid] = int(row["n"])
        g = doc["global"]
        return cls(names, thresholds, fitted, (float(g["q33"]), float(g["q67"])), int(g["n"]))


def fit_quantiles(train_records: Iterable[DwellRecord], taxonomy: Taxonomy) -> QuantileTable:
    by_cat: dict[int, list[float]] = {}
    for r in train_records:
        by_cat.setdefault(r.category.id, []).append(r.dwell_seconds)
    if not by_cat:
        raise DomainError("cannot fit quantiles without records")
    thresholds, fitted = {}, {}
    for cid in sorted(by_cat):
        vals = by_cat[cid]
        thresholds[cid] = (empirical_quantile(vals, LEVEL_PROBS[0]), empirical_quantile(vals, LEVEL_PROBS[1]))
        fitted[cid] = len(vals)
    everything = [v for vals in by_cat.values() for v in vals]
    global_q = (empirical_quantile(everything, LEVEL_PROBS[0]), empirical_quantile(everything, LEVEL_PROBS[1]))
    return QuantileTable(taxonomy.names, thresholds, fitted, global_q, len(everything))


def level_for(dwell: float, q33: float, q67: float) -> EngagementLevel:
    if dwell <= q33:
        return EngagementLevel.LIGHT
    if dwell <= q67:
        return EngagementLevel.MEDIUM
    return EngagementLevel.INTENSIVE


def label_engagement(record: DwellRecord, table: QuantileTable) -> EngagementLevel:
    q33, q67 = table.lookup(record.category)
    return level_for(record.dwell_seconds, q33, q67)
