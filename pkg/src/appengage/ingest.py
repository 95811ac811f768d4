"""Raw log parsing, validation and the engaged-user population filter."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import DomainError, Taxonomy, UsageEvent, UserProfile

log = logging.getLogger(__name__)

COLUMNS = (
    "user_id", "timestamp", "app_id", "category", "duration_seconds",
    "age_band", "gender", "device_type", "os",
)
OPTIONAL_COLUMN = "user_triggered"


class IngestError(DomainError):
    """A log file could not be turned into a corpus."""


@dataclass(frozen=True)
class Corpus:
    taxonomy: Taxonomy
    profiles: Mapping[str, UserProfile]
    events: Mapping[str, tuple[UsageEvent, ...]]
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        for uid in self.events:
            if uid not in self.profiles:
                raise IngestError(f"events for user {uid!r} without a profile")

    @property
    def users(self) -> list[str]:
        return sorted(self.events)

    @property
    def n_events(self) -> int:
        return sum(len(v) for v in self.events.values())

    def counts(self) -> dict[str, int]:
        return {u: len(self.events[u]) for u in self.users}


def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    s = str(raw).strip().lower()
    if s in ("true", "1", "yes"):
        return True
    if s in ("false", "0", "no"):
        return False
    raise ValueError(f"unparseable user_triggered {raw!r}")


def _parse_timestamp(raw) -> int:
    if isinstance(raw, bool):
        raise ValueError(f"unparseable timestamp {raw!r}")
    if isinstance(raw, int):
        return raw
    value = float(raw)
    if not math.isfinite(value) or value != int(value):
        raise ValueError(f"unparseable timestamp {raw!r}")
    return int(value)


def _parse_duration(raw) -> float:
    if isinstance(raw, bool):
        raise ValueError(f"unparseable duration {raw!r}")
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError(f"unparseable duration {raw!r}")
    return value


def _rows_csv(text: str):
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty log file") from None
    if tuple(header[: len(COLUMNS)]) != COLUMNS or len(header) > len(COLUMNS) + 1 or (
        len(header) == len(COLUMNS) + 1 and header[-1] != OPTIONAL_COLUMN
    ):
        missing = [c for c in COLUMNS if c not in header]
        detail = f"missing column(s) {missing}" if missing else "columns out of order"
        raise IngestError(f"bad header {header}: {detail}; expected {list(COLUMNS)}")
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(header):
            yield lineno, None, f"expected {len(header)} fields, got {len(row)}"
        else:
            yield lineno, dict(zip(header, row)), None


def _rows_jsonl(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            yield lineno, None, f"invalid JSON: {exc.msg}"
            continue
        if not isinstance(obj, dict):
            yield lineno, None, "row is not an object"
            continue
        missing = [c for c in COLUMNS if c not in obj]
        if missing:
            raise IngestError(f"row {lineno}: missing column(s) {missing}")
        yield lineno, obj, None


def parse_log(
    path: str | Path,
    format: str = "csv",
    taxonomy: Taxonomy | None = None,
    tolerance: int = 0,
) -> Corpus:
    """Read a usage log into a `Corpus`.

    Malformed rows are counted; more than ``tolerance`` of them is fatal and
    the error names the first offending row. Rows with ``user_triggered``
    false are dropped.
    """
    from .core import default_taxonomy

    taxonomy = taxonomy or default_taxonomy()
    path = Path(path)
    raw = path.read_bytes()
    text = raw.decode("utf-8")
    if format == "csv":
        rows = _rows_csv(text)
    elif format == "jsonl":
        rows = _rows_jsonl(text)
    else:
        raise IngestError(f"unknown format {format!r}")

    profiles: dict[str, UserProfile] = {}
    events: dict[str, list[UsageEvent]] = {}
    errors: list[str] = []
    n_rows = n_background = 0
    for lineno, row, problem in rows:
        n_rows += 1
        if problem is None:
            try:
                if OPTIONAL_COLUMN in row and row[OPTIONAL_COLUMN] not in ("", None):
                    if not _parse_bool(row[OPTIONAL_COLUMN]):
                        n_background += 1
                        continue
                profile = UserProfile(
                    str(row["user_id"]), str(row["age_band"]), str(row["gender"]),
                    str(row["device_type"]), str(row["os"]),
                )
                event = UsageEvent(
                    str(row["user_id"]), _parse_timestamp(row["timestamp"]), str(row["app_id"]),
                    taxonomy.by_name(str(row["category"])), _parse_duration(row["duration_seconds"]),
                )
                known = profiles.setdefault(profile.user_id, profile)
                if known != profile:
                    raise DomainError(f"profile of user {profile.user_id!r} changes between rows")
            except (DomainError, ValueError) as exc:
                problem = str(exc)
        if problem is not None:
            errors.append(f"row {lineno}: {problem}")
            continue
        events.setdefault(event.user_id, []).append(event)

    if len(errors) > tolerance:
        raise IngestError(
            f"{len(errors)} malformed row(s) exceed tolerance {tolerance}; first: {errors[0]}"
        )
    for msg in errors:
        log.warning("skipped %s", msg)

    # Python's sort is stable, so timestamp ties keep input order.
    sorted_events = {
        u: tuple(sorted(evs, key=lambda e: e.timestamp)) for u, evs in sorted(events.items())
    }
    provenance = {
        "source": path.name,
        "sha256": hashlib.sha256(raw).hexdigest(),
        "rows": n_rows,
        "events": sum(len(v) for v in sorted_events.values()),
        "malformed": len(errors),
        "background_dropped": n_background,
        # the window is whatever the file spans; no calendar alignment
        "window_start": min((v[0].timestamp for v in sorted_events.values() if v), default=None),
        "window_end": max((e.end for v in sorted_events.values() for e in v), default=None),
    }
    return Corpus(taxonomy, dict(sorted(profiles.items())), sorted_events, provenance)


def filter_engaged_users(corpus: Corpus, min_categories: int = 5) -> Corpus:
    """Keep users whose events span at least ``min_categories`` categories."""
    if min_categories < 1:
        raise IngestError("min_categories must be >= 1")
    keep = [
        u for u, evs in corpus.events.items()
        if len({e.category.id for e in evs}) >= min_categories
    ]
    provenance = dict(corpus.provenance)
    provenance["filtered_users"] = len(corpus.events) - len(keep)
    return Corpus(
        corpus.taxonomy,
        {u: corpus.profiles[u] for u in keep},
        {u: corpus.events[u] for u in keep},
        provenance,
    )


def format_rows(
    events: Iterable[UsageEvent],
    profiles: Mapping[str, UserProfile],
    user_triggered: Sequence[bool] | None = None,
) -> list[dict]:
    rows = []
    for i, e in enumerate(events):
        p = profiles[e.user_id]
        row = {
            "user_id": e.user_id,
            "timestamp": e.timestamp,
            "app_id": e.app_id,
            "category": e.category.name,
            "duration_seconds": _fmt_float(e.duration_seconds),
            "age_band": p.age_band,
            "gender": p.gender,
            "device_type": p.device_type,
            "os": p.os,
        }
        if user_triggered is not None:
            row[OPTIONAL_COLUMN] = "true" if user_triggered[i] else "false"
        rows.append(row)
    return rows


def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_log(
    path: str | Path,
    events: Iterable[UsageEvent],
    profiles: Mapping[str, UserProfile],
    format: str = "csv",
    user_triggered: Sequence[bool] | None = None,
) -> None:
    rows = format_rows(events, profiles, user_triggered)
    columns = list(COLUMNS) + ([OPTIONAL_COLUMN] if user_triggered is not None else [])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if format == "csv":
            writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
        elif format == "jsonl":
            for row in rows:
                row = dict(row)
                row["duration_seconds"] = float(row["duration_seconds"])
                if OPTIONAL_COLUMN in row:
                    row[OPTIONAL_COLUMN] = row[OPTIONAL_COLUMN] == "true"
                fh.write(json.dumps(row, sort_keys=False) + "\n")
        else:
            raise IngestError(f"unknown format {format!r}")
