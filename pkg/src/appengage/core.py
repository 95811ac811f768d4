"""Domain model: taxonomy, profiles, events, sessions, dwell records, levels."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

AGE_BANDS = ("13-17", "18-24", "25-34", "35-54", "55+")
GENDERS = ("male", "female")
DEVICE_TYPES = ("phone", "tablet")
OSES = ("android", "ios")

SESSION_GAP_SECONDS = 300

# Google Play style category names.
DEFAULT_CATEGORIES = (
    "social", "communication", "business", "productivity", "tools",
    "entertainment", "utilities", "sports", "music", "lifestyle",
    "arcade", "widgets", "medical", "casino", "video",
    "health-and-fitness", "finance", "navigation", "shopping", "photography",
    "news", "comics", "adventure", "strategy", "racing",
    "family", "transportation", "weather", "food-and-drink", "books",
    "board", "travel", "personalization", "word", "puzzle",
    "action", "card", "education", "simulation", "role-playing",
    "trivia", "casual", "dating", "events", "art-and-design",
)


class DomainError(ValueError):
    """Raised when a value violates a domain invariant."""


class EngagementLevel(IntEnum):
    LIGHT = 0
    MEDIUM = 1
    INTENSIVE = 2


@dataclass(frozen=True)
class AppCategory:
    id: int
    name: str


class Taxonomy:
    """Registry of app categories with dense ids in registration order."""

    def __init__(self, names: Sequence[str]):
        names = tuple(names)
        if not names:
            raise DomainError("taxonomy needs at least one category")
        seen: dict[str, AppCategory] = {}
        for i, name in enumerate(names):
            if not isinstance(name, str) or not name:
                raise DomainError(f"category name at position {i} is empty")
            if name in seen:
                raise DomainError(f"duplicate category name {name!r}")
            seen[name] = AppCategory(i, name)
        self._by_name = seen
        self._by_id = tuple(seen.values())

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self):
        return iter(self._by_id)

    def __contains__(self, name: object) -> bool:
        return name in self._by_name

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Taxonomy) and self.names == other.names

    def __hash__(self) -> int:
        return hash(self.names)

    def __repr__(self) -> str:
        return f"Taxonomy({len(self)} categories)"

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self._by_id)

    def by_name(self, name: str) -> AppCategory:
        try:
            return self._by_name[name]
        except KeyError:
            raise DomainError(f"unknown category {name!r}") from None

    def by_id(self, cid: int) -> AppCategory:
        if not 0 <= cid < len(self._by_id):
            raise DomainError(f"category id {cid} out of range")
        return self._by_id[cid]

    def id_of(self, name: str) -> int:
        return self.by_name(name).id


def register_taxonomy(names: Sequence[str]) -> Taxonomy:
    return Taxonomy(names)


def default_taxonomy() -> Taxonomy:
    return Taxonomy(DEFAULT_CATEGORIES)


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    age_band: str
    gender: str
    device_type: str
    os: str

    def __post_init__(self):
        for value, allowed, label in (
            (self.age_band, AGE_BANDS, "age_band"),
            (self.gender, GENDERS, "gender"),
            (self.device_type, DEVICE_TYPES, "device_type"),
            (self.os, OSES, "os"),
        ):
            if value not in allowed:
                raise DomainError(f"{label} {value!r} not one of {allowed}")

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "age_band": self.age_band,
            "gender": self.gender,
            "device_type": self.device_type,
            "os": self.os,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UserProfile":
        return cls(d["user_id"], d["age_band"], d["gender"], d["device_type"], d["os"])


@dataclass(frozen=True)
class UsageEvent:
    user_id: str
    timestamp: int
    app_id: str
    category: AppCategory
    duration_seconds: float

    def __post_init__(self):
        if not self.duration_seconds >= 0:
            raise DomainError(f"negative duration {self.duration_seconds!r}")

    @property
    def end(self) -> float:
        return self.timestamp + self.duration_seconds

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "timestamp": self.timestamp,
            "app_id": self.app_id,
            "category": self.category.name,
            "duration_seconds": self.duration_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict, taxonomy: Taxonomy) -> "UsageEvent":
        return cls(
            d["user_id"], int(d["timestamp"]), d["app_id"],
            taxonomy.by_name(d["category"]), float(d["duration_seconds"]),
        )


@dataclass(frozen=True)
class Session:
    user_id: str
    events: tuple[UsageEvent, ...]

    def __post_init__(self):
        if not self.events:
            raise DomainError("empty session")

    @property
    def start(self) -> int:
        return self.events[0].timestamp

    @property
    def end(self) -> float:
        return max(e.end for e in self.events)


@dataclass(frozen=True)
class DwellRecord:
    user_id: str
    app_id: str
    category: AppCategory
    session_index: int
    start: int
    dwell_seconds: float
    hour_of_day: int
    day_of_week: int
    end: float

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "app_id": self.app_id,
            "category": self.category.name,
            "session_index": self.session_index,
            "start": self.start,
            "dwell_seconds": self.dwell_seconds,
            "hour_of_day": self.hour_of_day,
            "day_of_week": self.day_of_week,
            "end": self.end,
        }

    @classmethod
    def from_dict(cls, d: dict, taxonomy: Taxonomy) -> "DwellRecord":
        return cls(
            user_id=d["user_id"],
            app_id=d["app_id"],
            category=taxonomy.by_name(d["category"]),
            session_index=int(d["session_index"]),
            start=int(d["start"]),
            dwell_seconds=float(d["dwell_seconds"]),
            hour_of_day=int(d["hour_of_day"]),
            day_of_week=int(d["day_of_week"]),
            end=float(d["end"]),
        )


def local_time_fields(timestamp: float, timezone_offset_minutes: int = 0) -> tuple[int, int]:
    """Return ``(hour_of_day, day_of_week)`` with Monday=0 in local time."""
    if not -720 <= timezone_offset_minutes <= 840:
        raise DomainError(f"timezone offset {timezone_offset_minutes} outside [-720, 840]")
    local = int(timestamp // 1) + timezone_offset_minutes * 60
    days, secs = divmod(local, 86400)
    # 1970-01-01 was a Thursday.
    return secs // 3600, (days + 3) % 7


def category_ids(events: Iterable[UsageEvent]) -> set[int]:
    return {e.category.id for e in events}
