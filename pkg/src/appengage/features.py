"""Causal feature construction for category, personal-app and engagement-level models.

Every vector is computed from a `PredictionContext` that has only consumed
records strictly before the prediction target.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (
    AGE_BANDS,
    DEVICE_TYPES,
    GENDERS,
    OSES,
    SESSION_GAP_SECONDS,
    DomainError,
    DwellRecord,
    Taxonomy,
    UserProfile,
    local_time_fields,
)
from .sessionizer import QuantileTable, label_engagement

INTERVAL_CAP_HOURS = 168.0
DAY = 86400.0
HOUR = 3600.0


class SchemaError(DomainError):
    """Feature vectors or models disagree on their schema."""


@dataclass(frozen=True)
class FeatureBlock:
    name: str
    kind: str  # numeric | one-hot | multi-slot-per-category
    width: int


@dataclass(frozen=True)
class FeatureSchema:
    name: str
    blocks: tuple[FeatureBlock, ...]

    @property
    def dimension(self) -> int:
        return sum(b.width for b in self.blocks)

    @property
    def digest(self) -> str:
        payload = json.dumps([self.name, [(b.name, b.kind, b.width) for b in self.blocks]])
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def offsets(self) -> dict[str, slice]:
        out, pos = {}, 0
        for b in self.blocks:
            out[b.name] = slice(pos, pos + b.width)
            pos += b.width
        return out

    def block_of_column(self) -> list[str]:
        return [b.name for b in self.blocks for _ in range(b.width)]

    def numeric_mask(self) -> np.ndarray:
        """True for columns holding counts, durations or intervals rather than indicators."""
        return np.array([b.kind != "one-hot" for b in self.blocks for _ in range(b.width)])


PROFILE_BLOCKS = (
    FeatureBlock("age", "one-hot", len(AGE_BANDS)),
    FeatureBlock("gender", "one-hot", len(GENDERS)),
    FeatureBlock("device_type", "one-hot", len(DEVICE_TYPES)),
)
TOTAL_BLOCKS = (
    FeatureBlock("total_usage_duration", "numeric", 1),
    FeatureBlock("total_usage_frequency", "numeric", 1),
    FeatureBlock("total_unique_apps", "numeric", 1),
)
TIME_BLOCKS = (
    FeatureBlock("hour", "one-hot", 24),
    FeatureBlock("weekday", "one-hot", 7),
)


def generic_schema(n_categories: int) -> FeatureSchema:
    c = n_categories
    return FeatureSchema("generic", (
        *PROFILE_BLOCKS,
        FeatureBlock("os", "one-hot", len(OSES)),
        *TOTAL_BLOCKS,
        *TIME_BLOCKS,
        FeatureBlock("app_preference_last_day", "multi-slot-per-category", c),
        FeatureBlock("app_preference_last_hour", "multi-slot-per-category", c),
        FeatureBlock("app_preference_last_session", "multi-slot-per-category", c),
        FeatureBlock("last_used_category", "one-hot", c + 1),
        FeatureBlock("last_two_categories", "one-hot", 2 * (c + 1)),
        FeatureBlock("periodic", "multi-slot-per-category", c),
        FeatureBlock("historical_app_preference", "multi-slot-per-category", c),
    ))


def engagement_schema(n_categories: int) -> FeatureSchema:
    c = n_categories
    return FeatureSchema("engagement", (
        *PROFILE_BLOCKS,
        *TOTAL_BLOCKS,
        *TIME_BLOCKS,
        FeatureBlock("last_used_category", "one-hot", c + 1),
        FeatureBlock("last_engagement_level", "multi-slot-per-category", c),
        FeatureBlock("last_level_predicted_category", "numeric", 1),
        FeatureBlock("periodic", "multi-slot-per-category", c),
        FeatureBlock("periodic_predicted_category", "numeric", 1),
        FeatureBlock("historical_level_sum", "multi-slot-per-category", c),
        FeatureBlock("historical_level_light", "numeric", 1),
        FeatureBlock("historical_level_medium", "numeric", 1),
        FeatureBlock("historical_level_intensive", "numeric", 1),
    ))


def personal_schema(n_apps: int) -> FeatureSchema:
    return FeatureSchema("personal", (
        *TIME_BLOCKS,
        FeatureBlock("last_app", "one-hot", n_apps + 1),
        FeatureBlock("second_last_app", "one-hot", n_apps + 1),
        FeatureBlock("app_periodic", "multi-slot-per-category", n_apps),
    ))


@dataclass(frozen=True)
class PersonalVocabulary:
    user_id: str
    apps: tuple[str, ...]
    app_categories: tuple[int, ...]

    @property
    def schema(self) -> FeatureSchema:
        return personal_schema(len(self.apps))

    def index(self, app_id: str | None) -> int:
        if app_id is None:
            return len(self.apps)
        try:
            return self.apps.index(app_id)
        except ValueError:
            return len(self.apps)


@dataclass
class FeatureSpace:
    """Feature schemas frozen from the training records."""

    taxonomy: Taxonomy
    generic: FeatureSchema
    engagement: FeatureSchema
    personal: dict[str, PersonalVocabulary]
    gap_seconds: float = SESSION_GAP_SECONDS
    tz_offset_minutes: int = 0

    @property
    def n_categories(self) -> int:
        return len(self.taxonomy)

    def personal_for(self, user_id: str) -> PersonalVocabulary:
        try:
            return self.personal[user_id]
        except KeyError:
            return PersonalVocabulary(user_id, (), ())

    def to_dict(self) -> dict:
        return {
            "categories": list(self.taxonomy.names),
            "generic_digest": self.generic.digest,
            "engagement_digest": self.engagement.digest,
            "personal": {u: {"apps": list(v.apps), "app_categories": list(v.app_categories)}
                         for u, v in sorted(self.personal.items())},
            "gap_seconds": self.gap_seconds,
            "tz_offset_minutes": self.tz_offset_minutes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpace":
        taxonomy = Taxonomy(d["categories"])
        c = len(taxonomy)
        personal = {u: PersonalVocabulary(u, tuple(v["apps"]), tuple(int(x) for x in v["app_categories"]))
                    for u, v in d["personal"].items()}
        space = cls(taxonomy, generic_schema(c), engagement_schema(c), personal,
                    float(d["gap_seconds"]), int(d["tz_offset_minutes"]))
        for name, schema in (("generic", space.generic), ("engagement", space.engagement)):
            if d.get(f"{name}_digest", schema.digest) != schema.digest:
                raise SchemaError(f"stored {name} schema digest does not match this version")
        return space


def fit_feature_space(
    train_records: Mapping[str, Sequence[DwellRecord]],
    taxonomy: Taxonomy,
    gap_seconds: float = SESSION_GAP_SECONDS,
    tz_offset_minutes: int = 0,
) -> FeatureSpace:
    personal = {}
    for user in sorted(train_records):
        first_seen: dict[str, int] = {}
        for r in train_records[user]:
            first_seen.setdefault(r.app_id, r.category.id)
        apps = tuple(sorted(first_seen))
        personal[user] = PersonalVocabulary(user, apps, tuple(first_seen[a] for a in apps))
    c = len(taxonomy)
    return FeatureSpace(taxonomy, generic_schema(c), engagement_schema(c), personal, gap_seconds, tz_offset_minutes)


def _one_hot(width: int, index: int) -> np.ndarray:
    v = np.zeros(width)
    v[index] = 1.0
    return v


def profile_vector(profile: UserProfile, with_os: bool) -> np.ndarray:
    parts = [
        _one_hot(len(AGE_BANDS), AGE_BANDS.index(profile.age_band)),
        _one_hot(len(GENDERS), GENDERS.index(profile.gender)),
        _one_hot(len(DEVICE_TYPES), DEVICE_TYPES.index(profile.device_type)),
    ]
    if with_os:
        parts.append(_one_hot(len(OSES), OSES.index(profile.os)))
    return np.concatenate(parts)


class PredictionContext:
    """Running summary of one user's history, updated per consumed dwell record."""

    def __init__(self, user_id: str, n_categories: int, gap_seconds: float = SESSION_GAP_SECONDS):
        c = n_categories
        self.user_id = user_id
        self.n_categories = c
        self.gap_seconds = gap_seconds
        self.total_dwell = 0.0
        self.total_frequency = 0
        self.apps_seen: set[str] = set()
        self.category_counts = np.zeros(c)
        self.last_level = np.zeros(c)  # 0 none, 1 light, 2 medium, 3 intensive
        self.level_counts = np.zeros((c, 3))
        self.category_last_end = np.full(c, -np.inf)
        self.app_last_end: dict[str, float] = {}
        self.recent: deque[tuple[int, int]] = deque()  # (start, category) within the last day
        self.session_counts = np.zeros(c)
        self.previous_session_counts = np.zeros(c)
        self.last_end: float | None = None
        self.last_start: int | None = None
        self.session_tail: list[int] = []  # categories of the current session, most recent last
        self.app_tail: list[str] = []  # last two apps overall

    def observe(self, record: DwellRecord, level: int) -> None:
        if self.last_start is not None and record.start < self.last_start:
            raise DomainError("context must consume records in time order")
        cid = record.category.id
        new_session = self.last_end is None or record.start - self.last_end > self.gap_seconds
        if new_session:
            self.previous_session_counts = self.session_counts
            self.session_counts = np.zeros(self.n_categories)
            self.session_tail = []
        self.session_counts[cid] += 1
        self.session_tail = (self.session_tail + [cid])[-2:]
        self.app_tail = (self.app_tail + [record.app_id])[-2:]
        self.total_dwell += record.dwell_seconds
        self.total_frequency += 1
        self.apps_seen.add(record.app_id)
        self.category_counts[cid] += 1
        self.last_level[cid] = level + 1
        self.level_counts[cid, level] += 1
        self.category_last_end[cid] = max(self.category_last_end[cid], record.end)
        self.app_last_end[record.app_id] = max(self.app_last_end.get(record.app_id, -np.inf), record.end)
        self.recent.append((record.start, cid))
        while self.recent and self.recent[0][0] < record.start - DAY:
            self.recent.popleft()
        self.last_end = record.end
        self.last_start = record.start

    # -- query-time views ------------------------------------------------

    def continues_session(self, t: float) -> bool:
        return self.last_end is not None and t - self.last_end <= self.gap_seconds

    def window_counts(self, t: float, seconds: float) -> np.ndarray:
        out = np.zeros(self.n_categories)
        for start, cid in self.recent:
            if t - seconds <= start < t:
                out[cid] += 1
        return out

    def last_session_counts(self, t: float) -> np.ndarray:
        if self.continues_session(t):
            return self.previous_session_counts.copy()
        return self.session_counts.copy()

    def in_session_tail(self, t: float) -> list[int]:
        return list(self.session_tail) if self.continues_session(t) else []

    def hours_since(self, t: float) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            h = (t - self.category_last_end) / HOUR
        return np.clip(np.nan_to_num(h, posinf=INTERVAL_CAP_HOURS), 0.0, INTERVAL_CAP_HOURS)

    def totals(self) -> np.ndarray:
        return np.log1p([self.total_dwell, self.total_frequency, len(self.apps_seen)])


def _time_vector(t: float, tz_offset_minutes: int) -> np.ndarray:
    hour, weekday = local_time_fields(t, tz_offset_minutes)
    return np.concatenate([_one_hot(24, hour), _one_hot(7, weekday)])


def _last_category_vector(tail: list[int], c: int, depth: int) -> np.ndarray:
    """One-hot blocks for the last ``depth`` in-session categories; slot c means none."""
    blocks = []
    for k in range(1, depth + 1):
        idx = tail[-k] if len(tail) >= k else c
        blocks.append(_one_hot(c + 1, idx))
    return np.concatenate(blocks)


def build_generic_features(ctx: PredictionContext, profile: UserProfile, t: float, space: FeatureSpace) -> np.ndarray:
    if space is None or space.generic is None:
        raise SchemaError("generic schema not fitted")
    c = space.n_categories
    tail = ctx.in_session_tail(t)
    v = np.concatenate([
        profile_vector(profile, with_os=True),
        ctx.totals(),
        _time_vector(t, space.tz_offset_minutes),
        ctx.window_counts(t, DAY),
        ctx.window_counts(t, HOUR),
        ctx.last_session_counts(t),
        _last_category_vector(tail, c, 1),
        _last_category_vector(tail, c, 2),
        ctx.hours_since(t),
        ctx.category_counts,
    ])
    assert v.size == space.generic.dimension
    return v


def build_personal_features(ctx: PredictionContext, t: float, vocab: PersonalVocabulary, space: FeatureSpace) -> np.ndarray:
    if vocab is None:
        raise SchemaError("personal schema not fitted")
    n = len(vocab.apps)
    last = ctx.app_tail[-1] if ctx.app_tail else None
    second = ctx.app_tail[-2] if len(ctx.app_tail) >= 2 else None
    periodic = np.full(n, INTERVAL_CAP_HOURS)
    for i, app in enumerate(vocab.apps):
        if app in ctx.app_last_end:
            periodic[i] = min(max((t - ctx.app_last_end[app]) / HOUR, 0.0), INTERVAL_CAP_HOURS)
    return np.concatenate([
        _time_vector(t, space.tz_offset_minutes),
        _one_hot(n + 1, vocab.index(last)),
        _one_hot(n + 1, vocab.index(second)),
        periodic,
    ])


@dataclass
class EngagementParts:
    """Engagement features minus the predicted-category slots, which are filled on demand."""

    common: np.ndarray
    last_level: np.ndarray
    hours_since: np.ndarray
    level_counts: np.ndarray

    def vector(self, predicted_category: int) -> np.ndarray:
        c = self.last_level.size
        if not 0 <= predicted_category < c:
            raise DomainError(f"unknown predicted category {predicted_category}")
        pc = predicted_category
        return np.concatenate([
            self.common,
            self.last_level, [self.last_level[pc]],
            self.hours_since, [self.hours_since[pc]],
            self.level_counts @ np.array([1.0, 2.0, 3.0]),
            self.level_counts[pc],
        ])


def engagement_parts(ctx: PredictionContext, profile: UserProfile, t: float, space: FeatureSpace) -> EngagementParts:
    c = space.n_categories
    common = np.concatenate([
        profile_vector(profile, with_os=False),
        ctx.totals(),
        _time_vector(t, space.tz_offset_minutes),
        _last_category_vector(ctx.in_session_tail(t), c, 1),
    ])
    return EngagementParts(common, ctx.last_level.copy(), ctx.hours_since(t), ctx.level_counts.copy())


def build_engagement_features(
    ctx: PredictionContext, profile: UserProfile, predicted_category: int, t: float, space: FeatureSpace
) -> np.ndarray:
    v = engagement_parts(ctx, profile, t, space).vector(predicted_category)
    assert v.size == space.engagement.dimension
    return v


@dataclass
class PredictionInstance:
    user_id: str
    record: DwellRecord | None  # None for an unlabeled query
    position: int  # index of the target record in its user's sequence
    x_generic: np.ndarray
    x_personal: np.ndarray
    engagement: EngagementParts
    label_category: int
    label_level: int
    n_categories: int

    @property
    def x_engagement(self) -> np.ndarray:
        return self.engagement.vector(self.label_category)

    @property
    def joint_label(self) -> np.ndarray:
        y = np.zeros(self.n_categories + 3)
        y[self.label_category] = 1.0
        y[self.n_categories + self.label_level] = 1.0
        return y


def replay_levels(records: Sequence[DwellRecord], table: QuantileTable) -> list[int]:
    return [int(label_engagement(r, table)) for r in records]


def make_instances(
    records: Mapping[str, Sequence[DwellRecord]],
    profiles: Mapping[str, UserProfile],
    table: QuantileTable,
    space: FeatureSpace,
) -> list[PredictionInstance]:
    """One instance per dwell record that has at least one earlier record of its user."""
    out = []
    c = space.n_categories
    for user in sorted(records):
        recs = records[user]
        profile = profiles[user]
        vocab = space.personal_for(user)
        ctx = PredictionContext(user, c, space.gap_seconds)
        for k, (r, lvl) in enumerate(zip(recs, replay_levels(recs, table))):
            if k > 0:
                t = r.start
                out.append(PredictionInstance(
                    user_id=user,
                    record=r,
                    position=k,
                    x_generic=build_generic_features(ctx, profile, t, space),
                    x_personal=build_personal_features(ctx, t, vocab, space),
                    engagement=engagement_parts(ctx, profile, t, space),
                    label_category=r.category.id,
                    label_level=lvl,
                    n_categories=c,
                ))
            ctx.observe(r, lvl)
    return out


def query_instance(ctx: PredictionContext, profile: UserProfile, t: float, space: FeatureSpace) -> PredictionInstance:
    """Unlabeled instance for a prediction at time ``t`` from the context's history."""
    vocab = space.personal_for(ctx.user_id)
    return PredictionInstance(
        user_id=ctx.user_id,
        record=None,
        position=-1,
        x_generic=build_generic_features(ctx, profile, t, space),
        x_personal=build_personal_features(ctx, t, vocab, space),
        engagement=engagement_parts(ctx, profile, t, space),
        label_category=-1,
        label_level=-1,
        n_categories=space.n_categories,
    )


def context_for(
    history: Sequence[DwellRecord], table: QuantileTable, space: FeatureSpace, user_id: str
) -> PredictionContext:
    ctx = PredictionContext(user_id, space.n_categories, space.gap_seconds)
    for r, lvl in zip(history, replay_levels(history, table)):
        ctx.observe(r, lvl)
    return ctx


@dataclass
class InstanceMatrix:
    """Column-stacked view of a list of instances for batch training and scoring."""

    instances: list[PredictionInstance]
    X_generic: np.ndarray = field(init=False)
    categories: np.ndarray = field(init=False)
    levels: np.ndarray = field(init=False)
    users: np.ndarray = field(init=False)
    apps: np.ndarray = field(init=False)

    def __post_init__(self):
        inst = self.instances
        if not inst:
            raise DomainError("no instances")
        self.n_categories = inst[0].n_categories
        self.X_generic = np.vstack([i.x_generic for i in inst])
        self.categories = np.array([i.label_category for i in inst])
        self.levels = np.array([i.label_level for i in inst])
        self.users = np.array([i.user_id for i in inst])
        self.apps = np.array([i.record.app_id if i.record is not None else "" for i in inst])
        self._common = np.vstack([i.engagement.common for i in inst])
        self._last_level = np.vstack([i.engagement.last_level for i in inst])
        self._hours = np.vstack([i.engagement.hours_since for i in inst])
        self._counts = np.stack([i.engagement.level_counts for i in inst])

    def __len__(self) -> int:
        return len(self.instances)

    def subset(self, idx) -> "InstanceMatrix":
        return InstanceMatrix([self.instances[i] for i in np.asarray(idx)])

    def engagement(self, predicted_categories: np.ndarray | None = None) -> np.ndarray:
        pc = self.categories if predicted_categories is None else np.asarray(predicted_categories)
        rows = np.arange(len(self))
        return np.hstack([
            self._common,
            self._last_level, self._last_level[rows, pc][:, None],
            self._hours, self._hours[rows, pc][:, None],
            self._counts @ np.array([1.0, 2.0, 3.0]),
            self._counts[rows, pc],
        ])

    def joint_labels(self) -> np.ndarray:
        c = self.n_categories
        y = np.zeros((len(self), c + 3))
        y[np.arange(len(self)), self.categories] = 1.0
        y[np.arange(len(self)), c + self.levels] = 1.0
        return y


def instance_header(space: FeatureSpace) -> list[str]:
    """Column names of the instance CSV: identifiers, labels, then generic and engagement features."""
    def columns(schema: FeatureSchema) -> list[str]:
        out = []
        for block in schema.blocks:
            out += [block.name] if block.width == 1 else [f"{block.name}[{k}]" for k in range(block.width)]
        return out
    return (["user_id", "position", "start", "app_id", "category", "level"]
            + [f"g.{c}" for c in columns(space.generic)]
            + [f"e.{c}" for c in columns(space.engagement)])


def write_instances(path, M: InstanceMatrix, space: FeatureSpace) -> None:
    """Columnar CSV of instances; engagement features use the true category as the predicted one.

    Personal features are per user and vary in width, so they are left out.
    """
    E = M.engagement()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(instance_header(space))
        for k, inst in enumerate(M.instances):
            w.writerow([inst.user_id, inst.position, inst.record.start, inst.record.app_id,
                        space.taxonomy.by_id(inst.label_category).name, inst.label_level,
                        *map(repr, M.X_generic[k].tolist()), *map(repr, E[k].tolist())])
