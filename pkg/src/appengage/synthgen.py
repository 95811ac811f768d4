"""Seeded synthetic usage-log generator with manifest-declared planted structure.

The generative story per user:

* sessions start at diurnally weighted times and span several app uses;
* the category of each use comes from a Markov chain over category "slots"
  combined with an hour-of-day popularity profile and user preferences;
* a confusable pair occupies one slot; which member is used depends on the
  user's last dwell on a cue category (engagement history the category model
  cannot see);
* dwell is log-normal with per-(user, category) habit multipliers,
  demographic multipliers and an AR(1) persistence of the dwell z-score;
* periodic categories get forced sessions at a fixed time of day.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import AGE_BANDS, DEVICE_TYPES, GENDERS, OSES, DomainError, Taxonomy, UsageEvent, UserProfile
from .ingest import write_log

EPOCH_START = 1672617600  # 2023-01-02 00:00 UTC, a Monday
MANIFEST_VERSION = 1


@dataclass
class DemographicEffect:
    category: str
    field: str  # age_band | gender | device_type
    value: str
    multiplier: float


@dataclass
class PeriodicSpec:
    category: str
    period_hours: int = 24
    user_fraction: float = 1.0
    jitter_minutes: float = 10.0


@dataclass
class ConfusablePair:
    first: str
    second: str
    cue: str
    strength: float = 4.0  # logit slope of P(first) in the cue's last dwell z-score


@dataclass
class GeneratorConfig:
    categories: list[str]
    n_users: int = 50
    days: int = 7
    seed: int = 0
    structure_seed: int = 1
    sessions_per_day: float = 5.0
    mean_session_length: float = 3.0  # dwell records per session
    apps_per_category: int = 3
    second_app_probability: float = 0.2
    dwell_median_seconds: list[float] | None = None  # per category; drawn if None
    dwell_sigma: float = 0.8
    habit_sigma: float = 0.5
    persistence: float = 0.6
    hour_concentration: float = 1.5
    markov_concentration: float = 0.3
    markov_weight: float = 1.0
    preference_concentration: float = 2.0
    popularity: dict[str, float] = field(default_factory=dict)  # slot weight overrides by category
    demographic_effects: list[DemographicEffect] = field(default_factory=list)
    periodic: list[PeriodicSpec] = field(default_factory=list)
    pairs: list[ConfusablePair] = field(default_factory=list)
    split_probability: float = 0.1
    background_rate: float = 0.0  # background events per session, written with user_triggered=false
    constant_dwell: float | None = None  # every dwell equals this value (degenerate test corpora)
    unaffected: list[str] = field(default_factory=list)  # categories without habits or demographic effects
    cue_coupling: float = 0.0  # transition mass from a cue into its pair slot
    pair_entry_damping: float = 1.0  # scales every other way into a pair slot

    def validate(self) -> None:
        if len(set(self.categories)) != len(self.categories) or not self.categories:
            raise DomainError("categories must be unique and non-empty")
        if self.n_users < 1 or self.days < 1:
            raise DomainError("need at least one user and one day")
        for e in self.demographic_effects:
            if e.multiplier <= 0:
                raise DomainError("demographic multipliers must be > 0")
            if e.category not in self.categories:
                raise DomainError(f"effect on unknown category {e.category!r}")
        names = set(self.categories)
        for p in self.pairs:
            if not {p.first, p.second, p.cue} <= names or len({p.first, p.second, p.cue}) != 3:
                raise DomainError(f"bad confusable pair {p}")
        for p in self.periodic:
            if p.category not in names or p.period_hours < 1:
                raise DomainError(f"bad periodic spec {p}")
        if not 0 <= self.persistence < 1:
            raise DomainError("persistence must be in [0, 1)")
        if self.dwell_median_seconds is not None and len(self.dwell_median_seconds) != len(self.categories):
            raise DomainError("one dwell median per category")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        d["demographic_effects"] = [DemographicEffect(**e) for e in d.get("demographic_effects", [])]
        d["periodic"] = [PeriodicSpec(**p) for p in d.get("periodic", [])]
        d["pairs"] = [ConfusablePair(**p) for p in d.get("pairs", [])]
        return cls(**d)


@dataclass
class World:
    """Concrete generative parameters resolved from a config."""

    slots: list[tuple[str, ...]]
    slot_of: dict[str, int]
    hour_profile: np.ndarray  # (slots, 24) rows sum to 1
    transitions: np.ndarray  # (slots, slots) rows sum to 1
    log_median: dict[str, float]
    session_hours: np.ndarray  # (24,) sums to 1

    def to_dict(self) -> dict:
        return {
            "slots": [list(s) for s in self.slots],
            "hour_profile": self.hour_profile.round(12).tolist(),
            "transitions": self.transitions.round(12).tolist(),
            "log_median": self.log_median,
            "session_hours": self.session_hours.round(12).tolist(),
        }


def _check_rows(M: np.ndarray, what: str) -> None:
    if (M < 0).any() or not np.allclose(M.sum(axis=-1), 1.0, atol=1e-9):
        raise DomainError(f"{what} rows must be non-negative and sum to 1")


def build_world(cfg: GeneratorConfig) -> World:
    cfg.validate()
    rng = np.random.default_rng(cfg.structure_seed)
    paired = {p.first: p for p in cfg.pairs} | {p.second: p for p in cfg.pairs}
    slots: list[tuple[str, ...]] = []
    for name in cfg.categories:
        if name in paired:
            p = paired[name]
            if name == p.first:
                slots.append((p.first, p.second))
        else:
            slots.append((name,))
    slot_of = {name: i for i, s in enumerate(slots) for name in s}
    s = len(slots)
    hours = np.arange(24)
    peaks = rng.integers(0, 24, s)
    kappa = cfg.hour_concentration * rng.uniform(0.5, 1.5, s)
    H = np.exp(kappa[:, None] * np.cos(2 * np.pi * (hours[None, :] - peaks[:, None]) / 24)) + 0.05
    H /= H.sum(axis=1, keepdims=True)
    T = rng.dirichlet(np.full(s, cfg.markov_concentration), size=s) + 1e-3
    if s > 1:
        np.fill_diagonal(T, 0.0)
    T /= T.sum(axis=1, keepdims=True)
    for p in cfg.pairs:
        ps, cs = slot_of[p.first], slot_of[p.cue]
        others = np.arange(s) != cs
        T[others, ps] *= cfg.pair_entry_damping
        T[others] /= T[others].sum(axis=1, keepdims=True)
        T[cs] *= 1 - cfg.cue_coupling
        T[cs, ps] += cfg.cue_coupling
    if cfg.dwell_median_seconds is None:
        medians = np.exp(rng.uniform(np.log(10), np.log(90), len(cfg.categories)))
    else:
        medians = np.asarray(cfg.dwell_median_seconds, dtype=float)
    log_median = {c: float(np.log(m)) for c, m in zip(cfg.categories, medians)}
    session_hours = np.exp(0.9 * np.cos(2 * np.pi * (hours - 20) / 24))
    session_hours /= session_hours.sum()
    _check_rows(H, "hour profile")
    _check_rows(T, "transition")
    return World(slots, slot_of, H, T, log_median, session_hours)


@dataclass
class PlantedRecord:
    """A dwell record as intended by the generator (before any file round trip)."""

    user_id: str
    app_id: str
    category: str
    start: int
    dwell_seconds: float
    multiplier: float  # habit x demographic factor applied to the base distribution


@dataclass
class GeneratedCorpus:
    taxonomy: Taxonomy
    profiles: dict[str, UserProfile]
    events: list[UsageEvent]
    user_triggered: list[bool] | None
    planted: list[PlantedRecord]
    manifest: dict


def _profile(rng: np.random.Generator, uid: str) -> UserProfile:
    return UserProfile(
        uid,
        AGE_BANDS[rng.choice(5, p=[0.2, 0.3, 0.25, 0.17, 0.08])],
        GENDERS[rng.integers(0, 2)],
        DEVICE_TYPES[int(rng.random() < 0.25)],
        OSES[int(rng.random() < 0.35)],
    )


def _demo_multiplier(cfg: GeneratorConfig, profile: UserProfile, category: str) -> float:
    m = 1.0
    for e in cfg.demographic_effects:
        if e.category == category and getattr(profile, e.field) == e.value:
            m *= e.multiplier
    return m


class _UserSimulator:
    def __init__(self, cfg: GeneratorConfig, world: World, taxonomy: Taxonomy, uid: str, rng: np.random.Generator):
        self.cfg, self.world, self.taxonomy, self.uid, self.rng = cfg, world, taxonomy, uid, rng
        self.profile = _profile(rng, uid)
        s = len(world.slots)
        weights = np.array([
            np.mean([cfg.popularity.get(c, 1.0) for c in slot]) for slot in world.slots
        ])
        self.preference = rng.dirichlet(np.full(s, cfg.preference_concentration)) * weights
        self.entry_weights = np.ones(s)
        for p in cfg.pairs:
            self.entry_weights[world.slot_of[p.first]] = cfg.pair_entry_damping
        self.apps: dict[str, list[str]] = {}
        self.app_weights: dict[str, np.ndarray] = {}
        for c in cfg.categories:
            pool = [f"{c}.{k}" for k in range(cfg.apps_per_category)]
            k = 2 if cfg.apps_per_category > 1 and rng.random() < cfg.second_app_probability else 1
            chosen = sorted(rng.choice(len(pool), size=k, replace=False).tolist())
            self.apps[c] = [pool[i] for i in chosen]
            self.app_weights[c] = np.array([0.7, 0.3][:k]) / np.array([0.7, 0.3][:k]).sum()
        self.habit = {
            c: 1.0 if c in cfg.unaffected else float(np.exp(rng.normal(0, cfg.habit_sigma)))
            for c in cfg.categories
        }
        self.z = {c: float(rng.normal()) for c in cfg.categories}
        self.last_z: dict[str, float] = {}
        self.events: list[UsageEvent] = []
        self.triggered: list[bool] = []
        self.planted: list[PlantedRecord] = []
        self.decisions: list[dict] = []

    def multiplier(self, c: str) -> float:
        if c in self.cfg.unaffected:
            return 1.0
        return self.habit[c] * _demo_multiplier(self.cfg, self.profile, c)

    def draw_dwell(self, c: str) -> tuple[float, float]:
        cfg = self.cfg
        rho = cfg.persistence
        z = rho * self.z[c] + math.sqrt(1 - rho * rho) * float(self.rng.normal())
        self.z[c] = z
        self.last_z[c] = z
        if cfg.constant_dwell is not None:
            return float(cfg.constant_dwell), 1.0
        m = self.multiplier(c)
        dwell = math.exp(self.world.log_median[c] + cfg.dwell_sigma * z) * m
        return round(max(dwell, 0.5), 3), m

    def resolve_slot(self, slot: int) -> str:
        members = self.world.slots[slot]
        if len(members) == 1:
            return members[0]
        pair = next(p for p in self.cfg.pairs if p.first == members[0])
        z = self.last_z.get(pair.cue)
        p_first = 0.5 if z is None else 1.0 / (1.0 + math.exp(-pair.strength * z))
        pick = members[0] if self.rng.random() < p_first else members[1]
        self.decisions.append({"cue_z": z, "p_first": p_first, "chosen": pick})
        return pick

    def next_slot(self, prev: int | None, hour: int, exclude: int | None) -> int:
        w = self.world.hour_profile[:, hour] * self.preference
        if prev is not None:
            w = w * self.world.transitions[prev] ** self.cfg.markov_weight
        else:
            w = w * self.entry_weights
        if exclude is not None and len(w) > 1:
            w = w.copy()
            w[exclude] = 0.0
        if w.sum() <= 0:
            w = np.ones_like(w)
            if exclude is not None and len(w) > 1:
                w[exclude] = 0.0
        return int(self.rng.choice(len(w), p=w / w.sum()))

    def pick_app(self, c: str, avoid: str | None) -> str | None:
        apps = [a for a in self.apps[c] if a != avoid]
        if not apps:
            return None
        w = np.array([self.app_weights[c][self.apps[c].index(a)] for a in apps])
        return apps[int(self.rng.choice(len(apps), p=w / w.sum()))]

    def emit(self, app: str, c: str, t: int, dwell: float) -> float:
        """Write one dwell as one or two same-app events; returns the end time."""
        cat = self.taxonomy.by_name(c)
        if self.rng.random() < self.cfg.split_probability and dwell >= 2:
            d1 = round(dwell * float(self.rng.uniform(0.2, 0.8)), 3)
            d2 = round(dwell - d1, 3)
            self.events.append(UsageEvent(self.uid, t, app, cat, d1))
            t2 = int(math.ceil(t + d1 + self.rng.integers(1, 20)))
            self.events.append(UsageEvent(self.uid, t2, app, cat, d2))
            self.triggered += [True, True]
            return t2 + d2
        self.events.append(UsageEvent(self.uid, t, app, cat, dwell))
        self.triggered.append(True)
        return t + dwell

    def session(self, start: int, forced_first: str | None = None) -> float:
        cfg = self.cfg
        n = int(self.rng.geometric(1.0 / max(cfg.mean_session_length, 1.0)))
        t = start
        prev_slot, prev_app = None, None
        end = float(start)
        for k in range(n):
            hour = int(((t - EPOCH_START) % 86400) // 3600)
            if k == 0 and forced_first is not None:
                c = forced_first
                slot = self.world.slot_of[c]
            else:
                slot = self.next_slot(prev_slot, hour, prev_slot)
                c = self.resolve_slot(slot)
            app = self.pick_app(c, prev_app)
            if app is None:
                break
            dwell, m = self.draw_dwell(c)
            self.planted.append(PlantedRecord(self.uid, app, c, t, dwell, m))
            end = self.emit(app, c, t, dwell)
            if self.cfg.background_rate and self.rng.random() < self.cfg.background_rate:
                bg = self.cfg.categories[int(self.rng.integers(len(self.cfg.categories)))]
                self.events.append(UsageEvent(self.uid, int(end), f"{bg}.bg", self.taxonomy.by_name(bg), 1.0))
                self.triggered.append(False)
            prev_slot, prev_app = slot, app
            t = int(math.ceil(end + self.rng.integers(0, 60)))
        return end

    def run(self) -> None:
        cfg, rng = self.cfg, self.rng
        starts: list[tuple[int, str | None]] = []
        for day in range(cfg.days):
            n = rng.poisson(cfg.sessions_per_day)
            hours = rng.choice(24, size=n, p=self.world.session_hours)
            for h in hours:
                starts.append((EPOCH_START + day * 86400 + int(h) * 3600 + int(rng.integers(0, 3600)), None))
        for spec in cfg.periodic:
            if rng.random() >= spec.user_fraction:
                continue
            anchor = int(rng.integers(0, 86400))
            t = EPOCH_START + anchor
            while t < EPOCH_START + cfg.days * 86400:
                jitter = int(rng.normal(0, spec.jitter_minutes * 60))
                starts.append((t + jitter, spec.category))
                t += spec.period_hours * 3600
        starts.sort(key=lambda s: (s[0], s[1] or ""))
        last_end = -math.inf
        for t, forced in starts:
            t = max(t, EPOCH_START)
            if t - last_end <= 300:
                t = int(math.ceil(last_end)) + 301 + int(rng.integers(0, 300))
            last_end = self.session(t, forced)


def generate(cfg: GeneratorConfig) -> GeneratedCorpus:
    """Simulate every user; identical configs give identical corpora."""
    world = build_world(cfg)
    taxonomy = Taxonomy(cfg.categories)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_users)
    width = len(str(cfg.n_users - 1))
    profiles, events, triggered, planted = {}, [], [], []
    decisions = []
    for i, child in enumerate(children):
        uid = f"u{i:0{width}d}"
        sim = _UserSimulator(cfg, world, taxonomy, uid, np.random.default_rng(child))
        sim.run()
        profiles[uid] = sim.profile
        events.extend(sim.events)
        triggered.extend(sim.triggered)
        planted.extend(sim.planted)
        decisions.extend(sim.decisions)
    manifest = build_manifest(cfg, world, profiles, events, triggered, planted, decisions)
    return GeneratedCorpus(taxonomy, profiles, events, triggered if cfg.background_rate else None, planted, manifest)


def _group_multipliers(planted, profiles, category, field_name) -> dict:
    """Mean dwell multiplier per demographic group; base dwell is shared, so their ratios are expected effects."""
    groups: dict[str, list[float]] = {}
    for r in planted:
        if r.category == category:
            groups.setdefault(getattr(profiles[r.user_id], field_name), []).append(r.multiplier)
    means = {g: float(np.mean(v)) for g, v in groups.items()}
    return means


def build_manifest(cfg, world, profiles, events, triggered, planted, decisions) -> dict:
    per_user_events: dict[str, int] = {u: 0 for u in profiles}
    for e, trig in zip(events, triggered):
        if trig:
            per_user_events[e.user_id] += 1
    per_user_records: dict[str, int] = {u: 0 for u in profiles}
    per_cat: dict[str, int] = {}
    for r in planted:
        per_user_records[r.user_id] += 1
        per_cat[r.category] = per_cat.get(r.category, 0) + 1
    expected = {"gender_effect": {}, "age_effect": {}, "device_effect": {}}
    for e in cfg.demographic_effects:
        key = {"gender": "gender_effect", "age_band": "age_effect", "device_type": "device_effect"}[e.field]
        means = _group_multipliers(planted, profiles, e.category, e.field)
        if key == "age_effect":
            overall = float(np.mean([r.multiplier for r in planted if r.category == e.category]))
            expected[key][e.category] = {
                "band": e.value, "planted_multiplier": e.multiplier,
                "expected": means.get(e.value, float("nan")) / overall,
            }
        elif len(means) == 2:
            hi, lo = max(means.values()), min(means.values())
            expected[key][e.category] = {
                "favored": e.value, "planted_multiplier": e.multiplier, "expected": hi / lo,
            }
    pair_stats = []
    for p in cfg.pairs:
        ds = [d for d in decisions if d["chosen"] in (p.first, p.second)]
        informative = [d for d in ds if d["cue_z"] is not None]
        pair_stats.append({
            "first": p.first, "second": p.second, "cue": p.cue, "strength": p.strength,
            "uses": len(ds),
            "cue_agreement": float(np.mean([
                (d["chosen"] == p.first) == (d["cue_z"] > 0) for d in informative
            ])) if informative else None,
        })
    return {
        "version": MANIFEST_VERSION,
        "config": cfg.to_dict(),
        "world": world.to_dict(),
        "taxonomy": list(cfg.categories),
        "n_users": len(profiles),
        "n_events": sum(per_user_events.values()),
        "n_background": sum(1 for t in triggered if not t),
        "n_records": len(planted),
        "per_user_events": per_user_events,
        "per_user_records": per_user_records,
        "records_per_category": dict(sorted(per_cat.items())),
        "expected": {
            **expected,
            "interval_peak_bucket": {p.category: p.period_hours for p in cfg.periodic},
            "level_persistence": cfg.persistence,
            "share_under_10_minutes": float(np.mean([r.dwell_seconds < 600 for r in planted])) if planted else None,
        },
        "pairs": pair_stats,
    }


def write_corpus(corpus: GeneratedCorpus, outdir: str | Path, format: str = "csv") -> dict[str, str]:
    """Write the log, manifest.json and taxonomy.json; returns file digests."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / f"events.{format}"
    write_log(log_path, corpus.events, corpus.profiles, format, corpus.user_triggered)
    (out / "manifest.json").write_text(json.dumps(corpus.manifest, indent=2, sort_keys=True) + "\n")
    (out / "taxonomy.json").write_text(json.dumps(list(corpus.taxonomy.names), indent=2) + "\n")
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in (log_path, out / "manifest.json", out / "taxonomy.json")}


# -- presets -----------------------------------------------------------------

BENCHMARK_CATEGORIES = [
    "social", "communication", "video", "tools", "news", "weather", "shopping", "navigation",
    "music", "productivity", "casino", "card", "puzzle", "word", "racing", "arcade",
]


def benchmark_config(seed: int = 7) -> GeneratorConfig:
    """About 25k dwell records with hourly/Markov category signal and three confusable pairs."""
    return GeneratorConfig(
        categories=list(BENCHMARK_CATEGORIES),
        n_users=100,
        days=14,
        seed=seed,
        sessions_per_day=5.0,
        mean_session_length=3.5,
        habit_sigma=0.8,
        persistence=0.95,
        cue_coupling=0.8,
        pair_entry_damping=0.2,
        popularity={"casino": 4.0, "card": 4.0, "puzzle": 4.0, "word": 4.0, "racing": 4.0, "arcade": 4.0,
                    "social": 1.5, "communication": 1.5, "video": 1.5},
        demographic_effects=[
            DemographicEffect("shopping", "gender", "female", 2.0),
            DemographicEffect("shopping", "age_band", "13-17", 3.0),
            DemographicEffect("navigation", "device_type", "phone", 1.5),
        ],
        periodic=[PeriodicSpec("shopping", 24, 0.5)],
        pairs=[
            ConfusablePair("casino", "card", "social", 6.0),
            ConfusablePair("puzzle", "word", "communication", 6.0),
            ConfusablePair("racing", "arcade", "video", 6.0),
        ],
        unaffected=["social", "communication", "video"],
    )


def effects_config(seed: int = 11) -> GeneratorConfig:
    """About 5k records with large, well-supported demographic effects on shopping and navigation."""
    return GeneratorConfig(
        categories=["social", "shopping", "navigation", "tools", "news", "music"],
        n_users=60,
        days=6,
        seed=seed,
        sessions_per_day=4.0,
        mean_session_length=3.5,
        habit_sigma=0.0,
        dwell_sigma=0.5,
        popularity={"shopping": 3.0},
        demographic_effects=[
            DemographicEffect("shopping", "gender", "female", 2.0),
            DemographicEffect("navigation", "device_type", "phone", 1.5),
        ],
    )


def periodic_config(seed: int = 13) -> GeneratorConfig:
    """About 5k records where shopping is used almost only in a daily forced session."""
    return GeneratorConfig(
        categories=["social", "shopping", "tools", "news", "music", "video"],
        n_users=30,
        days=14,
        seed=seed,
        sessions_per_day=3.0,
        mean_session_length=3.0,
        apps_per_category=1,
        popularity={"shopping": 0.02},
        periodic=[PeriodicSpec("shopping", 24, 1.0, 5.0)],
    )


def continuous_config(seed: int = 5) -> GeneratorConfig:
    """About 10k records with continuous dwell times for level-share checks."""
    return GeneratorConfig(
        categories=["social", "weather", "tools", "news", "music", "video", "shopping", "navigation"],
        n_users=60,
        days=12,
        seed=seed,
        sessions_per_day=5.0,
        mean_session_length=3.0,
    )
