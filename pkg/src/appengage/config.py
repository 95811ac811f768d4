"""Run configuration shared by every CLI stage.

A `RunConfig` is loaded from YAML or JSON, overridden by command-line flags,
and written in full into each stage manifest so the stage can be replayed.
"""

from __future__ import annotations

import json
import os
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .core import SESSION_GAP_SECONDS, DomainError
from .learners import Learner
from .predictors import JointConfig
from .predictors.joint import RESIDUAL_FOREST


class ConfigError(DomainError):
    """The configuration file or flags are invalid."""


@dataclass
class IngestSettings:
    format: str = "csv"
    min_categories: int = 5
    tolerance: int = 0


@dataclass
class SessionSettings:
    gap_seconds: float = SESSION_GAP_SECONDS
    tz_offset_minutes: int = 0


@dataclass
class SplitSettings:
    train_fraction: float = 0.7
    mode: str = "chronological"


@dataclass
class LearnerSettings:
    kind: str
    params: dict = field(default_factory=dict)

    def build(self) -> Learner:
        return Learner(self.kind, dict(self.params))


@dataclass
class ModelSettings:
    generic: LearnerSettings = field(default_factory=lambda: LearnerSettings("random_forest"))
    personal: LearnerSettings = field(default_factory=lambda: LearnerSettings("linear_svm"))
    engagement: LearnerSettings = field(default_factory=lambda: LearnerSettings("logreg"))
    meta: LearnerSettings = field(default_factory=lambda: LearnerSettings("logreg"))
    min_personal: int = 20
    min_support: int = 50
    folds: int = 5
    ridge_lambda: float = 1.0
    residual_kind: str = "forest"
    residual_params: dict = field(default_factory=lambda: dict(RESIDUAL_FOREST))
    h2_input: str = "onehot"
    meta_input: str = "proba"
    h1_fit: str = "oof"


@dataclass
class GenerateSettings:
    preset: str = "benchmark"
    overrides: dict = field(default_factory=dict)
    format: str = "csv"


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 0  # 0 means all available cores
    strategy: str = "all"
    ingest: IngestSettings = field(default_factory=IngestSettings)
    session: SessionSettings = field(default_factory=SessionSettings)
    split: SplitSettings = field(default_factory=SplitSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    generate: GenerateSettings = field(default_factory=GenerateSettings)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        return _build(cls, d or {}, "config")

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"config {path} does not parse: {exc}") from exc
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_dict(doc)

    def resolved_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)

    def strategies(self) -> tuple[str, ...]:
        from .predictors import STRATEGIES

        if self.strategy == "all":
            return STRATEGIES
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        return (self.strategy,)

    def joint_config(self) -> JointConfig:
        m = self.model
        generic = m.generic.build()
        if generic.kind == "random_forest" and "threads" not in generic.params:
            generic.params["threads"] = self.resolved_threads()
        return JointConfig(
            generic_learner=generic,
            personal_learner=m.personal.build(),
            engagement_learner=m.engagement.build(),
            meta_learner=m.meta.build(),
            min_personal=m.min_personal,
            min_support=m.min_support,
            folds=m.folds,
            ridge_lambda=m.ridge_lambda,
            residual_kind=m.residual_kind,
            residual_params=dict(m.residual_params),
            h2_input=m.h2_input,
            meta_input=m.meta_input,
            h1_fit=m.h1_fit,
            seed=self.seed,
        )


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {unknown}")
    kwargs = {}
    for name, value in d.items():
        default = _default_of(known[name])
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, DomainError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def _default_of(f):
    if f.default_factory is not MISSING:
        return f.default_factory()
    return f.default
