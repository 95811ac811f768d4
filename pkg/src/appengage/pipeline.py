"""End-to-end preparation, training and evaluation shared by the CLI and the benchmark."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DwellRecord
from .evaluation import Split, error_attribution, per_user_accuracy, score, split_per_user, confusion_level, overall_adjacency
from .features import FeatureSpace, InstanceMatrix, fit_feature_space, make_instances, replay_levels
from .ingest import Corpus, filter_engaged_users
from .predictors import FrequencyTables, JointConfig, SVMContext, run_baselines, train_joint
from .sessionizer import QuantileTable, build_dwell_records, fit_quantiles

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    corpus: Corpus
    records: dict[str, tuple[DwellRecord, ...]]
    split: Split
    table: QuantileTable
    space: FeatureSpace
    train: InstanceMatrix
    test: InstanceMatrix
    levels: dict[str, list[int]]

    def sequences(self):
        return {u: (self.records[u], self.levels[u]) for u in self.records}

    def train_sequences(self):
        return {u: (self.split.train[u], self.levels[u][: len(self.split.train[u])]) for u in self.split.train}

    def test_targets(self) -> list[tuple[str, int]]:
        return [(i.user_id, i.position) for i in self.test.instances]


def prepare(corpus: Corpus, min_categories: int = 5, train_fraction: float = 0.7, split_mode: str = "chronological",
            gap_seconds: float = 300, tz_offset_minutes: int = 0, seed: int = 0) -> Prepared:
    corpus = filter_engaged_users(corpus, min_categories)
    records = build_dwell_records(corpus, gap_seconds, tz_offset_minutes)
    split = split_per_user(records, train_fraction, split_mode, seed)
    records = {u: records[u] for u in split.train}
    table = fit_quantiles((r for u in sorted(split.train) for r in split.train[u]), corpus.taxonomy)
    space = fit_feature_space(split.train, corpus.taxonomy, gap_seconds, tz_offset_minutes)
    instances = make_instances(records, corpus.profiles, table, space)
    if split_mode == "chronological":
        n_train = {u: len(split.train[u]) for u in split.train}
        is_train = [i.position < n_train[i.user_id] for i in instances]
    else:
        train_ids = {id(r) for u in split.train for r in split.train[u]}
        is_train = [id(i.record) in train_ids for i in instances]
    train = InstanceMatrix([i for i, t in zip(instances, is_train) if t])
    test = InstanceMatrix([i for i, t in zip(instances, is_train) if not t])
    levels = {u: replay_levels(records[u], table) for u in records}
    log.info("prepared %d train / %d test instances over %d users", len(train), len(test), len(records))
    return Prepared(corpus, records, split, table, space, train, test, levels)


@dataclass
class BenchmarkResult:
    app: dict = field(default_factory=dict)  # model -> MetricReport
    category: dict = field(default_factory=dict)
    level: dict = field(default_factory=dict)
    joint: dict = field(default_factory=dict)
    attribution: object | None = None
    adjacency: dict = field(default_factory=dict)
    per_user_joint: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)

    def summary(self) -> dict:
        def pack(d, keys=("accuracy", "precision", "recall", "f1")):
            return {m: {k: getattr(r, k) for k in keys} for m, r in d.items()}
        return {"app": pack(self.app), "category": pack(self.category), "level": pack(self.level),
                "joint": pack(self.joint)}


def evaluate(prep: Prepared, cfg: JointConfig | None = None, strategies: Sequence[str] = ("sequential", "stacking", "boosting"),
             baselines: bool = True, models: dict | None = None) -> BenchmarkResult:
    cfg = cfg or JointConfig()
    models = models or train_joint(prep.train, strategies, cfg)
    M = prep.test
    res = BenchmarkResult(models=models)
    true_apps = M.apps.tolist()
    true_pairs = list(zip(true_apps, M.levels.tolist()))
    first = None
    for name, model in models.items():
        pred = model.predict(M)
        res.predictions[name] = pred
        res.category[name] = score(pred.categories.tolist(), M.categories.tolist(), "category")
        res.level[name] = score(pred.levels.tolist(), M.levels.tolist(), "level")
        res.joint[name] = score(pred.pairs(), true_pairs, "joint")
        res.per_user_joint[name] = per_user_accuracy(res.joint[name].correct, M.users.tolist())
        res.adjacency[name] = confusion_level(res.level[name])
        if first is None:
            first = pred
            res.app["hybrid"] = score(pred.apps.tolist(), true_apps, "app")
            res.category["hybrid"] = score(pred.first_categories.tolist(), M.categories.tolist(), "category")
    if "boosting" in res.predictions:
        b = res.predictions["boosting"]
        res.attribution = error_attribution(b.first_categories.tolist(), b.categories.tolist(), M.categories.tolist())
    if baselines:
        tables = FrequencyTables.fit(prep.train_sequences())
        preds = run_baselines(tables, prep.sequences(), prep.test_targets())
        for name, p in preds.items():
            if name.startswith("tuple"):
                res.joint[name] = score([tuple(x) for x in p], true_pairs, "joint")
            else:
                res.app[name] = score(p, true_apps, "app")
        svm_ctx = SVMContext.fit(prep.train, tables, cfg.personal_learner, cfg.seed)
        res.app["SVM+Context"] = score(svm_ctx.predict(M), true_apps, "app")
    return res


def overall_level_adjacency(result: BenchmarkResult, strategy: str) -> float:
    return overall_adjacency(result.adjacency[strategy])
