"""Per-user train/test split, support-weighted metrics, level adjacency and error attribution."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from .core import DomainError, DwellRecord, EngagementLevel

TASKS = ("app", "category", "level", "joint")


@dataclass
class Split:
    train: dict[str, tuple[DwellRecord, ...]]
    test: dict[str, tuple[DwellRecord, ...]]
    excluded: list[str]
    train_fraction: float
    mode: str

    @property
    def empty_test(self) -> bool:
        return not any(self.test.values())

    def counts(self) -> dict[str, tuple[int, int]]:
        return {u: (len(self.train[u]), len(self.test[u])) for u in sorted(self.train)}


def n_train_records(n: int, train_fraction: float) -> int:
    # The small epsilon keeps ceil(0.7 * 10) at 7 despite 0.7 * 10 == 7.000000000000001.
    return min(n, math.ceil(n * train_fraction - 1e-9))


def split_per_user(
    records: Mapping[str, Sequence[DwellRecord]],
    train_fraction: float = 0.7,
    mode: str = "chronological",
    seed: int = 0,
) -> Split:
    """First ceil(f * n) dwell records of each user train, the rest test.

    ``mode="random"`` instead draws the training subset uniformly per user
    (kept in time order) for sensitivity runs. Users with fewer than two
    records are excluded and listed.
    """
    if not 0 < train_fraction <= 1:
        raise DomainError("train_fraction must be in (0, 1]")
    if mode not in ("chronological", "random"):
        raise DomainError(f"unknown split mode {mode!r}")
    rng = np.random.default_rng(seed)
    train, test, excluded = {}, {}, []
    for user in sorted(records):
        recs = tuple(records[user])
        if len(recs) < 2:
            excluded.append(user)
            continue
        k = n_train_records(len(recs), train_fraction)
        if mode == "chronological":
            train[user], test[user] = recs[:k], recs[k:]
        else:
            chosen = np.zeros(len(recs), dtype=bool)
            chosen[rng.choice(len(recs), size=k, replace=False)] = True
            train[user] = tuple(r for r, c in zip(recs, chosen) if c)
            test[user] = tuple(r for r, c in zip(recs, chosen) if not c)
    return Split(train, test, excluded, train_fraction, mode)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricReport:
    task: str
    n: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    classes: list
    per_class: dict
    confusion: np.ndarray
    correct: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "n": self.n,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_class": {
                _label_str(c): {"precision": m.precision, "recall": m.recall, "f1": m.f1, "support": m.support}
                for c, m in self.per_class.items()
            },
        }

    def confusion_long(self) -> list[tuple[str, str, int]]:
        """Rows (true, predicted, count) for plotting; zero cells omitted."""
        out = []
        for i, t in enumerate(self.classes):
            for j, p in enumerate(self.classes):
                if self.confusion[i, j]:
                    out.append((_label_str(t), _label_str(p), int(self.confusion[i, j])))
        return out


def _label_str(label) -> str:
    if isinstance(label, tuple):
        return "|".join(_label_str(x) for x in label)
    if isinstance(label, EngagementLevel):
        return label.name.lower()
    return str(label)


def _sort_key(label):
    return (type(label).__name__, repr(label))


def score(predictions: Sequence[Hashable], labels: Sequence[Hashable], task: str = "app") -> MetricReport:
    """Accuracy and support-weighted precision, recall and F1.

    For ``task="joint"`` each item is an ``(app, level)`` pair and counts as
    correct only when both parts match. Per-class values with an empty
    denominator are 0.
    """
    if task not in TASKS:
        raise DomainError(f"unknown task {task!r}")
    preds, labs = list(predictions), list(labels)
    if len(preds) != len(labs):
        raise DomainError(f"{len(preds)} predictions for {len(labs)} labels")
    if not labs:
        raise DomainError("cannot score an empty prediction set")
    if task == "joint":
        preds = [tuple(p) for p in preds]
        labs = [tuple(t) for t in labs]
        if any(len(p) != 2 for p in preds + labs):
            raise DomainError("joint items must be (app, level) pairs")
    classes = sorted(set(labs) | set(preds), key=_sort_key)
    index = {c: i for i, c in enumerate(classes)}
    k = len(classes)
    cm = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(labs, preds):
        cm[index[t], index[p]] += 1
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(predicted > 0, tp / predicted, 0.0)
        rec = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    total = support.sum()
    correct = np.array([t == p for t, p in zip(labs, preds)])
    per_class = {c: ClassMetrics(float(prec[i]), float(rec[i]), float(f1[i]), int(support[i]))
                 for i, c in enumerate(classes)}
    return MetricReport(
        task=task,
        n=len(labs),
        accuracy=float(correct.mean()),
        precision=float(np.dot(support, prec) / total),
        recall=float(np.dot(support, rec) / total),
        f1=float(np.dot(support, f1) / total),
        classes=classes,
        per_class=per_class,
        confusion=cm,
        correct=correct,
    )


def joint_correct(app_pred, app_true, level_pred, level_true) -> np.ndarray:
    a = np.asarray(app_pred, dtype=object) == np.asarray(app_true, dtype=object)
    return a & (np.asarray(level_pred) == np.asarray(level_true))


@dataclass
class AdjacencyStats:
    level: str
    errors: int
    adjacent: int
    far: int

    @property
    def adjacent_fraction(self) -> float:
        return self.adjacent / self.errors if self.errors else float("nan")


def confusion_level(report: MetricReport) -> dict[str, AdjacencyStats]:
    """For each true level, how many errors land on a neighbouring level vs two levels away."""
    if report.task != "level":
        raise DomainError("adjacency statistics need a level-task report")
    idx = {int(c): i for i, c in enumerate(report.classes)}
    out = {}
    for lvl in EngagementLevel:
        adjacent = far = 0
        if int(lvl) in idx:
            row = report.confusion[idx[int(lvl)]]
            for other in EngagementLevel:
                if other == lvl or int(other) not in idx:
                    continue
                n = int(row[idx[int(other)]])
                if abs(int(other) - int(lvl)) == 1:
                    adjacent += n
                else:
                    far += n
        out[lvl.name.lower()] = AdjacencyStats(lvl.name.lower(), adjacent + far, adjacent, far)
    return out


def overall_adjacency(stats: Mapping[str, AdjacencyStats]) -> float:
    errors = sum(s.errors for s in stats.values())
    return sum(s.adjacent for s in stats.values()) / errors if errors else float("nan")


CASE_TAGS = ("unchanged", "corrected", "corrupted", "changed-still-wrong")


@dataclass
class AttributionTable:
    tags: list[str]
    by_category: dict  # true category -> {support, first_wrong, corrected, corrupted, correction_rate, net_rate}

    @property
    def n_changed(self) -> int:
        return sum(t != "unchanged" for t in self.tags)

    def rate(self, categories: Sequence) -> tuple[float, float]:
        """Pooled (correction rate, net rate) over a group of true categories."""
        rows = [self.by_category[c] for c in categories if c in self.by_category]
        wrong = sum(r["first_wrong"] for r in rows)
        support = sum(r["support"] for r in rows)
        corrected = sum(r["corrected"] for r in rows)
        corrupted = sum(r["corrupted"] for r in rows)
        return (corrected / wrong if wrong else 0.0, (corrected - corrupted) / support if support else 0.0)


def error_attribution(first: Sequence, final: Sequence, truth: Sequence) -> AttributionTable:
    """Tag every item by whether the final strategy changed the first learner's category and how.

    ``correction_rate`` is corrected items over items the first learner got
    wrong; ``net_rate`` is (corrected - corrupted) over the category's support.
    """
    if not (len(first) == len(final) == len(truth)):
        raise DomainError("error attribution needs predictions on the same test set")
    tags = []
    stats: dict = {}
    for a, b, t in zip(first, final, truth):
        if a == b:
            tag = "unchanged"
        elif b == t:
            tag = "corrected"
        elif a == t:
            tag = "corrupted"
        else:
            tag = "changed-still-wrong"
        tags.append(tag)
        s = stats.setdefault(t, {"support": 0, "first_wrong": 0, "corrected": 0, "corrupted": 0})
        s["support"] += 1
        s["first_wrong"] += int(a != t)
        s["corrected"] += int(tag == "corrected")
        s["corrupted"] += int(tag == "corrupted")
    for s in stats.values():
        s["correction_rate"] = s["corrected"] / s["first_wrong"] if s["first_wrong"] else 0.0
        s["net_rate"] = (s["corrected"] - s["corrupted"]) / s["support"]
    return AttributionTable(tags, dict(sorted(stats.items(), key=lambda kv: _sort_key(kv[0]))))


def per_user_accuracy(correct: Sequence[bool], users: Sequence[str]) -> dict[str, float]:
    sums: dict[str, list[int]] = {}
    for c, u in zip(correct, users):
        s = sums.setdefault(u, [0, 0])
        s[0] += int(c)
        s[1] += 1
    return {u: s[0] / s[1] for u, s in sorted(sums.items())}


def paired_ttest(a: Mapping[str, float], b: Mapping[str, float]) -> tuple[float, float]:
    """Two-tailed paired t-test over users present in both samples."""
    from scipy import stats

    users = sorted(set(a) & set(b))
    if len(users) < 2:
        return float("nan"), float("nan")
    x = np.array([a[u] for u in users])
    y = np.array([b[u] for u in users])
    if np.allclose(x, y):
        return 0.0, 1.0
    res = stats.ttest_rel(x, y)
    return float(res.statistic), float(res.pvalue)


def write_report(report: MetricReport, path_prefix: str) -> None:
    with open(f"{path_prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(f"{path_prefix}_confusion.csv", "w", encoding="utf-8") as fh:
        fh.write("true,predicted,count\n")
        for t, p, n in report.confusion_long():
            fh.write(f"{t},{p},{n}\n")
