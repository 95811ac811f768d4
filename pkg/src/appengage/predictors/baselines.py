"""Next-app and (app, level) tuple baselines.

Frequency tables are fitted once on each user's training records. Baselines
that look at recent history (MRU, BN, tuple-MRU) read the records just before
the target in the user's full sequence, the same history the learned models see.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..core import DwellRecord
from ..features import InstanceMatrix
from ..learners import Learner, train

Sequences = Mapping[str, tuple[Sequence[DwellRecord], Sequence[int]]]  # user -> (records, levels)


def _top(counter: Mapping, tiebreak: Mapping | None = None):
    if not counter:
        return None
    tiebreak = tiebreak or {}
    return min(counter, key=lambda k: (-counter[k], -tiebreak.get(k, 0), str(k)))


@dataclass
class FrequencyTables:
    """Per-user training statistics shared by the baselines."""

    app_counts: dict[str, Counter]
    tuple_counts: dict[str, Counter]
    hour_counts: dict[str, dict[int, Counter]]
    first_order: dict[str, dict[str, Counter]]
    second_order: dict[str, dict[str, Counter]]
    tuple_transitions: dict[str, dict[tuple, Counter]]
    global_apps: Counter
    global_tuples: Counter

    @classmethod
    def fit(cls, train: Sequences) -> "FrequencyTables":
        app_counts, tuple_counts, hour_counts = {}, {}, {}
        first, second, ttrans = {}, {}, {}
        g_apps, g_tuples = Counter(), Counter()
        for user in sorted(train):
            recs, levels = train[user]
            apps = [r.app_id for r in recs]
            tuples = list(zip(apps, (int(l) for l in levels)))
            app_counts[user] = Counter(apps)
            tuple_counts[user] = Counter(tuples)
            hc: dict[int, Counter] = defaultdict(Counter)
            for r in recs:
                hc[r.hour_of_day][r.app_id] += 1
            hour_counts[user] = dict(hc)
            f1: dict[str, Counter] = defaultdict(Counter)
            f2: dict[str, Counter] = defaultdict(Counter)
            tt: dict[tuple, Counter] = defaultdict(Counter)
            for i in range(1, len(apps)):
                f1[apps[i - 1]][apps[i]] += 1
                tt[tuples[i - 1]][tuples[i]] += 1
                if i >= 2:
                    f2[apps[i - 2]][apps[i]] += 1
            first[user], second[user], ttrans[user] = dict(f1), dict(f2), dict(tt)
            g_apps.update(apps)
            g_tuples.update(tuples)
        return cls(app_counts, tuple_counts, hour_counts, first, second, ttrans, g_apps, g_tuples)

    def mfu(self, user: str) -> str:
        return _top(self.app_counts.get(user) or self.global_apps)

    def tuple_mfu(self, user: str) -> tuple[str, int]:
        return _top(self.tuple_counts.get(user) or self.global_tuples)


class Baseline:
    name = "baseline"
    joint = False

    def __init__(self, tables: FrequencyTables):
        self.t = tables

    def predict(self, user: str, records: Sequence[DwellRecord], levels: Sequence[int], k: int):
        raise NotImplementedError


class MFU(Baseline):
    name = "MFU"

    def predict(self, user, records, levels, k):
        return self.t.mfu(user)


class MRU(Baseline):
    """The most recently used app, i.e. the record right before the target."""

    name = "MRU"

    def predict(self, user, records, levels, k):
        return records[k - 1].app_id if k > 0 else self.t.mfu(user)


class CPD(Baseline):
    """Fixed 24-slot daily cycle: argmax over P(app | hour slot) with Laplace smoothing."""

    name = "CPD"

    def __init__(self, tables, alpha: float = 1.0):
        super().__init__(tables)
        self.alpha = alpha

    def proba(self, user: str, hour: int) -> dict[str, float]:
        vocab = self.t.app_counts.get(user)
        if not vocab:
            return {}
        slot = self.t.hour_counts[user].get(hour, Counter())
        n = sum(slot.values())
        v = len(vocab)
        return {a: (slot.get(a, 0) + self.alpha) / (n + self.alpha * v) for a in vocab}

    def predict(self, user, records, levels, k):
        p = self.proba(user, records[k].hour_of_day)
        return _top(p, self.t.app_counts.get(user)) if p else self.t.mfu(user)


class BN(Baseline):
    """Mixture of first- and second-order last-app transition probabilities, add-one smoothed."""

    name = "BN"

    def __init__(self, tables, weight: float = 0.5):
        super().__init__(tables)
        self.weight = weight

    def scores(self, user: str, prev1: str | None, prev2: str | None) -> dict[str, float]:
        vocab = self.t.app_counts.get(user)
        if not vocab:
            return {}
        v = len(vocab)

        def cond(table, prev):
            row = table.get(user, {}).get(prev, Counter()) if prev is not None else Counter()
            n = sum(row.values())
            return {a: (row.get(a, 0) + 1) / (n + v) for a in vocab}

        p1, p2 = cond(self.t.first_order, prev1), cond(self.t.second_order, prev2)
        return {a: self.weight * p1[a] + (1 - self.weight) * p2[a] for a in vocab}

    def predict(self, user, records, levels, k):
        prev1 = records[k - 1].app_id if k >= 1 else None
        prev2 = records[k - 2].app_id if k >= 2 else None
        s = self.scores(user, prev1, prev2)
        return _top(s, self.t.app_counts.get(user)) if s else self.t.mfu(user)


class TupleMFU(Baseline):
    name = "tuple-MFU"
    joint = True

    def predict(self, user, records, levels, k):
        return self.t.tuple_mfu(user)


class TupleMRU(Baseline):
    """Most likely successor of the last (app, level) tuple; tuple-MFU when the tuple is new."""

    name = "tuple-MRU"
    joint = True

    def predict(self, user, records, levels, k):
        if k == 0:
            return self.t.tuple_mfu(user)
        last = (records[k - 1].app_id, int(levels[k - 1]))
        row = self.t.tuple_transitions.get(user, {}).get(last)
        return _top(row, self.t.tuple_counts.get(user)) if row else self.t.tuple_mfu(user)


BASELINES = {cls.name: cls for cls in (MFU, MRU, CPD, BN, TupleMFU, TupleMRU)}


def run_baselines(tables: FrequencyTables, sequences: Sequences, targets: Sequence[tuple[str, int]],
                  names: Sequence[str] | None = None) -> dict[str, list]:
    """Predictions of each sequence baseline for the (user, index) targets."""
    out = {}
    for name in names or BASELINES:
        b = BASELINES[name](tables)
        out[name] = [b.predict(u, sequences[u][0], sequences[u][1], k) for u, k in targets]
    return out


def context_columns(n_apps: int) -> np.ndarray:
    """Personal-feature columns for weekday, hour, last app and hours since last use."""
    time_and_last = np.arange(0, 31 + n_apps + 1)
    periodic = np.arange(31 + 2 * (n_apps + 1), 31 + 2 * (n_apps + 1) + n_apps)
    return np.concatenate([time_and_last, periodic])


@dataclass
class SVMContext:
    """Per-user linear SVM on (weekday, hour, last app, hours since last use)."""

    models: dict = field(default_factory=dict)
    tables: FrequencyTables | None = None

    @classmethod
    def fit(cls, M: InstanceMatrix, tables: FrequencyTables, learner: Learner = Learner("linear_svm"),
            seed: int = 0) -> "SVMContext":
        models = {}
        by_user: dict[str, list[int]] = defaultdict(list)
        for i, u in enumerate(M.users.tolist()):
            by_user[u].append(i)
        for u in sorted(by_user):
            idx = by_user[u]
            apps = M.apps[idx]
            if np.unique(apps).size < 2:
                continue
            X = np.vstack([M.instances[i].x_personal for i in idx])
            cols = context_columns((X.shape[1] - 31 - 2) // 3)
            models[u] = (cols, train(learner, X[:, cols], apps, seed=seed))
        return cls(models, tables)

    def predict(self, M: InstanceMatrix) -> list[str]:
        out = []
        for inst in M.instances:
            entry = self.models.get(inst.user_id)
            if entry is None:
                out.append(self.tables.mfu(inst.user_id))
            else:
                cols, model = entry
                out.append(str(model.predict(inst.x_personal[cols][None, :])[0]))
        return out
