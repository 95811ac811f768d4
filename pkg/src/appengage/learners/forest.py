"""Random forest classifier with Gini splits over pre-binned features.

Trees are grown by a numba kernel. Each feature is cut into at most
``n_bins`` ordered bins (midpoints between distinct values, or quantiles when
there are more distinct values than bins), so a split "bin <= b" is the same
as "x <= cut[b]" on raw inputs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numba as nb
import numpy as np

from .base import ModelError, TrainedModel, canonical_order, check_xy, encode_labels, register

MAX_BINS = 255


def make_cuts(X: np.ndarray, n_bins: int = 32) -> list[np.ndarray]:
    if not 2 <= n_bins <= MAX_BINS:
        raise ModelError(f"n_bins must be in [2, {MAX_BINS}]")
    cuts = []
    for j in range(X.shape[1]):
        u = np.unique(X[:, j])
        if u.size <= n_bins:
            c = (u[:-1] + u[1:]) / 2
        else:
            c = np.unique(np.quantile(X[:, j], np.linspace(0, 1, n_bins + 1)[1:-1]))
        cuts.append(c.astype(float))
    return cuts


def apply_cuts(X: np.ndarray, cuts: list[np.ndarray]) -> np.ndarray:
    out = np.empty(X.shape, dtype=np.uint8)
    for j, c in enumerate(cuts):
        out[:, j] = np.searchsorted(c, X[:, j], side="left")
    return out


@nb.njit(cache=True, nogil=True)
def _splitmix(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, nogil=True)
def _gini(counts, n):
    if n == 0:
        return 0.0
    s = 0.0
    for c in range(counts.shape[0]):
        p = counts[c] / n
        s += p * p
    return 1.0 - s


@nb.njit(cache=True, nogil=True)
def _build_tree(Xb, y, n_bins, samples, n_classes, max_depth, min_leaf, mtry, seed,
                feature, threshold, left, right, counts, impurity_drop):
    """Grow one tree in place; returns the number of nodes used."""
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    d = Xb.shape[1]
    perm = np.arange(d)
    hist = np.zeros((MAX_BINS + 1, n_classes))
    stack_node = np.empty(2 * max_depth + 4, dtype=np.int64)
    stack_start = np.empty_like(stack_node)
    stack_end = np.empty_like(stack_node)
    stack_depth = np.empty_like(stack_node)
    top = 0
    stack_node[0], stack_start[0], stack_end[0], stack_depth[0] = 0, 0, samples.shape[0], 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node, s, e, depth = stack_node[top], stack_start[top], stack_end[top], stack_depth[top]
        n = e - s
        for i in range(s, e):
            counts[node, y[samples[i]]] += 1.0
        feature[node] = -1
        g = _gini(counts[node], n)
        if depth >= max_depth or n < 2 * min_leaf or g <= 1e-12:
            continue
        best_f, best_b, best_child = -1, -1, g
        # Partial Fisher-Yates draw of mtry candidate features.
        for k in range(mtry):
            r = k + np.int64(_splitmix(state) % np.uint64(d - k))
            perm[k], perm[r] = perm[r], perm[k]
            f = perm[k]
            nbf = n_bins[f]
            if nbf < 2:
                continue
            hist[:nbf, :] = 0.0
            for i in range(s, e):
                hist[Xb[samples[i], f], y[samples[i]]] += 1.0
            left_counts = np.zeros(n_classes)
            nl = 0.0
            for b in range(nbf - 1):
                for c in range(n_classes):
                    left_counts[c] += hist[b, c]
                    nl += hist[b, c]
                nr = n - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                gl = _gini(left_counts, nl)
                right_c = counts[node] - left_counts
                gr = _gini(right_c, nr)
                child = (nl * gl + nr * gr) / n
                if child < best_child - 1e-12:
                    best_child, best_f, best_b = child, f, b
        if best_f < 0:
            continue
        # Partition samples[s:e] so bins <= best_b come first.
        i, j = s, e - 1
        while i <= j:
            if Xb[samples[i], best_f] <= best_b:
                i += 1
            else:
                samples[i], samples[j] = samples[j], samples[i]
                j -= 1
        feature[node] = best_f
        threshold[node] = best_b
        impurity_drop[node] = n * (g - best_child)
        lc, rc = n_nodes, n_nodes + 1
        n_nodes += 2
        left[node], right[node] = lc, rc
        stack_node[top], stack_start[top], stack_end[top], stack_depth[top] = rc, i, e, depth + 1
        top += 1
        stack_node[top], stack_start[top], stack_end[top], stack_depth[top] = lc, s, i, depth + 1
        top += 1
    return n_nodes


@nb.njit(cache=True, nogil=True)
def _vote(Xb, offsets, feature, threshold, left, right, leaf_class, n_classes):
    n = Xb.shape[0]
    votes = np.zeros((n, n_classes))
    for t in range(offsets.shape[0] - 1):
        base = offsets[t]
        for i in range(n):
            node = 0
            while feature[base + node] >= 0:
                if Xb[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            votes[i, leaf_class[base + node]] += 1.0
    return votes


def _resolve_mtry(max_features, d: int) -> int:
    if max_features in (None, "all"):
        return d
    if max_features == "sqrt":
        return max(1, int(math.sqrt(d)))
    if max_features == "log2":
        return max(1, int(math.log2(d)))
    if isinstance(max_features, float) and 0 < max_features <= 1:
        return max(1, int(max_features * d))
    if isinstance(max_features, int) and max_features >= 1:
        return min(d, max_features)
    raise ModelError(f"bad max_features {max_features!r}")


@register("random_forest")
class RandomForest(TrainedModel):
    def __init__(self, cuts, trees, classes, n_features, importances, schema_digest=None, hyperparams=None):
        super().__init__(classes, schema_digest, hyperparams)
        self.cuts = [np.asarray(c, dtype=float) for c in cuts]
        self.trees = trees  # dict of concatenated node arrays plus offsets
        self._n_features = int(n_features)
        self.importances = np.asarray(importances, dtype=float)

    @property
    def n_features(self) -> int:
        return self._n_features

    @property
    def n_trees(self) -> int:
        return self.trees["offsets"].size - 1

    @classmethod
    def fit(cls, X, y, seed=0, schema_digest=None, n_trees=100, max_depth=12, min_samples_leaf=1,
            max_features="sqrt", n_bins=32, bootstrap=True, threads=1):
        X, y = check_xy(X, y)
        order = canonical_order(X, y)
        X, y = X[order], np.asarray(y)[order]
        classes, codes = encode_labels(y)
        k = classes.size
        cuts = make_cuts(X, n_bins)
        Xb = apply_cuts(X, cuts)
        bins_per = np.array([c.size + 1 for c in cuts], dtype=np.int64)
        n, d = X.shape
        mtry = _resolve_mtry(max_features, d)
        cap = min(2 * n + 1, 2 ** (max_depth + 1) - 1)
        children = np.random.SeedSequence(seed).spawn(n_trees)

        def grow(t):
            rng = np.random.default_rng(children[t])
            samples = rng.integers(0, n, n) if bootstrap else np.arange(n)
            tree_seed = int(rng.integers(0, 2 ** 63))
            feature = np.full(cap, -1, dtype=np.int32)
            threshold = np.zeros(cap, dtype=np.int32)
            left = np.full(cap, -1, dtype=np.int32)
            right = np.full(cap, -1, dtype=np.int32)
            counts = np.zeros((cap, k))
            drop = np.zeros(cap)
            used = _build_tree(Xb, codes, bins_per, samples.astype(np.int64), k, max_depth, min_samples_leaf,
                               mtry, tree_seed, feature, threshold, left, right, counts, drop)
            imp = np.zeros(d)
            split = feature[:used] >= 0
            np.add.at(imp, feature[:used][split], drop[:used][split] / n)
            return (feature[:used], threshold[:used], left[:used], right[:used],
                    np.argmax(counts[:used], axis=1).astype(np.int32), counts[:used], imp)

        if threads and threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                grown = list(pool.map(grow, range(n_trees)))
        else:
            grown = [grow(t) for t in range(n_trees)]
        sizes = [g[0].size for g in grown]
        trees = {
            "offsets": np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
            "feature": np.concatenate([g[0] for g in grown]),
            "threshold": np.concatenate([g[1] for g in grown]),
            "left": np.concatenate([g[2] for g in grown]),
            "right": np.concatenate([g[3] for g in grown]),
            "leaf_class": np.concatenate([g[4] for g in grown]),
            "leaf_counts": np.concatenate([g[5] for g in grown]),
        }
        importances = np.mean([g[6] for g in grown], axis=0)
        hp = dict(n_trees=n_trees, max_depth=max_depth, min_samples_leaf=min_samples_leaf,
                  max_features=max_features, n_bins=n_bins, bootstrap=bootstrap)
        return cls(cuts, trees, classes, d, importances, schema_digest, hp)

    def _proba(self, X):
        Xb = apply_cuts(X, self.cuts)
        t = self.trees
        votes = _vote(Xb, t["offsets"], t["feature"], t["threshold"], t["left"], t["right"],
                      t["leaf_class"], self.classes.size)
        return votes / self.n_trees

    def get_params(self):
        flat = np.concatenate(self.cuts) if self.cuts else np.zeros(0)
        cut_offsets = np.concatenate([[0], np.cumsum([c.size for c in self.cuts])]).astype(np.int64)
        return {"cuts": flat, "cut_offsets": cut_offsets, "trees": self.trees,
                "n_features": self._n_features, "importances": self.importances}

    @classmethod
    def from_params(cls, p, classes, schema_digest, hyperparams):
        o = p["cut_offsets"]
        cuts = [p["cuts"][o[i]:o[i + 1]] for i in range(o.size - 1)]
        return cls(cuts, p["trees"], classes, p["n_features"], p["importances"], schema_digest, hyperparams)


def mdi_importance(model: TrainedModel, block_names=None):
    """Mean impurity decrease per feature, or per named block when ``block_names`` is given.

    Each split contributes (node samples / root samples) times its Gini drop;
    contributions are summed per tree and averaged over trees, unnormalized.
    """
    if not isinstance(model, RandomForest):
        raise ModelError("MDI importance needs a random forest model")
    imp = model.importances.copy()
    if block_names is None:
        return imp
    out: dict[str, float] = {}
    for name, v in zip(block_names, imp):
        out[name] = out.get(name, 0.0) + float(v)
    return out


@nb.njit(cache=True, nogil=True)
def _build_regression_tree(Xb, Y, n_bins, samples, max_depth, min_leaf, mtry, seed,
                           feature, threshold, left, right, values):
    """Multi-output variance-reduction tree; node means go to ``values``."""
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    d = Xb.shape[1]
    m = Y.shape[1]
    perm = np.arange(d)
    hsum = np.zeros((MAX_BINS + 1, m))
    hcnt = np.zeros(MAX_BINS + 1)
    stack_node = np.empty(2 * max_depth + 4, dtype=np.int64)
    stack_start = np.empty_like(stack_node)
    stack_end = np.empty_like(stack_node)
    stack_depth = np.empty_like(stack_node)
    stack_node[0], stack_start[0], stack_end[0], stack_depth[0] = 0, 0, samples.shape[0], 0
    top = 1
    n_nodes = 1
    total = np.zeros(m)
    while top > 0:
        top -= 1
        node, s, e, depth = stack_node[top], stack_start[top], stack_end[top], stack_depth[top]
        n = e - s
        total[:] = 0.0
        for i in range(s, e):
            for o in range(m):
                total[o] += Y[samples[i], o]
        for o in range(m):
            values[node, o] = total[o] / n
        feature[node] = -1
        if depth >= max_depth or n < 2 * min_leaf:
            continue
        base = 0.0
        for o in range(m):
            base += total[o] * total[o] / n
        best_f, best_b, best_score = -1, -1, base + 1e-12
        for k in range(mtry):
            r = k + np.int64(_splitmix(state) % np.uint64(d - k))
            perm[k], perm[r] = perm[r], perm[k]
            f = perm[k]
            nbf = n_bins[f]
            if nbf < 2:
                continue
            hsum[:nbf, :] = 0.0
            hcnt[:nbf] = 0.0
            for i in range(s, e):
                b = Xb[samples[i], f]
                hcnt[b] += 1.0
                for o in range(m):
                    hsum[b, o] += Y[samples[i], o]
            lsum = np.zeros(m)
            nl = 0.0
            for b in range(nbf - 1):
                nl += hcnt[b]
                for o in range(m):
                    lsum[o] += hsum[b, o]
                nr = n - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                sc = 0.0
                for o in range(m):
                    rs = total[o] - lsum[o]
                    sc += lsum[o] * lsum[o] / nl + rs * rs / nr
                if sc > best_score:
                    best_score, best_f, best_b = sc, f, b
        if best_f < 0:
            continue
        i, j = s, e - 1
        while i <= j:
            if Xb[samples[i], best_f] <= best_b:
                i += 1
            else:
                samples[i], samples[j] = samples[j], samples[i]
                j -= 1
        feature[node] = best_f
        threshold[node] = best_b
        lc, rc = n_nodes, n_nodes + 1
        n_nodes += 2
        left[node], right[node] = lc, rc
        stack_node[top], stack_start[top], stack_end[top], stack_depth[top] = rc, i, e, depth + 1
        top += 1
        stack_node[top], stack_start[top], stack_end[top], stack_depth[top] = lc, s, i, depth + 1
        top += 1
    return n_nodes


@nb.njit(cache=True, nogil=True)
def _regress(Xb, offsets, feature, threshold, left, right, values):
    n = Xb.shape[0]
    out = np.zeros((n, values.shape[1]))
    n_trees = offsets.shape[0] - 1
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = 0
            while feature[base + node] >= 0:
                if Xb[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i] += values[base + node]
    return out / n_trees


def fit_forest_arrays(X, Y, seed=0, n_trees=50, max_depth=8, min_samples_leaf=20, max_features=0.33,
                      n_bins=32, bootstrap=True):
    """Grow a multi-output regression forest; returns (cuts, tree arrays)."""
    X = np.asarray(X, dtype=float)
    Y = np.ascontiguousarray(Y, dtype=float)
    cuts = make_cuts(X, n_bins)
    Xb = apply_cuts(X, cuts)
    bins_per = np.array([c.size + 1 for c in cuts], dtype=np.int64)
    n, d = X.shape
    mtry = _resolve_mtry(max_features, d)
    cap = min(2 * n + 1, 2 ** (max_depth + 1) - 1)
    grown = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        samples = rng.integers(0, n, n) if bootstrap else np.arange(n)
        feature = np.full(cap, -1, dtype=np.int32)
        threshold = np.zeros(cap, dtype=np.int32)
        left = np.full(cap, -1, dtype=np.int32)
        right = np.full(cap, -1, dtype=np.int32)
        values = np.zeros((cap, Y.shape[1]))
        used = _build_regression_tree(Xb, Y, bins_per, samples.astype(np.int64), max_depth, min_samples_leaf,
                                      mtry, int(rng.integers(0, 2 ** 63)), feature, threshold, left, right, values)
        grown.append((feature[:used], threshold[:used], left[:used], right[:used], values[:used]))
    trees = {
        "offsets": np.concatenate([[0], np.cumsum([g[0].size for g in grown])]).astype(np.int64),
        "feature": np.concatenate([g[0] for g in grown]),
        "threshold": np.concatenate([g[1] for g in grown]),
        "left": np.concatenate([g[2] for g in grown]),
        "right": np.concatenate([g[3] for g in grown]),
        "values": np.concatenate([g[4] for g in grown]),
    }
    return cuts, trees


def predict_forest_arrays(X, cuts, trees) -> np.ndarray:
    Xb = apply_cuts(np.asarray(X, dtype=float), cuts)
    return _regress(Xb, trees["offsets"], trees["feature"], trees["threshold"], trees["left"], trees["right"],
                    trees["values"])
