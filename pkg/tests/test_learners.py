import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from appengage.learners import (
    Learner,
    LogisticRegression,
    ModelError,
    ResidualRegressor,
    SchemaMismatch,
    fit_residual,
    gradient_check,
    logreg_loss_grad,
    mdi_importance,
    model_from_json,
    predict_proba,
    predict_residual,
    softmax,
    standardized_coefficients,
    train,
)
from appengage.learners.base import Standardizer

GOLDEN = Path(__file__).parent / "golden"
KINDS = ("logreg", "random_forest", "knn", "linear_svm")
FAST = {"random_forest": {"n_trees": 15, "max_depth": 6}, "knn": {"k": 5}}


def blobs(seed=0, n=150, d=4, k=3, spread=1.0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 3, (k, d))
    y = rng.integers(0, k, n)
    return centers[y] + rng.normal(0, spread, (n, d)), y


def learner(kind, **extra):
    return Learner(kind, {**FAST.get(kind, {}), **extra})


def _point(rng, n=30, d=10, k=4):
    X = rng.normal(size=(n, d))
    Y = np.eye(k)[rng.integers(0, k, n)]
    return rng.normal(size=(d, k)), rng.normal(size=k), X, Y


def test_analytic_gradient_matches_differences_on_100_points():
    rng = np.random.default_rng(0)
    worst = max(gradient_check(logreg_loss_grad, *_point(rng), lam=0.1) for _ in range(100))
    assert worst < 1e-4


def test_zero_data_gives_zero_gradient():
    W, b = np.zeros((3, 2)), np.zeros(2)
    loss, dW, db = logreg_loss_grad(W, b, np.zeros((0, 3)), np.zeros((0, 2)), 0.5)
    assert loss == 0 and not dW.any() and not db.any()
    assert gradient_check(logreg_loss_grad, W, b, np.zeros((0, 3)), np.zeros((0, 2)), 0.5) == 0.0


def test_l2_term_alone():
    rng = np.random.default_rng(1)
    W, b = rng.normal(size=(5, 3)), np.zeros(3)
    lam = 0.3
    _, dW, _ = logreg_loss_grad(W, b, np.zeros((0, 5)), np.zeros((0, 3)), lam)
    assert np.allclose(dW, 2 * lam * W)
    assert gradient_check(logreg_loss_grad, W, b, np.zeros((0, 5)), np.zeros((0, 3)), lam) < 1e-8


def test_softmax_of_zeros_is_uniform():
    assert np.allclose(softmax(np.zeros((2, 4))), 0.25)
    m = LogisticRegression(np.zeros((3, 4)), np.zeros(4), Standardizer.identity(3), np.arange(4))
    assert np.allclose(m.predict_proba(np.ones((5, 3))), 0.25)


@pytest.mark.parametrize("kind", KINDS)
def test_proba_normalized_and_deterministic(kind):
    X, y = blobs()
    a = train(learner(kind), X, y, seed=3)
    b = train(learner(kind), X, y, seed=3)
    Xq = np.random.default_rng(9).normal(0, 4, (200, X.shape[1]))
    P = predict_proba(a, Xq)
    assert P.shape == (200, 3)
    assert np.all(P >= 0)
    assert np.abs(P.sum(axis=1) - 1).max() < 1e-9
    assert P.tobytes() == predict_proba(b, Xq).tobytes()
    assert a.to_json() == b.to_json()
    assert np.array_equal(a.predict(Xq), a.classes[np.argmax(P, axis=1)])


@pytest.mark.parametrize("kind", KINDS)
def test_row_permutation_invariance(kind):
    X, y = blobs(1)
    perm = np.random.default_rng(0).permutation(len(y))
    a = predict_proba(train(learner(kind), X, y, seed=2), X)
    b = predict_proba(train(learner(kind), X[perm], y[perm], seed=2), X)
    assert np.abs(a - b).max() < 1e-6


@pytest.mark.parametrize("kind", KINDS)
def test_json_round_trip(kind):
    X, y = blobs(2)
    m = train(learner(kind), X, y, seed=0, schema_digest="abc")
    again = model_from_json(m.to_json())
    assert type(again) is type(m) and again.schema_digest == "abc"
    assert predict_proba(again, X).tobytes() == predict_proba(m, X).tobytes()


def test_schema_digest_mismatch_rejected():
    X, y = blobs()
    m = train(learner("logreg"), X, y, schema_digest="abc")
    with pytest.raises(SchemaMismatch):
        m.predict_proba(X, schema_digest="xyz")
    with pytest.raises(SchemaMismatch):
        m.predict_proba(X[:, :2])


def test_bad_training_inputs():
    X, y = blobs()
    with pytest.raises(ModelError):
        train(learner("logreg"), X, np.zeros(len(y)))
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ModelError):
        train(learner("knn"), bad, y)
    with pytest.raises(ModelError):
        Learner("lstm")


def test_separable_toy_set():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [3.0, 0.0], [3.0, 1.0]])
    y = np.array([0, 0, 1, 1])
    m = train(Learner("logreg", {"epochs": 200, "batch_size": 4}), X, y)
    assert (m.predict(X) == y).all()


def test_knn_one_neighbour_reproduces_labels():
    X, y = blobs(3, spread=2.0)
    m = train(Learner("knn", {"k": 1}), X, y)
    assert (m.predict(X) == y).all()


def test_forest_unanimous_vote():
    X = np.repeat([[0.0], [10.0]], 20, axis=0)
    y = np.repeat(["a", "b"], 20)
    m = train(Learner("random_forest", {"n_trees": 10}), X, y, seed=0)
    assert predict_proba(m, [[0.0], [10.0]]).tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_logreg_matches_reference_on_blobs():
    gold = json.loads((GOLDEN / "logreg_blobs.json").read_text())
    g = gold["generator"]
    rng = np.random.default_rng(g["seed"])
    y = np.repeat([0, 1, 2], g["sizes"])
    X = np.asarray(g["centers"])[y] + rng.normal(0, g["std"], (len(y), 2))
    acc = float((train(Learner("logreg"), X, y, seed=0).predict(X) == y).mean())
    assert abs(acc - gold["train_accuracy"]) <= 0.05


# -- importance ------------------------------------------------------------------

def test_stumps_put_all_importance_on_the_split_feature():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 6))
    X[:, 3] = rng.integers(0, 2, 200)
    y = X[:, 3].astype(int)
    m = train(Learner("random_forest", {"n_trees": 20, "max_depth": 1, "max_features": "all", "bootstrap": False}), X, y)
    imp = mdi_importance(m)
    assert imp[3] > 0 and np.count_nonzero(imp) == 1
    # a pure split of the root removes its whole Gini impurity
    p = y.mean()
    assert imp[3] == pytest.approx(1 - p ** 2 - (1 - p) ** 2, abs=1e-12)


def test_mdi_is_nonnegative_and_blocks_sum():
    X, y = blobs(4, d=6)
    m = train(learner("random_forest"), X, y)
    imp = mdi_importance(m)
    assert np.all(imp >= 0)
    names = ["a", "a", "b", "b", "b", "c"]
    blocks = mdi_importance(m, names)
    assert sum(blocks.values()) == pytest.approx(imp.sum(), abs=1e-12)
    assert blocks["a"] == pytest.approx(imp[:2].sum(), abs=1e-12)
    with pytest.raises(ModelError):
        mdi_importance(train(learner("knn"), X, y))


def test_planted_hour_signal_ranks_first():
    rng = np.random.default_rng(5)
    n = 600
    hour = rng.integers(0, 24, n)
    X = np.hstack([np.eye(24)[hour], rng.normal(size=(n, 4)), rng.integers(0, 2, (n, 6))])
    y = hour // 8
    names = ["hour"] * 24 + ["noise"] * 4 + ["flags"] * 6
    m = train(Learner("random_forest", {"n_trees": 30, "max_depth": 8, "max_features": "sqrt"}), X, y)
    blocks = mdi_importance(m, names)
    assert max(blocks, key=blocks.get) == "hour"


def test_standardized_coefficient_algebra():
    X = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    X = np.hstack([X, np.array([[0.5], [-0.5], [0.5], [-0.5]]), np.full((4, 1), 3.0)])  # std 0.5, then constant
    W = np.array([[0.2, -0.2], [0.1, -0.1], [1.5, -1.5], [4.0, -4.0]])
    m = LogisticRegression(W, np.zeros(2), Standardizer.identity(4), np.array([0, 1]))
    rep = standardized_coefficients(m, X, numeric_mask=[False, False, True, True], block_names=["a", "a", "s", "k"])
    assert rep.weights[2].tolist() == [1.5, -1.5]  # w * (2 * 0.5)
    assert rep.weights[:2].tolist() == W[:2].tolist()
    assert rep.weights[3].tolist() == [0.0, 0.0] and rep.zero_variance.tolist() == [3]
    assert rep.ranking()[0][0] == "s"


def test_standardized_coefficients_rank_planted_signal():
    rng = np.random.default_rng(8)
    n = 800
    signal = rng.poisson(3, n).astype(float)
    X = np.hstack([signal[:, None], rng.normal(size=(n, 5)), rng.integers(0, 2, (n, 4))])
    y = (signal > 3).astype(int)
    m = train(Learner("logreg", {"epochs": 60}), X, y)
    rep = standardized_coefficients(m, X, block_names=["history"] + ["noise"] * 5 + ["flags"] * 4)
    assert rep.ranking()[0][0] == "history"
    with pytest.raises(ModelError):
        standardized_coefficients(train(learner("knn"), X, y), X)


# -- residual regressor ----------------------------------------------------------

def test_zero_residuals_predict_zero():
    X = np.random.default_rng(0).normal(size=(50, 4))
    for kind in ("ridge", "forest"):
        reg = fit_residual(X, np.zeros((50, 7)), kind=kind, n_trees=5) if kind == "forest" else \
            fit_residual(X, np.zeros((50, 7)))
        assert np.abs(predict_residual(reg, X)).max() < 1e-12


def test_single_sample_interpolation():
    x = np.array([[1.0, -2.0, 0.5]])
    r = np.array([[1.0, 0.0, -1.0, 0.0, 1.0]])
    for lam in (1e-3, 1e-6, 0.0):
        assert np.allclose(fit_residual(x, r, lam=lam).predict(x), r, atol=1e-9)


def test_linear_ground_truth_recovered():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(400, 6))
    W = rng.uniform(-0.1, 0.1, (6, 9))
    R = X @ W + 0.05
    reg = fit_residual(X, R, lam=1e-6)
    Xt = rng.normal(size=(100, 6))
    rmse = np.sqrt(np.mean((reg.predict(Xt) - (Xt @ W + 0.05)) ** 2))
    assert rmse < 1e-3
    assert reg.n_outputs == 9


def test_residual_dimension_errors_and_round_trip():
    X = np.random.default_rng(2).normal(size=(40, 3))
    R = np.random.default_rng(3).uniform(-1, 1, (40, 5))
    with pytest.raises(ModelError):
        fit_residual(X, R[:10])
    for reg in (fit_residual(X, R), fit_residual(X, R, kind="forest", n_trees=4, min_samples_leaf=2)):
        with pytest.raises(ModelError):
            reg.predict(X[:, :2])
        again = ResidualRegressor.from_json(reg.to_json())
        assert again.predict(X).tobytes() == reg.predict(X).tobytes()
        assert reg.predict(X).shape == (40, 5)


def test_forest_residual_fits_interaction():
    rng = np.random.default_rng(4)
    X = rng.integers(0, 2, (600, 2)).astype(float)
    R = np.zeros((600, 2))
    R[:, 0] = np.logical_xor(X[:, 0], X[:, 1])
    reg = fit_residual(X, R, kind="forest", n_trees=10, max_depth=3, min_samples_leaf=5, max_features="all")
    ridge = fit_residual(X, R, lam=1e-6)
    assert np.mean((reg.predict(X) - R) ** 2) < 0.01 < np.mean((ridge.predict(X) - R) ** 2)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_logreg_proba_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    W, b, X, _ = _point(rng)
    P = softmax(X @ W * 50 + b)
    assert np.all(np.abs(P.sum(axis=1) - 1) < 1e-9)
