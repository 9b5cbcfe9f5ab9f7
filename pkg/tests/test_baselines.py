from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsnerisk.baselines import (
    KINDS,
    GradientBoostingRisk,
    GridSearchSpec,
    LinearRiskModel,
    LogisticRiskModel,
    RandomForestRisk,
    RegressionTree,
    best_split,
    compare_spaces,
    format_comparison_csv,
    format_comparison_text,
    grid_search,
    make_model,
)
from tsnerisk.neuralnet import MlpSpec, init_mlp


def _sse(v):
    return float(((v - v.mean()) ** 2).sum()) if v.size else 0.0


def _brute_split(X, y, min_leaf):
    best = None
    parent = _sse(y)
    for f in range(X.shape[1]):
        values = np.unique(X[:, f])
        for a, b in zip(values[:-1], values[1:]):
            thr = (a + b) / 2
            left = X[:, f] <= thr
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            sse = _sse(y[left]) + _sse(y[~left])
            if sse < parent - 1e-12 and (best is None or sse < best[2] - 1e-9):
                best = (f, thr, sse)
    return best


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_best_split_matches_brute_force(seed, min_leaf):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, (25, 3)).astype(float)
    y = rng.standard_normal(25)
    got = best_split(X, y, np.arange(3), min_leaf)
    want = _brute_split(X, y, min_leaf)
    if want is None:
        assert got is None
    else:
        assert got is not None
        assert got[2] == pytest.approx(want[2], rel=1e-9, abs=1e-9)


def test_tree_fits_step_function_exactly():
    X = np.arange(20, dtype=float)[:, None]
    y = (X[:, 0] >= 10).astype(float)
    tree = RegressionTree(max_depth=3, min_leaf=1).fit(X, y)
    assert np.array_equal(tree.predict(X), y)
    assert tree.threshold_[0] == 9.5
    assert tree.depth_ == 1


def test_tree_respects_depth_and_leaf_size():
    rng = np.random.default_rng(0)
    X, y = rng.standard_normal((300, 4)), rng.standard_normal(300)
    tree = RegressionTree(max_depth=3, min_leaf=10).fit(X, y)
    assert tree.depth_ <= 3
    leaves = tree.apply(X)
    assert np.bincount(leaves)[np.unique(leaves)].min() >= 10


def test_linear_model_recovers_coefficients():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((200, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 3
    m = LinearRiskModel().fit(X, y)
    assert np.allclose(m.coef_, [1.0, -2.0, 0.5], atol=1e-6)
    p = m.predict(X)
    assert p.min() == 0.0 and p.max() == 1.0


def test_logistic_loss_decreases_and_separates():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((300, 2))
    y = (X[:, 0] + 0.3 * rng.standard_normal(300) > 0).astype(int)
    m = LogisticRiskModel().fit(X, y)
    assert np.all(np.diff(m.loss_history_) <= 1e-12)
    p = m.predict(X)
    assert np.all((0 < p) & (p < 1))
    assert p[y == 1].mean() > p[y == 0].mean()


def test_forest_is_seeded_and_bounded():
    rng = np.random.default_rng(3)
    X, y = rng.standard_normal((150, 5)), rng.integers(0, 2, 150)
    a = RandomForestRisk(n_trees=5, seed=1).fit(X, y).predict(X)
    b = RandomForestRisk(n_trees=5, seed=1).fit(X, y).predict(X)
    c = RandomForestRisk(n_trees=5, seed=2).fit(X, y).predict(X)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert a.min() >= 0 and a.max() <= 1


def test_boosting_train_error_decreases():
    rng = np.random.default_rng(4)
    X = rng.uniform(-2, 2, (200, 2))
    y = np.sin(X[:, 0]) + 0.1 * rng.standard_normal(200)
    m = GradientBoostingRisk(n_trees=20, max_depth=3).fit(X, y)
    assert np.all(np.diff(m.train_mse_) <= 1e-12)
    assert m.train_mse_[-1] < 0.5 * m.train_mse_[0]


def test_constant_output_maps_to_half():
    X = np.random.default_rng(5).standard_normal((20, 2))
    m = GradientBoostingRisk(n_trees=2).fit(X, np.zeros(20))
    assert np.all(m.predict(X) == 0.5)


def test_make_model_registry():
    for kind in KINDS:
        assert make_model(kind).get_params() is not None
    with pytest.raises(ValueError, match="unknown model kind"):
        make_model("svm")


def test_grid_search_enumerates_every_point():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((200, 2))
    y = (X[:, 0] > 0).astype(int)
    spec = GridSearchSpec(grids={"forest": {"n_trees": [2, 3], "max_depth": [2, 3]}})
    best, table = grid_search("forest", X, y, spec)
    assert [row["params"] for row in table] == [
        dict(n_trees=n, max_depth=d) for n, d in product([2, 3], [2, 3])]
    assert best in [row["params"] for row in table]
    assert max(r["auc"] for r in table) == next(r["auc"] for r in table if r["params"] == best)


def test_compare_spaces_tables():
    rng = np.random.default_rng(7)
    x_tr, x_te = rng.standard_normal((150, 14)), rng.standard_normal((60, 14))
    y_tr, y_te = (x_tr[:, 0] > 0.5).astype(int), (x_te[:, 0] > 0.5).astype(int)
    net = init_mlp(MlpSpec((14, 4, 2)), 0)
    tables = compare_spaces(x_tr, y_tr, x_te, y_te, net, kinds=("linear",))
    assert [len(t) for t in tables.values()] == [1, 1]
    assert tables["14d"][0]["auc"] > 0.9
    csv = format_comparison_csv(tables).splitlines()
    assert csv[0] == "model,space,auc,hyperparameters" and len(csv) == 3
    assert "Linear Regression" in format_comparison_text(tables)
