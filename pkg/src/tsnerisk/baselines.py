"""Comparison models for the claim-risk task, written from scratch.

Every model follows the scikit-learn estimator protocol. Models with an
unbounded output are rescaled to [0, 1] with the min/max of their training
predictions (a constant training prediction maps to 0.5); logistic
regression already answers with probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import split as holdout_split
from .metrics import roc_auc
from .neuralnet import MlpSpec, TrainConfig, forward, init_mlp, train

KINDS = ("linear", "logistic", "mlp", "forest", "boost")
LINEAR_KINDS = ("linear", "logistic")
KIND_LABELS = {
    "linear": "Linear Regression",
    "logistic": "Logistic Regression",
    "mlp": "Neural Network",
    "tree": "Regression Tree",
    "forest": "Random Forest Regressor",
    "boost": "Gradient Boost Regressor",
}


class _MinMaxOutput(RegressorMixin, BaseEstimator):
    """Shared [0, 1] output rescaling for unbounded regressors."""

    def _fit_output_range(self, X):
        raw = self.decision_function(X)
        self.output_min_ = float(raw.min())
        self.output_max_ = float(raw.max())

    def predict(self, X):
        check_is_fitted(self, "output_min_")
        raw = self.decision_function(X)
        span = self.output_max_ - self.output_min_
        if span == 0:
            return np.full(raw.shape, 0.5)
        return np.clip((raw - self.output_min_) / span, 0.0, 1.0)


class LinearRiskModel(_MinMaxOutput):
    kind = "linear"

    def __init__(self, ridge=1e-8):
        self.ridge = ridge

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[0] <= X.shape[1]:
            raise ValueError("ordinary least squares needs more rows than features")
        A = np.column_stack([np.ones(X.shape[0]), X])
        gram = A.T @ A + self.ridge * np.eye(A.shape[1])
        try:
            beta = np.linalg.solve(gram, A.T @ y)
        except np.linalg.LinAlgError:
            raise ValueError("singular Gram matrix in least squares") from None
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:]
        self.n_features_in_ = X.shape[1]
        self._fit_output_range(X)
        return self

    def decision_function(self, X):
        return check_array(X) @ self.coef_ + self.intercept_


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LogisticRiskModel(RegressorMixin, BaseEstimator):
    """Full-batch gradient descent on the mean negative log-likelihood."""

    kind = "logistic"

    def __init__(self, n_iterations=500, learning_rate=0.1):
        self.n_iterations = n_iterations
        self.learning_rate = learning_rate

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("logistic regression needs 0/1 targets")
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        Z = (X - self.mean_) / self.scale_
        w = np.zeros(X.shape[1])
        b = 0.0
        self.loss_history_ = np.empty(self.n_iterations)
        for it in range(self.n_iterations):
            z = Z @ w + b
            p = _sigmoid(z)
            # log(1 + e^z) - y z, evaluated without overflow
            self.loss_history_[it] = float(np.mean(np.logaddexp(0.0, z) - y * z))
            if not np.isfinite(self.loss_history_[it]):
                raise FloatingPointError("logistic regression diverged")
            g = p - y
            w = w - self.learning_rate * (Z.T @ g) / X.shape[0]
            b = b - self.learning_rate * float(g.mean())
        self.coef_ = w
        self.intercept_ = b
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return ((check_array(X) - self.mean_) / self.scale_) @ self.coef_ + self.intercept_

    def predict(self, X):
        return _sigmoid(self.decision_function(X))


@dataclass
class _TreeArrays:
    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)
    depth: list = field(default_factory=list)

    def add_leaf(self, value, depth):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        self.depth.append(depth)
        return len(self.value) - 1


def best_split(X, y, features, min_leaf):
    """Lowest total child SSE over all features and midpoints.

    Returns ``(feature, threshold, sse)`` or ``None`` when no admissible split
    improves on the parent. Ties keep the earliest feature, then the lowest
    threshold.
    """
    n = y.shape[0]
    yc = y - y.mean()
    parent = float(yc @ yc)
    best = None
    best_sse = parent
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = yc[order]
        s1 = np.cumsum(ys)[:-1]
        s2 = np.cumsum(ys * ys)[:-1]
        n_left = np.arange(1, n)
        n_right = n - n_left
        sse = (s2 - s1 * s1 / n_left) + ((s2[-1] + ys[-1] ** 2 - s2)
                                        - (s1[-1] + ys[-1] - s1) ** 2 / n_right)
        ok = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not ok.any():
            continue
        cand = np.flatnonzero(ok)
        i = cand[np.argmin(sse[cand])]
        if sse[i] < best_sse - 1e-12 * max(parent, 1e-300):
            best_sse = float(sse[i])
            best = (int(f), float((xs[i] + xs[i + 1]) / 2.0), best_sse)
    return best


class RegressionTree(RegressorMixin, BaseEstimator):
    """CART regression tree; leaves predict the mean target.

    ``max_features`` of None uses every feature at each split, ``"sqrt"``
    draws ceil(sqrt(p)) of them per split with the tree's own ``seed``.
    """

    kind = "tree"

    def __init__(self, max_depth=5, min_leaf=5, max_features=None, seed=0):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.seed = seed

    def _n_split_features(self, p):
        if self.max_features is None:
            return p
        if self.max_features == "sqrt":
            return math.ceil(math.sqrt(p))
        return min(p, int(self.max_features))

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        y = y.astype(float)
        rng = np.random.default_rng(self.seed)
        p = X.shape[1]
        m = self._n_split_features(p)
        tree = _TreeArrays()
        root = tree.add_leaf(y.mean(), 0)
        stack = [(root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            depth = tree.depth[node]
            if depth >= self.max_depth or idx.size < 2 * self.min_leaf:
                continue
            feats = np.arange(p) if m == p else np.sort(rng.choice(p, size=m, replace=False))
            found = best_split(X[idx], y[idx], feats, self.min_leaf)
            if found is None:
                continue
            f, thr, _ = found
            go_left = X[idx, f] <= thr
            li, ri = idx[go_left], idx[~go_left]
            left = tree.add_leaf(y[li].mean(), depth + 1)
            right = tree.add_leaf(y[ri].mean(), depth + 1)
            tree.feature[node], tree.threshold[node] = f, thr
            tree.left[node], tree.right[node] = left, right
            # right pushed first so the left subtree is expanded (and seeded) first
            stack.append((right, ri))
            stack.append((left, li))
        self.feature_ = np.asarray(tree.feature, dtype=int)
        self.threshold_ = np.asarray(tree.threshold, dtype=float)
        self.children_left_ = np.asarray(tree.left, dtype=int)
        self.children_right_ = np.asarray(tree.right, dtype=int)
        self.value_ = np.asarray(tree.value, dtype=float)
        self.node_depth_ = np.asarray(tree.depth, dtype=int)
        self.n_features_in_ = p
        return self

    @property
    def depth_(self) -> int:
        check_is_fitted(self, "value_")
        return int(self.node_depth_.max())

    def apply(self, X):
        check_is_fitted(self, "value_")
        X = check_array(X)
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        while True:
            internal = self.feature_[node] >= 0
            if not internal.any():
                return node
            r = rows[internal]
            nd = node[internal]
            go_left = X[r, self.feature_[nd]] <= self.threshold_[nd]
            node[r] = np.where(go_left, self.children_left_[nd], self.children_right_[nd])

    def predict(self, X):
        return self.value_[self.apply(X)]


def fit_tree(x, y, max_depth=5, min_leaf=5) -> RegressionTree:
    x = check_array(x)
    if x.shape[0] < 2 * min_leaf:
        raise ValueError("need at least 2 * min_leaf samples")
    return RegressionTree(max_depth=max_depth, min_leaf=min_leaf).fit(x, y)


class RandomForestRisk(_MinMaxOutput):
    kind = "forest"

    def __init__(self, n_trees=10, max_depth=5, min_leaf=5, max_features="sqrt",
                 bootstrap=True, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        n = X.shape[0]
        # seeds are derived up front so tree order never affects any tree
        children = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        self.trees_ = []
        for child in children:
            boot_seed, tree_seed = child.generate_state(2)
            idx = (np.random.default_rng(boot_seed).integers(0, n, n)
                   if self.bootstrap else np.arange(n))
            tree = RegressionTree(self.max_depth, self.min_leaf, self.max_features,
                                  int(tree_seed))
            self.trees_.append(tree.fit(X[idx], y[idx]))
        self.n_features_in_ = X.shape[1]
        self._fit_output_range(X)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X)
        total = np.zeros(X.shape[0])
        for tree in self.trees_:
            total += tree.predict(X)
        return total / len(self.trees_)


class GradientBoostingRisk(_MinMaxOutput):
    """Least-squares boosting of CART trees with shrinkage."""

    kind = "boost"

    def __init__(self, n_trees=15, max_depth=5, shrinkage=0.1, min_leaf=5):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.shrinkage = shrinkage
        self.min_leaf = min_leaf

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        y = y.astype(float)
        self.init_ = float(y.mean())
        f = np.full(y.shape, self.init_)
        self.trees_ = []
        self.train_mse_ = [float(np.mean((y - f) ** 2))]
        for _ in range(self.n_trees):
            tree = RegressionTree(self.max_depth, self.min_leaf).fit(X, y - f)
            f = f + self.shrinkage * tree.predict(X)
            self.trees_.append(tree)
            self.train_mse_.append(float(np.mean((y - f) ** 2)))
        self.n_features_in_ = X.shape[1]
        self._fit_output_range(X)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X)
        f = np.full(X.shape[0], self.init_)
        for tree in self.trees_:
            f = f + self.shrinkage * tree.predict(X)
        return f


class MLPRiskModel(_MinMaxOutput):
    """Single tanh hidden layer, linear output, regressed on the 0/1 claim."""

    kind = "mlp"

    def __init__(self, hidden=10, epochs=200, batch_size=64, learning_rate=0.01,
                 momentum=0.9, seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        cfg = TrainConfig(self.epochs, self.batch_size, self.learning_rate,
                          self.momentum, self.seed)
        spec = MlpSpec((X.shape[1], self.hidden, 1))
        self.network_, self.loss_history_ = train(init_mlp(spec, self.seed), X, y, cfg)
        self.n_features_in_ = X.shape[1]
        self._fit_output_range(X)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        return forward(self.network_, check_array(X))[:, 0]


ESTIMATORS = {
    "linear": LinearRiskModel,
    "logistic": LogisticRiskModel,
    "tree": RegressionTree,
    "forest": RandomForestRisk,
    "boost": GradientBoostingRisk,
    "mlp": MLPRiskModel,
}


def make_model(kind: str, seed: int = 0, **params):
    try:
        cls = ESTIMATORS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(ESTIMATORS)}") from None
    if "seed" in cls().get_params():
        params.setdefault("seed", seed)
    return cls(**params)


def fit_linear(x, y) -> LinearRiskModel:
    return LinearRiskModel().fit(x, y)


def fit_logistic(x, y) -> LogisticRiskModel:
    return LogisticRiskModel().fit(x, y)


def fit_forest(x, y, n_trees=10, max_depth=5, seed=0) -> RandomForestRisk:
    return RandomForestRisk(n_trees=n_trees, max_depth=max_depth, seed=seed).fit(x, y)


def fit_boost(x, y, n_trees=15, max_depth=5, shrinkage=0.1) -> GradientBoostingRisk:
    return GradientBoostingRisk(n_trees=n_trees, max_depth=max_depth,
                                shrinkage=shrinkage).fit(x, y)


def _expand(grid: dict) -> list:
    keys = list(grid)
    return [dict(zip(keys, values)) for values in product(*(grid[k] for k in keys))]


DEFAULT_GRIDS = {
    "linear": {},
    "logistic": {},
    "mlp": {"hidden": [5, 10, 100]},
    "tree": {"max_depth": [3, 5]},
    "forest": {"n_trees": [10, 20], "max_depth": [3, 5]},
    "boost": {"n_trees": [10, 15, 20], "max_depth": [3, 5]},
}


@dataclass
class GridSearchSpec:
    grids: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_GRIDS.items()})
    validation_fraction: float = 0.2
    seed: int = 0

    def points(self, kind: str) -> list:
        pts = _expand(self.grids.get(kind, {}))
        if not pts:
            raise ValueError(f"empty hyperparameter grid for {kind!r}")
        return pts


def grid_search(kind: str, x, y, spec: GridSearchSpec | None = None):
    """Single-holdout search maximizing validation AUC.

    Returns ``(best_params, table)`` with one ``{"params", "auc"}`` row per
    grid point in enumeration order; ties keep the earlier point.
    """
    spec = spec or GridSearchSpec()
    if not 0 < spec.validation_fraction < 1:
        raise ValueError("validation_fraction must lie in (0, 1)")
    x, y = check_X_y(x, y, y_numeric=True)
    parts = holdout_split(x.shape[0], 1.0 - spec.validation_fraction, spec.seed)
    tr, va = parts.train_indices, parts.test_indices
    table = []
    best, best_auc = None, -np.inf
    for params in spec.points(kind):
        model = make_model(kind, spec.seed, **params).fit(x[tr], y[tr])
        auc = roc_auc(model.predict(x[va]), y[va])
        table.append({"params": params, "auc": auc})
        if auc > best_auc:
            best, best_auc = params, auc
    return best, table


def compare_spaces(x_train, y_train, x_test, y_test, nn_tsne, kinds=KINDS,
                   spec: GridSearchSpec | None = None):
    """Tune, refit and test every kind on the 2D map and on the 14D features.

    ``x_train``/``x_test`` are normalized feature matrices; the 2D inputs are
    their images under ``nn_tsne``. Returns ``{"2d": rows, "14d": rows}``
    with rows ``{"model", "space", "auc", "hyperparameters"}``.
    """
    spec = spec or GridSearchSpec()
    spaces = {
        "2d": (forward(nn_tsne, x_train), forward(nn_tsne, x_test)),
        "14d": (np.asarray(x_train, dtype=float), np.asarray(x_test, dtype=float)),
    }
    tables = {}
    for space, (tr, te) in spaces.items():
        rows = []
        for kind in kinds:
            params, _ = grid_search(kind, tr, y_train, spec)
            model = make_model(kind, spec.seed, **params).fit(tr, y_train)
            rows.append({"model": kind, "space": space,
                         "auc": roc_auc(model.predict(te), y_test),
                         "hyperparameters": params})
        tables[space] = rows
    return tables


def format_comparison_csv(tables: dict) -> str:
    lines = ["model,space,auc,hyperparameters"]
    for rows in tables.values():
        for r in rows:
            hp = ";".join(f"{k}={v}" for k, v in r["hyperparameters"].items()) or "none"
            lines.append(f"{r['model']},{r['space']},{r['auc']!r},{hp}")
    return "\n".join(lines) + "\n"


def format_comparison_text(tables: dict) -> str:
    titles = {"2d": "Risk estimation in the 2D embedding space",
              "14d": "Risk estimation in the original 14D feature space"}
    out = []
    for space, rows in tables.items():
        out.append(titles.get(space, space))
        out.append(f"{'Model':26}{'AUC':>8}  Tuning parameters")
        for r in rows:
            hp = ", ".join(f"{k}={v}" for k, v in r["hyperparameters"].items()) or "None"
            out.append(f"{KIND_LABELS[r['model']]:26}{r['auc']:8.4f}  {hp}")
        out.append("")
    return "\n".join(out)


__all__ = [
    "KINDS", "LinearRiskModel", "LogisticRiskModel", "RegressionTree", "RandomForestRisk",
    "GradientBoostingRisk", "MLPRiskModel", "GridSearchSpec", "best_split",
    "compare_spaces", "fit_boost", "fit_forest", "fit_linear", "fit_logistic", "fit_tree",
    "grid_search", "make_model",
]
