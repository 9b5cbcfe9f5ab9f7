"""Small feed-forward regressors trained by momentum SGD on squared error.

Two shapes are used by the pipeline: the 14 -> 100 -> 2 map that imitates
the t-SNE embedding for unseen contracts, and the 2 -> 5 -> 1 risk
regressor on the embedding plane. Hidden layers use tanh, the output layer
is linear.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

log = logging.getLogger(__name__)

TSNE_MAP_SIZES = (14, 100, 2)
RISK_HIDDEN = 5


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    hidden_activation: str = "tanh"
    output_activation: str = "linear"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("an MLP needs >= 2 layers, each of size >= 1")
        if self.hidden_activation != "tanh" or self.output_activation != "linear":
            raise ValueError("only tanh hidden layers and a linear output are supported")


@dataclass
class Mlp:
    spec: MlpSpec
    weights: list
    biases: list
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None
    target_mean: np.ndarray | None = None
    target_std: np.ndarray | None = None

    @property
    def n_inputs(self) -> int:
        return self.spec.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.spec.layer_sizes[-1]

    def to_dict(self) -> dict:
        def opt(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "layer_sizes": list(self.spec.layer_sizes),
            "hidden_activation": self.spec.hidden_activation,
            "output_activation": self.spec.output_activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_mean": opt(self.input_mean),
            "input_std": opt(self.input_std),
            "target_mean": opt(self.target_mean),
            "target_std": opt(self.target_std),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        def opt(a):
            return None if a is None else np.asarray(a, dtype=float)

        spec = MlpSpec(tuple(data["layer_sizes"]), data["hidden_activation"],
                       data["output_activation"])
        mlp = cls(
            spec,
            [np.asarray(w, dtype=float).reshape(o, i) for w, i, o in
             zip(data["weights"], spec.layer_sizes[:-1], spec.layer_sizes[1:])],
            [np.asarray(b, dtype=float) for b in data["biases"]],
            opt(data.get("input_mean")),
            opt(data.get("input_std")),
            opt(data.get("target_mean")),
            opt(data.get("target_std")),
        )
        _check_shapes(mlp)
        return mlp


def _check_shapes(mlp: Mlp) -> None:
    sizes = mlp.spec.layer_sizes
    if len(mlp.weights) != len(sizes) - 1 or len(mlp.biases) != len(sizes) - 1:
        raise ValueError("parameter count does not match the layer spec")
    for w, b, n_in, n_out in zip(mlp.weights, mlp.biases, sizes[:-1], sizes[1:]):
        if w.shape != (n_out, n_in) or b.shape != (n_out,):
            raise ValueError(f"layer {n_in}->{n_out}: got W{w.shape}, b{b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite parameters")


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    shuffle_each_epoch: bool = True
    standardize_inputs: bool = True

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def init_mlp(spec: MlpSpec, seed: int = 0) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        a = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-a, a, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return Mlp(spec, weights, biases)


def _as_batch(mlp: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, mlp.n_inputs) if mlp.n_inputs > 1 else x[:, None]
    if x.ndim != 2 or x.shape[1] != mlp.n_inputs:
        raise ValueError(f"expected input width {mlp.n_inputs}, got shape {x.shape}")
    return x


def _scale_inputs(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    if mlp.input_mean is None:
        return x
    return (x - mlp.input_mean) / mlp.input_std


def _activations(mlp: Mlp, x: np.ndarray) -> list:
    """Layer outputs, input first; the last entry is the standardized prediction."""
    acts = [x]
    h = x
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w.T + b
        if k < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def forward(mlp: Mlp, x) -> np.ndarray:
    x = _as_batch(mlp, x)
    out = _activations(mlp, _scale_inputs(mlp, x))[-1]
    if mlp.target_mean is not None:
        out = out * mlp.target_std + mlp.target_mean
    return out


def _standardize_targets(mlp: Mlp, targets) -> np.ndarray:
    t = np.asarray(targets, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    if mlp.target_mean is not None:
        t = (t - mlp.target_mean) / mlp.target_std
    return t


def mse_loss_and_gradients(mlp: Mlp, x, targets):
    """Mean squared error in standardized target units and its gradients.

    Returns ``(loss, weight_grads, bias_grads)``.
    """
    x = _scale_inputs(mlp, _as_batch(mlp, x))
    t = _standardize_targets(mlp, targets)
    if t.shape != (x.shape[0], mlp.n_outputs):
        raise ValueError(f"targets must have shape ({x.shape[0]}, {mlp.n_outputs})")
    acts = _activations(mlp, x)
    err = acts[-1] - t
    loss = float(np.mean(err**2))
    delta = 2.0 * err / err.size
    gw = [None] * len(mlp.weights)
    gb = [None] * len(mlp.biases)
    for k in range(len(mlp.weights) - 1, -1, -1):
        gw[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ mlp.weights[k]) * (1.0 - acts[k] ** 2)
    return loss, gw, gb


def _column_stats(a: np.ndarray):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def train(mlp: Mlp, x, targets, cfg: TrainConfig | None = None):
    """Mini-batch momentum SGD. Returns ``(trained_copy, epoch_losses)``.

    Targets are z-scored per output before training and the scaling is
    stored on the model, so :func:`forward` answers in the caller's units.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    x = _as_batch(mlp, x)
    t = np.asarray(targets, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    if x.shape[0] < 1 or t.shape != (x.shape[0], mlp.n_outputs):
        raise ValueError("inputs and targets must be non-empty and row-aligned")

    model = copy.deepcopy(mlp)
    if cfg.standardize_inputs:
        model.input_mean, model.input_std = _column_stats(x)
    model.target_mean, model.target_std = _column_stats(t)

    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    history = np.empty(cfg.epochs)
    order = np.arange(n)
    for epoch in range(cfg.epochs):
        if cfg.shuffle_each_epoch:
            order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, gw, gb = mse_loss_and_gradients(model, x[idx], t[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}, batch starting {start}"
                )
            total += loss * idx.size
            for k in range(len(model.weights)):
                vel_w[k] = cfg.momentum * vel_w[k] - cfg.learning_rate * gw[k]
                vel_b[k] = cfg.momentum * vel_b[k] - cfg.learning_rate * gb[k]
                model.weights[k] = model.weights[k] + vel_w[k]
                model.biases[k] = model.biases[k] + vel_b[k]
        history[epoch] = total / n
    log.debug("trained %s: loss %.4g -> %.4g", model.spec.layer_sizes, history[0], history[-1])
    return model, history


def fit_nn_tsne(x_train, y_train, cfg: TrainConfig | None = None) -> Mlp:
    x_train = check_array(x_train)
    y_train = check_array(y_train)
    if x_train.shape[0] != y_train.shape[0]:
        raise ValueError("feature and embedding row counts differ")
    cfg = cfg or TrainConfig()
    spec = MlpSpec((x_train.shape[1], TSNE_MAP_SIZES[1], y_train.shape[1]))
    model, _ = train(init_mlp(spec, cfg.seed), x_train, y_train, cfg)
    return model


def fit_nn_risk(y_train, claims, cfg: TrainConfig | None = None, hidden: int = RISK_HIDDEN) -> Mlp:
    """Regress the 0/1 claim indicator on embedding coordinates (unbounded output)."""
    claims = np.asarray(claims, dtype=float).ravel()
    if not np.all((claims == 0) | (claims == 1)):
        raise ValueError("claims must be 0 or 1")
    if claims.size and claims.min() == claims.max():
        raise ValueError("degenerate risk range: training claims are all equal")
    return fit_value_net(y_train, claims, cfg, hidden)


def fit_value_net(y_train, values, cfg: TrainConfig | None = None, hidden: int = RISK_HIDDEN) -> Mlp:
    """Same recipe as :func:`fit_nn_risk` for arbitrary real targets."""
    y_train = check_array(y_train)
    values = np.asarray(values, dtype=float).ravel()
    if y_train.shape[0] != values.shape[0]:
        raise ValueError("embedding and value row counts differ")
    cfg = cfg or TrainConfig()
    spec = MlpSpec((y_train.shape[1], hidden, 1))
    model, _ = train(init_mlp(spec, cfg.seed), y_train, values, cfg)
    return model


class MLPRegressor(RegressorMixin, BaseEstimator):
    """scikit-learn facade over :func:`train` / :func:`forward`."""

    def __init__(self, hidden_layer_sizes=(100,), epochs=200, batch_size=64,
                 learning_rate=0.01, momentum=0.9, seed=0, shuffle_each_epoch=True):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.seed = seed
        self.shuffle_each_epoch = shuffle_each_epoch

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y = np.asarray(y, dtype=float)
        self._single_output = y.ndim == 1
        n_out = 1 if y.ndim == 1 else y.shape[1]
        spec = MlpSpec((X.shape[1], *self.hidden_layer_sizes, n_out))
        cfg = TrainConfig(self.epochs, self.batch_size, self.learning_rate,
                          self.momentum, self.seed, self.shuffle_each_epoch)
        self.model_, self.loss_history_ = train(init_mlp(spec, self.seed), X, y, cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        out = forward(self.model_, check_array(X))
        return out[:, 0] if self._single_output else out
