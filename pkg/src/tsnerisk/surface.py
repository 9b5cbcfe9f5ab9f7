"""Discretized risk surface over the embedding plane.

The risk network is evaluated at pixel centers of a 100 x 100 grid, rescaled
to [0, 1] with the range it produced on the training points, restricted to
pixels that hold training points and finally mean-smoothed with a 3 x 3
kernel. Points landing outside the once-dilated occupancy mask are reported
as out of surface (NaN).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset import Normalizer, encode_features
from .neuralnet import RISK_HIDDEN, Mlp, TrainConfig, fit_nn_risk, fit_value_net, forward

GRID_SIZE = 100
DEFAULT_MARGIN = 0.02


@dataclass(frozen=True)
class GridGeometry:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    size: int = GRID_SIZE

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("degenerate grid bounds")

    @classmethod
    def from_embedding(cls, y, margin_fraction: float = DEFAULT_MARGIN, size: int = GRID_SIZE):
        y = check_array(y)
        lo = y.min(axis=0)
        hi = y.max(axis=0)
        span = hi - lo
        if np.any(span <= 0):
            raise ValueError("degenerate bounding box: embedding has zero width or height")
        lo = lo - margin_fraction * span
        hi = hi + margin_fraction * span
        return cls(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]), size)

    def locate(self, points):
        """Return ``(rows, cols, inside)``; row 0 is the ``y_min`` edge.

        Cells are half-open except the last one on each axis, which also
        takes the upper bound.
        """
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        fx = (p[:, 0] - self.x_min) / (self.x_max - self.x_min) * self.size
        fy = (p[:, 1] - self.y_min) / (self.y_max - self.y_min) * self.size
        inside = (
            (p[:, 0] >= self.x_min) & (p[:, 0] <= self.x_max)
            & (p[:, 1] >= self.y_min) & (p[:, 1] <= self.y_max)
        )
        cols = np.clip(np.floor(np.where(inside, fx, 0)), 0, self.size - 1).astype(int)
        rows = np.clip(np.floor(np.where(inside, fy, 0)), 0, self.size - 1).astype(int)
        return rows, cols, inside

    def pixel_centers(self) -> np.ndarray:
        """(size*size, 2) centers in row-major order."""
        k = np.arange(self.size) + 0.5
        xs = self.x_min + k * (self.x_max - self.x_min) / self.size
        ys = self.y_min + k * (self.y_max - self.y_min) / self.size
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "y_min": self.y_min,
                "y_max": self.y_max, "size": self.size}


def _shifted_sum(a: np.ndarray) -> np.ndarray:
    # sum of the 3x3 neighbourhood with zeros beyond the border, fixed tap order
    padded = np.pad(a, 1)
    n0, n1 = a.shape
    out = np.zeros(a.shape, dtype=float)
    for dr in range(3):
        for dc in range(3):
            out += padded[dr:dr + n0, dc:dc + n1]
    return out


def smooth3x3(grid) -> np.ndarray:
    """Uniform 3x3 mean filter; taps outside the grid count as zero."""
    return _shifted_sum(np.asarray(grid, dtype=float)) / 9.0


def dilate3x3(mask) -> np.ndarray:
    return _shifted_sum(np.asarray(mask, dtype=float)) > 0


def occupancy_mask(geometry: GridGeometry, y) -> np.ndarray:
    rows, cols, inside = geometry.locate(y)
    occ = np.zeros((geometry.size, geometry.size), dtype=bool)
    occ[rows[inside], cols[inside]] = True
    return occ


def _rle(mask: np.ndarray) -> list:
    # run lengths over the row-major flattening, starting with a run of False
    flat = mask.ravel().astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return runs


def _unrle(runs: list, shape) -> np.ndarray:
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    pos, value = 0, False
    for r in runs:
        flat[pos:pos + r] = value
        pos += r
        value = not value
    if pos != flat.size:
        raise ValueError("run-length encoding does not cover the grid")
    return flat.reshape(shape)


@dataclass
class RiskSurface:
    grid: np.ndarray
    occupancy: np.ndarray
    valid: np.ndarray
    geometry: GridGeometry
    raw_min: float
    raw_max: float

    def score(self, points) -> np.ndarray:
        """Surface value per point, NaN where the point is out of surface."""
        rows, cols, inside = self.geometry.locate(points)
        ok = inside & self.valid[rows, cols]
        return np.where(ok, self.grid[rows, cols], np.nan)

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry.to_dict(),
            "raw_min": self.raw_min,
            "raw_max": self.raw_max,
            "occupancy_rle": _rle(self.occupancy),
            "valid_rle": _rle(self.valid),
            "grid": self.grid.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RiskSurface":
        geom = GridGeometry(**data["geometry"])
        shape = (geom.size, geom.size)
        surface = cls(
            np.asarray(data["grid"], dtype=float).reshape(shape),
            _unrle(data["occupancy_rle"], shape),
            _unrle(data["valid_rle"], shape),
            geom,
            float(data["raw_min"]),
            float(data["raw_max"]),
        )
        if not np.array_equal(surface.valid, dilate3x3(surface.occupancy)):
            raise ValueError("surface valid mask is not the dilation of its occupancy")
        return surface


def surface_from_network(net: Mlp, embedding, geometry: GridGeometry | None = None) -> RiskSurface:
    """Rasterize any 2 -> 1 network into a surface over ``embedding``'s plane."""
    y = check_array(embedding)
    geometry = geometry or GridGeometry.from_embedding(y)
    raw = forward(net, y)[:, 0]
    raw_min, raw_max = float(raw.min()), float(raw.max())
    if raw_max == raw_min:
        raise ValueError("degenerate risk range: network output is constant on training points")
    n = geometry.size
    at_centers = forward(net, geometry.pixel_centers())[:, 0].reshape(n, n)
    grid = np.clip((at_centers - raw_min) / (raw_max - raw_min), 0.0, 1.0)
    occupancy = occupancy_mask(geometry, y)
    grid = np.where(occupancy, grid, 0.0)
    grid = smooth3x3(grid)
    valid = dilate3x3(occupancy)
    grid = np.where(valid, grid, 0.0)
    return RiskSurface(grid, occupancy, valid, geometry, raw_min, raw_max)


def build_surface(nn_risk: Mlp, embedding, geometry: GridGeometry | None = None) -> RiskSurface:
    return surface_from_network(nn_risk, embedding, geometry)


def build_value_surface(values, embedding, geometry: GridGeometry | None = None,
                        cfg: TrainConfig | None = None, hidden: int = RISK_HIDDEN) -> RiskSurface:
    """Train a risk-shaped network on arbitrary per-point values and rasterize it."""
    values = np.asarray(values, dtype=float).ravel()
    if np.any((values < 0) | (values > 1)):
        raise ValueError("values must lie in [0, 1]")
    if values.max() == values.min():
        raise ValueError("degenerate risk range: values are constant")
    net = fit_value_net(embedding, values, cfg, hidden)
    return surface_from_network(net, embedding, geometry)


def score_batch(surface: RiskSurface, nn_tsne: Mlp, normalizer: Normalizer, records):
    """Full inference chain for raw contracts.

    Returns ``(scores, coords, retained)``: NaN scores mark out-of-surface
    contracts and ``retained`` indexes the others.
    """
    if len(records) == 0:
        return np.zeros(0), np.zeros((0, 2)), np.zeros(0, dtype=int)
    coords = forward(nn_tsne, normalizer.transform(encode_features(records)))
    scores = surface.score(coords)
    return scores, coords, np.flatnonzero(~np.isnan(scores))


def total_variation(grid) -> float:
    g = np.asarray(grid, dtype=float)
    return float(np.abs(np.diff(g, axis=0)).sum() + np.abs(np.diff(g, axis=1)).sum())


class RiskSurfaceRegressor(RegressorMixin, BaseEstimator):
    """Fit the risk network on embedding coordinates and serve surface lookups.

    ``predict`` returns NaN for out-of-surface points.
    """

    def __init__(self, hidden=RISK_HIDDEN, margin_fraction=DEFAULT_MARGIN, epochs=200,
                 batch_size=64, learning_rate=0.01, momentum=0.9, seed=0):
        self.hidden = hidden
        self.margin_fraction = margin_fraction
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate,
                           self.momentum, self.seed)

    def fit(self, X, y):
        X = check_array(X)
        geometry = GridGeometry.from_embedding(X, self.margin_fraction)
        y = np.asarray(y, dtype=float).ravel()
        if np.all((y == 0) | (y == 1)):
            self.network_ = fit_nn_risk(X, y, self._train_config(), self.hidden)
        else:
            self.network_ = fit_value_net(X, y, self._train_config(), self.hidden)
        self.surface_ = surface_from_network(self.network_, X, geometry)
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "surface_")
        return self.surface_.score(check_array(X))
