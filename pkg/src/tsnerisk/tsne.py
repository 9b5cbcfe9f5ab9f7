"""Exact t-SNE.

The public matrix functions (``pairwise_sq_distances``, ``conditional_affinities``,
``symmetrize``, ``low_dim_affinities``, ``kl_divergence``, ``kl_gradient``)
work on dense N x N arrays and are meant for inspection and testing.
``run_tsne`` never materializes an N x N matrix: the joint affinities are
kept in condensed upper-triangular storage and the gradient is evaluated
pair by pair, which keeps N = 20000 at perplexity 500 within a few GB.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

log = logging.getLogger(__name__)

SIGMA_MIN = 1e-20
SIGMA_MAX = 1e20
Q_FLOOR = 1e-12


@dataclass
class TsneConfig:
    perplexity: float = 500.0
    n_iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration_factor: float = 12.0
    exaggeration_iterations: int = 250
    momentum_initial: float = 0.5
    momentum_final: float = 0.8
    momentum_switch_iteration: int = 250
    init_scale: float = 1e-4
    seed: int = 0
    sigma_search_tolerance: float = 1e-5
    sigma_search_max_iterations: int = 50

    def validate(self, n_points: int | None = None) -> None:
        if not self.perplexity > 0:
            raise ValueError("perplexity must be > 0")
        for name in ("n_iterations", "sigma_search_max_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("exaggeration_iterations", "momentum_switch_iteration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("learning_rate", "early_exaggeration_factor", "init_scale",
                     "sigma_search_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if n_points is not None and not self.perplexity < n_points - 1:
            raise ValueError(
                f"perplexity {self.perplexity} must be < n_points - 1 = {n_points - 1}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Embedding:
    y: np.ndarray
    kl_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigmas: np.ndarray | None = None
    n_sigma_warnings: int = 0


# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _sq_dist_row(x, i, out):
    n, d = x.shape
    for j in range(n):
        s = 0.0
        for k in range(d):
            t = x[i, k] - x[j, k]
            s += t * t
        out[j] = s


@njit(cache=True)
def _row_entropy_bits(drow, i, dmin, sigma, p):
    # fills p with the normalized conditional row and returns its entropy in bits
    beta = 1.0 / (2.0 * sigma * sigma)
    n = drow.shape[0]
    z = 0.0
    acc = 0.0
    for j in range(n):
        if j == i:
            p[j] = 0.0
            continue
        s = (drow[j] - dmin) * beta
        e = math.exp(-s)
        p[j] = e
        z += e
        if e > 0.0:
            acc += e * s
    for j in range(n):
        p[j] /= z
    return (math.log(z) + acc / z) / math.log(2.0)


@njit(cache=True)
def _search_row(drow, i, log2_target, tol, max_iter, p):
    """Find sigma for one row; returns (sigma, converged)."""
    n = drow.shape[0]
    dmin = np.inf
    for j in range(n):
        if j != i and drow[j] < dmin:
            dmin = drow[j]
    sigma = 1.0
    lo = 0.0
    hi = np.inf
    converged = False
    for it in range(max_iter):
        h = _row_entropy_bits(drow, i, dmin, sigma, p)
        diff = h - log2_target
        if abs(diff) <= tol:
            converged = True
            break
        if it == max_iter - 1:
            break
        if diff > 0.0:
            hi = sigma
            sigma = sigma / 2.0 if lo == 0.0 else math.sqrt(lo * hi)
        else:
            lo = sigma
            sigma = sigma * 2.0 if hi == np.inf else math.sqrt(lo * hi)
        sigma = min(max(sigma, SIGMA_MIN), SIGMA_MAX)
        if sigma == lo or sigma == hi:
            # bracket collapsed onto a clamp bound; nothing left to try
            h = _row_entropy_bits(drow, i, dmin, sigma, p)
            converged = abs(h - log2_target) <= tol
            break
    return sigma, converged


@njit(cache=True)
def _dense_conditional(d, log2_target, tol, max_iter):
    n = d.shape[0]
    p = np.zeros((n, n))
    sigmas = np.empty(n)
    ok = np.empty(n, dtype=np.bool_)
    buf = np.empty(n)
    for i in range(n):
        sigmas[i], ok[i] = _search_row(d[i], i, log2_target, tol, max_iter, buf)
        p[i, :] = buf
    return p, sigmas, ok


@njit(cache=True)
def _condensed_joint(x, log2_target, tol, max_iter):
    """Joint affinities p_ij, i < j, in condensed row-major order."""
    n = x.shape[0]
    m = n * (n - 1) // 2
    pc = np.zeros(m)
    sigmas = np.empty(n)
    ok = np.empty(n, dtype=np.bool_)
    drow = np.empty(n)
    prow = np.empty(n)
    scale = 1.0 / (2.0 * n)
    for i in range(n):
        _sq_dist_row(x, i, drow)
        sigmas[i], ok[i] = _search_row(drow, i, log2_target, tol, max_iter, prow)
        for j in range(n):
            if j == i:
                continue
            a = i if i < j else j
            b = j if i < j else i
            k = a * (2 * n - a - 1) // 2 + (b - a - 1)
            pc[k] += prow[j] * scale
    return pc, sigmas, ok


@njit(cache=True, fastmath=True)
def _condensed_pass(pc, y0, y1, exaggeration):
    # column-split coordinates keep the inner loop on contiguous memory
    n = y0.shape[0]
    a0v = np.zeros(n)
    a1v = np.zeros(n)
    r0v = np.zeros(n)
    r1v = np.zeros(n)
    z = 0.0
    plogq = 0.0
    k = 0
    for i in range(n):
        yi0 = y0[i]
        yi1 = y1[i]
        a0 = 0.0
        a1 = 0.0
        r0 = 0.0
        r1 = 0.0
        zi = 0.0
        li = 0.0
        off = k - i - 1
        for j in range(i + 1, n):
            d0 = yi0 - y0[j]
            d1 = yi1 - y1[j]
            q = 1.0 + d0 * d0 + d1 * d1
            w = 1.0 / q
            p = pc[off + j]
            zi += w
            li += p * math.log(q)
            ww = w * w
            pw = p * exaggeration * w
            r0 += ww * d0
            r1 += ww * d1
            r0v[j] -= ww * d0
            r1v[j] -= ww * d1
            a0 += pw * d0
            a1 += pw * d1
            a0v[j] -= pw * d0
            a1v[j] -= pw * d1
        k += n - i - 1
        z += zi
        plogq += li
        a0v[i] += a0
        a1v[i] += a1
        r0v[i] += r0
        r1v[i] += r1
    return a0v, a1v, r0v, r1v, 2.0 * z, 2.0 * plogq


@njit(cache=True)
def _clamped_cross_entropy(pc, y0, y1, logz):
    # sum over ordered pairs of p * log(max(q, floor))
    n = y0.shape[0]
    logfloor = math.log(1e-12)
    cross = 0.0
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            p = pc[k]
            k += 1
            if p > 0.0:
                d0 = y0[i] - y0[j]
                d1 = y1[i] - y1[j]
                lq = -math.log(1.0 + d0 * d0 + d1 * d1) - logz
                cross += 2.0 * p * max(lq, logfloor)
    return cross


def _grad_kl(pc, y, exaggeration, plogp, psum):
    """Gradient of KL(exaggeration * P || Q) and the un-exaggerated KL(P || Q).

    ``plogp`` and ``psum`` are the sums of p log p and p over ordered pairs.
    """
    y0 = np.ascontiguousarray(y[:, 0])
    y1 = np.ascontiguousarray(y[:, 1])
    a0, a1, r0, r1, z, plogq = _condensed_pass(pc, y0, y1, exaggeration)
    grad = np.empty_like(y)
    grad[:, 0] = 4.0 * (a0 - r0 / z)
    grad[:, 1] = 4.0 * (a1 - r1 / z)
    logz = math.log(z)
    # the bounding-box diagonal bounds every pairwise distance, hence every q from below
    span = y.max(axis=0) - y.min(axis=0)
    if 1.0 / ((1.0 + float(span @ span)) * z) >= Q_FLOOR:
        kl = plogp + plogq + psum * logz
    else:
        kl = plogp - _clamped_cross_entropy(pc, y0, y1, logz)
    return grad, kl


# --------------------------------------------------------------------------
# dense reference operations


def pairwise_sq_distances(x) -> np.ndarray:
    x = check_array(x)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points")
    d = np.empty((n, n))
    row = np.empty(n)
    for i in range(n):
        _sq_dist_row(x, i, row)
        d[i] = row
    return d


def conditional_affinities(d, perplexity: float, tol: float = 1e-5, max_iter: int = 50):
    """Row-stochastic p_{j|i} with per-row sigma calibrated to ``perplexity``.

    Returns ``(p, sigmas, warned)`` where ``warned`` holds the indices of rows
    that did not reach the tolerance within ``max_iter`` steps.
    """
    d = np.asarray(d, dtype=float)
    n = d.shape[0]
    if d.ndim != 2 or d.shape[1] != n:
        raise ValueError("distance matrix must be square")
    if not np.all(np.isfinite(d)):
        raise ValueError("distance matrix contains non-finite entries")
    if not 0 < perplexity < n - 1:
        raise ValueError(f"perplexity must lie in (0, {n - 1})")
    p, sigmas, ok = _dense_conditional(d, math.log2(perplexity), tol, max_iter)
    return p, sigmas, np.flatnonzero(~ok)


def symmetrize(p_cond) -> np.ndarray:
    p_cond = np.asarray(p_cond, dtype=float)
    n = p_cond.shape[0]
    return (p_cond + p_cond.T) / (2.0 * n)


def low_dim_affinities(y):
    """Student-t joint affinities; returns ``(q, w)``."""
    y = np.asarray(y, dtype=float)
    diff = y[:, None, :] - y[None, :, :]
    w = 1.0 / (1.0 + (diff**2).sum(axis=-1))
    np.fill_diagonal(w, 0.0)
    return w / w.sum(), w


def kl_divergence(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("p and q must have the same shape")
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], Q_FLOOR))))


def kl_gradient(p, y) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    q, w = low_dim_affinities(y)
    coef = (p - q) * w
    return 4.0 * (coef.sum(axis=1)[:, None] * y - coef @ y)


# --------------------------------------------------------------------------
# optimizer


def joint_affinities_condensed(x, perplexity: float, tol: float = 1e-5, max_iter: int = 50):
    """Condensed (i < j) joint affinities straight from the feature matrix."""
    x = np.ascontiguousarray(check_array(x), dtype=float)
    n = x.shape[0]
    if not 0 < perplexity < n - 1:
        raise ValueError(f"perplexity must lie in (0, {n - 1})")
    pc, sigmas, ok = _condensed_joint(x, math.log2(perplexity), tol, max_iter)
    return pc, sigmas, np.flatnonzero(~ok)


def condensed_to_square(pc, n: int) -> np.ndarray:
    out = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    out[iu] = pc
    return out + out.T


def gradient_and_kl(pc, y, exaggeration: float = 1.0):
    """Fast-path gradient and KL divergence for condensed affinities ``pc``."""
    pos = pc[pc > 0]
    plogp = 2.0 * float(np.sum(pos * np.log(pos)))
    psum = 2.0 * float(np.sum(pc))
    return _grad_kl(pc, np.asarray(y, dtype=float), exaggeration, plogp, psum)


def run_tsne(x, cfg: TsneConfig | None = None, callback=None) -> Embedding:
    cfg = cfg or TsneConfig()
    x = check_array(x)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points")
    cfg.validate(n)

    pc, sigmas, warned = joint_affinities_condensed(
        x, cfg.perplexity, cfg.sigma_search_tolerance, cfg.sigma_search_max_iterations
    )
    if warned.size:
        log.warning("sigma search missed tolerance on %d of %d rows", warned.size, n)
    pos = pc[pc > 0]
    plogp = 2.0 * float(np.sum(pos * np.log(pos)))
    psum = 2.0 * float(np.sum(pc))

    rng = np.random.default_rng(cfg.seed)
    y = rng.standard_normal((n, 2)) * cfg.init_scale
    update = np.zeros_like(y)
    history = np.empty(cfg.n_iterations)
    for it in range(cfg.n_iterations):
        exag = cfg.early_exaggeration_factor if it < cfg.exaggeration_iterations else 1.0
        momentum = cfg.momentum_initial if it < cfg.momentum_switch_iteration else cfg.momentum_final
        grad, kl = _grad_kl(pc, y, exag, plogp, psum)
        history[it] = kl
        update = momentum * update - cfg.learning_rate * grad
        y = y + update
        if callback is not None:
            callback(it, kl)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("t-SNE diverged: embedding has non-finite entries")
    return Embedding(y=y, kl_history=history, sigmas=sigmas, n_sigma_warnings=int(warned.size))


class ExactTSNE(BaseEstimator):
    """Estimator wrapper around :func:`run_tsne`.

    Only ``fit``/``fit_transform`` are offered: the map is point-to-point and
    has no ``transform`` for unseen rows.
    """

    def __init__(
        self,
        perplexity=500.0,
        n_iterations=1000,
        learning_rate=200.0,
        early_exaggeration_factor=12.0,
        exaggeration_iterations=250,
        momentum_initial=0.5,
        momentum_final=0.8,
        momentum_switch_iteration=250,
        init_scale=1e-4,
        seed=0,
        sigma_search_tolerance=1e-5,
        sigma_search_max_iterations=50,
    ):
        self.perplexity = perplexity
        self.n_iterations = n_iterations
        self.learning_rate = learning_rate
        self.early_exaggeration_factor = early_exaggeration_factor
        self.exaggeration_iterations = exaggeration_iterations
        self.momentum_initial = momentum_initial
        self.momentum_final = momentum_final
        self.momentum_switch_iteration = momentum_switch_iteration
        self.init_scale = init_scale
        self.seed = seed
        self.sigma_search_tolerance = sigma_search_tolerance
        self.sigma_search_max_iterations = sigma_search_max_iterations

    @property
    def config(self) -> TsneConfig:
        return TsneConfig(**self.get_params())

    def fit(self, X, y=None):
        result = run_tsne(X, self.config)
        self.embedding_ = result.y
        self.kl_history_ = result.kl_history
        self.sigmas_ = result.sigmas
        self.n_sigma_warnings_ = result.n_sigma_warnings
        self.n_features_in_ = np.asarray(X).shape[1]
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_

    @property
    def embedding(self) -> Embedding:
        check_is_fitted(self, "embedding_")
        return Embedding(self.embedding_, self.kl_history_, self.sigmas_, self.n_sigma_warnings_)
