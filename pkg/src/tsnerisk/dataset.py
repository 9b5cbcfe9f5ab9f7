"""Contract schema, CSV ingestion, feature encoding and normalization.

Also hosts the synthetic portfolio generator used in place of a real
insurer book: contracts are drawn from a small mixture of clusters, each
with its own claim probability, so downstream risk recovery can be checked
against a known ground truth.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

VEHICLE_TYPES = ("T1", "T2", "T3", "T4", "T5", "T6", "T7")
CONTINUOUS_COLUMNS = (
    "lat",
    "lon",
    "car_price",
    "engine_power",
    "ph_age",
    "license_age",
    "vehicle_age",
)
REQUIRED_COLUMNS = CONTINUOUS_COLUMNS + ("vehicle_type", "claim")
OPTIONAL_COLUMNS = ("premium", "vehicle_value")
N_FEATURES = len(CONTINUOUS_COLUMNS) + len(VEHICLE_TYPES)
FEATURE_NAMES = CONTINUOUS_COLUMNS + tuple(f"type_{t}" for t in VEHICLE_TYPES)


class SchemaError(ValueError):
    """Input table is missing required columns or has an unexpected layout."""


class ParseError(ValueError):
    """A data row could not be converted into a contract."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigError(ValueError):
    """A configuration document violates its invariants."""


@dataclass(frozen=True)
class ContractRecord:
    home_lat: float
    home_lon: float
    car_price: float
    engine_power: float
    policyholder_age: float
    license_age: float
    vehicle_age: float
    vehicle_type: str
    claim: int
    premium: Optional[float] = None
    vehicle_value: Optional[float] = None

    def __post_init__(self):
        if self.claim not in (0, 1):
            raise ValueError("claim must be 0 or 1")
        if self.vehicle_type not in VEHICLE_TYPES:
            raise ValueError(f"unknown vehicle type {self.vehicle_type!r}")
        for name in ("premium", "vehicle_value"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be > 0")

    def continuous(self) -> tuple:
        return (
            self.home_lat,
            self.home_lon,
            self.car_price,
            self.engine_power,
            self.policyholder_age,
            self.license_age,
            self.vehicle_age,
        )


def _float_field(raw: str, name: str, line: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(line, f"{name} is not numeric: {raw!r}") from None
    if not math.isfinite(value):
        raise ParseError(line, f"{name} is not finite: {raw!r}")
    return value


def parse_contracts(text, with_clusters: bool = False):
    """Parse portfolio CSV text (or an open text stream) into records.

    With ``with_clusters=True`` a trailing ``cluster`` column (the synthetic
    sidecar layout) is required and ``(records, clusters)`` is returned.
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty input: header row missing") from None
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    known = set(REQUIRED_COLUMNS + OPTIONAL_COLUMNS + ("cluster",))
    unknown = [c for c in header if c not in known]
    if unknown:
        raise SchemaError(f"unknown column(s): {', '.join(unknown)}")
    if with_clusters and "cluster" not in header:
        raise SchemaError("missing required column: cluster")
    pos = {name: i for i, name in enumerate(header)}

    records, clusters = [], []
    for line, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise ParseError(line, f"expected {len(header)} fields, got {len(row)}")
        row = [v.strip() for v in row]
        cont = [_float_field(row[pos[c]], c, line) for c in CONTINUOUS_COLUMNS]
        vtype = row[pos["vehicle_type"]]
        if vtype not in VEHICLE_TYPES:
            raise ParseError(line, f"unknown vehicle type {vtype!r}")
        if row[pos["claim"]] not in ("0", "1"):
            raise ParseError(line, "claim must be 0 or 1")
        optional = {}
        for name in OPTIONAL_COLUMNS:
            raw = row[pos[name]] if name in pos else ""
            if raw == "":
                optional[name] = None
                continue
            value = _float_field(raw, name, line)
            if value <= 0:
                raise ParseError(line, f"{name} must be > 0")
            optional[name] = value
        records.append(
            ContractRecord(*cont, vehicle_type=vtype, claim=int(row[pos["claim"]]), **optional)
        )
        if "cluster" in pos:
            try:
                clusters.append(int(row[pos["cluster"]]))
            except ValueError:
                raise ParseError(line, "cluster must be an integer") from None
    if with_clusters:
        return records, np.asarray(clusters, dtype=int)
    return records


def _fmt(value: float) -> str:
    return repr(float(value))


def format_contracts(records: Sequence[ContractRecord], clusters=None) -> str:
    """Serialize records to CSV text; premium columns are written when any record has them."""
    with_premium = any(r.premium is not None or r.vehicle_value is not None for r in records)
    header = list(REQUIRED_COLUMNS)
    if with_premium:
        header += list(OPTIONAL_COLUMNS)
    if clusters is not None:
        header.append("cluster")
    lines = [",".join(header)]
    for i, r in enumerate(records):
        fields = [_fmt(v) for v in r.continuous()] + [r.vehicle_type, str(r.claim)]
        if with_premium:
            fields += ["" if v is None else _fmt(v) for v in (r.premium, r.vehicle_value)]
        if clusters is not None:
            fields.append(str(int(clusters[i])))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def encode_features(records: Sequence[ContractRecord]) -> np.ndarray:
    """N x 14 matrix: 7 continuous columns then the one-hot vehicle type block."""
    if len(records) == 0:
        raise ValueError("cannot encode an empty record list")
    out = np.zeros((len(records), N_FEATURES))
    type_index = {t: i for i, t in enumerate(VEHICLE_TYPES)}
    for i, r in enumerate(records):
        out[i, : len(CONTINUOUS_COLUMNS)] = r.continuous()
        out[i, len(CONTINUOUS_COLUMNS) + type_index[r.vehicle_type]] = 1.0
    return out


def claims_of(records: Sequence[ContractRecord]) -> np.ndarray:
    return np.fromiter((r.claim for r in records), dtype=float, count=len(records))


class Normalizer(TransformerMixin, BaseEstimator):
    """Per-column z-scoring with population standard deviation.

    Columns whose standard deviation is zero are flagged in
    ``zero_variance_`` and mapped to 0 by :meth:`transform`.
    """

    def fit(self, X, y=None):
        X = check_array(X)
        self.mean_ = X.mean(axis=0)
        self.std_ = np.sqrt(((X - self.mean_) ** 2).mean(axis=0))
        self.zero_variance_ = self.std_ == 0
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} columns, got {X.shape[1]}"
            )
        safe = np.where(self.zero_variance_, 1.0, self.std_)
        out = (X - self.mean_) / safe
        out[:, self.zero_variance_] = 0.0
        return out

    def to_dict(self) -> dict:
        return {"means": self.mean_.tolist(), "stds": self.std_.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Normalizer":
        norm = cls()
        norm.mean_ = np.asarray(data["means"], dtype=float)
        norm.std_ = np.asarray(data["stds"], dtype=float)
        norm.zero_variance_ = norm.std_ == 0
        norm.n_features_in_ = norm.mean_.shape[0]
        return norm


def fit_normalizer(matrix, rows) -> Normalizer:
    rows = np.asarray(rows, dtype=int)
    if rows.size == 0:
        raise ValueError("normalizer needs at least one row")
    return Normalizer().fit(np.asarray(matrix)[rows])


def apply_normalizer(norm: Normalizer, matrix) -> np.ndarray:
    return norm.transform(matrix)


@dataclass(frozen=True)
class DataSplit:
    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int


def split(n_rows: int, train_fraction: float = 2 / 3, seed: int = 0) -> DataSplit:
    """Seeded uniform shuffle; the first floor(n * fraction) rows go to training."""
    if n_rows < 2:
        raise ValueError("need at least 2 rows to split")
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(n_rows)
    # 30000 * (2/3) lands a hair below 20000 in binary floating point
    n_train = int(math.floor(n_rows * train_fraction + 1e-9))
    return DataSplit(np.sort(order[:n_train]), np.sort(order[n_train:]), seed)


def insurer_risk(records: Sequence[ContractRecord]) -> np.ndarray:
    """Premium / vehicle value ratio, min-max rescaled over the given records."""
    bad = [i for i, r in enumerate(records) if r.premium is None or r.vehicle_value is None]
    if bad:
        shown = ", ".join(map(str, bad[:20])) + (" ..." if len(bad) > 20 else "")
        raise SchemaError(f"premium/vehicle_value missing for rows: {shown}")
    ratio = np.array([r.premium / r.vehicle_value for r in records])
    lo, hi = ratio.min(), ratio.max()
    if hi == lo:
        raise ValueError("degenerate insurer risk: all premium/value ratios are equal")
    return (ratio - lo) / (hi - lo)


# Defaults read off the three risk groups of a 9949-contract test book:
# 8592/302/1055 contracts carrying 464/38/236 claims.
_DEFAULT_CENTERS = [
    [47.40, 8.50, 30000.0, 110.0, 48.0, 25.0, 6.0],
    [46.20, 6.10, 60000.0, 220.0, 35.0, 12.0, 3.0],
    [47.00, 7.40, 18000.0, 80.0, 24.0, 4.0, 12.0],
]
_DEFAULT_SPREADS = [
    [0.15, 0.20, 4000.0, 15.0, 6.0, 4.0, 2.0],
    [0.15, 0.20, 6000.0, 20.0, 4.0, 3.0, 1.0],
    [0.15, 0.20, 3000.0, 10.0, 3.0, 1.5, 2.0],
]
_DEFAULT_TYPE_PROBS = [
    [0.30, 0.25, 0.20, 0.15, 0.05, 0.03, 0.02],
    [0.02, 0.03, 0.05, 0.10, 0.40, 0.30, 0.10],
    [0.05, 0.05, 0.10, 0.10, 0.10, 0.20, 0.40],
]


@dataclass
class SyntheticConfig:
    n_contracts: int = 30000
    cluster_weights: list = field(default_factory=lambda: [0.864, 0.030, 0.106])
    cluster_claim_probs: list = field(default_factory=lambda: [0.054, 0.126, 0.224])
    cluster_centers: list = field(default_factory=lambda: [list(r) for r in _DEFAULT_CENTERS])
    cluster_spreads: list = field(default_factory=lambda: [list(r) for r in _DEFAULT_SPREADS])
    vehicle_type_probs: list = field(default_factory=lambda: [list(r) for r in _DEFAULT_TYPE_PROBS])
    base_rates: list = field(default_factory=lambda: [0.040, 0.046, 0.050])
    premium_loading_noise: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        k = len(self.cluster_weights)
        if self.n_contracts < 1:
            raise ConfigError("n_contracts must be >= 1")
        if k < 1:
            raise ConfigError("at least one cluster is required")
        for name in ("cluster_claim_probs", "cluster_centers", "cluster_spreads",
                     "vehicle_type_probs", "base_rates"):
            if len(getattr(self, name)) != k:
                raise ConfigError(f"{name} must have {k} entries (one per cluster)")
        w = np.asarray(self.cluster_weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ConfigError("cluster_weights must be non-negative and sum to 1")
        p = np.asarray(self.cluster_claim_probs, dtype=float)
        if np.any((p < 0) | (p > 1)):
            raise ConfigError("cluster_claim_probs must lie in [0, 1]")
        centers = np.asarray(self.cluster_centers, dtype=float)
        spreads = np.asarray(self.cluster_spreads, dtype=float)
        if centers.shape != (k, 7) or spreads.shape != (k, 7):
            raise ConfigError("cluster_centers and cluster_spreads must be K x 7")
        if np.any(spreads < 0):
            raise ConfigError("cluster_spreads must be non-negative")
        types = np.asarray(self.vehicle_type_probs, dtype=float)
        if types.shape != (k, 7) or np.any(types < 0) or np.any(np.abs(types.sum(axis=1) - 1) > 1e-9):
            raise ConfigError("each vehicle_type_probs row must be 7 probabilities summing to 1")
        rates = np.asarray(self.base_rates, dtype=float)
        if np.any(rates <= 0):
            raise ConfigError("base_rates must be positive")
        if self.premium_loading_noise < 0:
            raise ConfigError("premium_loading_noise must be >= 0")

    @classmethod
    def from_json(cls, text: str) -> "SyntheticConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("synthetic config must be a JSON object")
        names = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


# Loading factors are floored so a premium can never be non-positive.
_MIN_LOADING = 0.05


def generate_synthetic(cfg: SyntheticConfig):
    """Draw a portfolio from the cluster mixture.

    Returns ``(records, clusters)``; the cluster ids are the planted ground
    truth and are only meant for the sidecar file and for tests.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_contracts
    weights = np.asarray(cfg.cluster_weights, dtype=float)
    centers = np.asarray(cfg.cluster_centers, dtype=float)
    spreads = np.asarray(cfg.cluster_spreads, dtype=float)
    types = np.asarray(cfg.vehicle_type_probs, dtype=float)

    clusters = rng.choice(len(weights), size=n, p=weights / weights.sum())
    cont = centers[clusters] + spreads[clusters] * rng.standard_normal((n, 7))
    u = rng.random(n)
    cum = np.cumsum(types, axis=1)
    vtype = np.minimum((u[:, None] >= cum[clusters]).sum(axis=1), 6)
    claim = (rng.random(n) < np.asarray(cfg.cluster_claim_probs)[clusters]).astype(int)
    loading = 1.0 + cfg.premium_loading_noise * rng.standard_normal(n)
    loading = np.maximum(loading, _MIN_LOADING)
    value = cont[:, 2]
    rates = np.asarray(cfg.base_rates, dtype=float)[clusters]

    records = []
    for i in range(n):
        # a negative drawn car price has no meaningful value; fall back to its magnitude
        v = abs(value[i]) or 1.0
        records.append(
            ContractRecord(
                *cont[i].tolist(),
                vehicle_type=VEHICLE_TYPES[vtype[i]],
                claim=int(claim[i]),
                premium=float(v * rates[i] * loading[i]),
                vehicle_value=float(v),
            )
        )
    return records, clusters
