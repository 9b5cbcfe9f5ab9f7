"""End-to-end risk pipeline and its JSON artifact.

Training runs normalize -> t-SNE -> embedding network -> risk network ->
risk surface. Scoring unseen contracts reuses the stored normalizer,
embedding network and surface, never t-SNE itself.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import (
    N_FEATURES,
    Normalizer,
    claims_of,
    encode_features,
    insurer_risk,
)
from .metrics import DEFAULT_BOUNDARIES, EvalReport, build_report
from .neuralnet import RISK_HIDDEN, Mlp, TrainConfig, fit_nn_risk, fit_nn_tsne, forward
from .surface import (
    DEFAULT_MARGIN,
    GridGeometry,
    RiskSurface,
    build_value_surface,
    surface_from_network,
)
from .tsne import TsneConfig, run_tsne

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class ArtifactError(ValueError):
    """A pipeline artifact is unreadable, of an unknown version or inconsistent."""


class StageError(RuntimeError):
    """A training stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def lineage_hash(x_train: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x_train, dtype="<f8").tobytes()).hexdigest()[:16]


@dataclass
class PipelineConfig:
    tsne: TsneConfig = field(default_factory=TsneConfig)
    nn_tsne: TrainConfig = field(default_factory=TrainConfig)
    nn_risk: TrainConfig = field(default_factory=TrainConfig)
    risk_hidden: int = RISK_HIDDEN
    margin_fraction: float = DEFAULT_MARGIN
    insurer_surface: bool = True

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(
            self,
            tsne=replace(self.tsne, seed=seed),
            nn_tsne=replace(self.nn_tsne, seed=seed),
            nn_risk=replace(self.nn_risk, seed=seed),
        )

    def to_dict(self) -> dict:
        return {
            "tsne": self.tsne.to_dict(),
            "nn_tsne": self.nn_tsne.to_dict(),
            "nn_risk": self.nn_risk.to_dict(),
            "risk_hidden": self.risk_hidden,
            "margin_fraction": self.margin_fraction,
            "insurer_surface": self.insurer_surface,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown pipeline config key(s): {', '.join(unknown)}")
        kwargs = dict(data)
        for key, typ in (("tsne", TsneConfig), ("nn_tsne", TrainConfig), ("nn_risk", TrainConfig)):
            if key in kwargs:
                try:
                    kwargs[key] = typ(**kwargs[key])
                except TypeError as exc:
                    raise ValueError(f"bad '{key}' config: {exc}") from None
        return cls(**kwargs)


class RiskPipeline(BaseEstimator):
    """t-SNE risk surface as a single estimator.

    ``fit`` takes a list of :class:`ContractRecord`. ``predict`` returns the
    surface risk in [0, 1] with NaN for out-of-surface contracts and
    ``transform`` returns the 2D coordinates of contracts.
    """

    def __init__(self, config: PipelineConfig | None = None):
        self.config = config

    def _stage(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
            raise StageError(name, exc) from exc
        log.info("stage %-14s %.2fs", name, time.perf_counter() - t0)
        return out

    def fit(self, records, y=None, split_info: dict | None = None):
        """Train on ``records``; ``split_info`` is stored verbatim in the artifact."""
        cfg = self.config or PipelineConfig()
        records = list(records)
        if len(records) < 2:
            raise ValueError("need at least 2 training contracts")
        x_raw = encode_features(records)
        claims = claims_of(records)
        self.normalizer_ = self._stage("normalize", Normalizer().fit, x_raw)
        x = self.normalizer_.transform(x_raw)
        self.lineage_ = lineage_hash(x)
        emb = self._stage("tsne", run_tsne, x, cfg.tsne)
        self.embedding_ = emb.y
        self.kl_history_ = emb.kl_history
        self.n_sigma_warnings_ = emb.n_sigma_warnings
        self.nn_tsne_ = self._stage("nn_tsne", fit_nn_tsne, x, emb.y, cfg.nn_tsne)
        # the surface lives on the network's image of the training set, which is
        # exactly where re-scored training contracts land
        self.train_coords_ = forward(self.nn_tsne_, x)
        self.nn_risk_ = self._stage("nn_risk", fit_nn_risk, self.train_coords_, claims,
                                    cfg.nn_risk, cfg.risk_hidden)
        geometry = self._stage("geometry", GridGeometry.from_embedding, self.train_coords_,
                               cfg.margin_fraction)
        self.surface_ = self._stage("surface", surface_from_network, self.nn_risk_,
                                    self.train_coords_, geometry)
        self.train_claims_ = claims.astype(int)
        self.insurer_surface_ = None
        if cfg.insurer_surface and all(
            r.premium is not None and r.vehicle_value is not None for r in records
        ):
            values = insurer_risk(records)
            self.insurer_surface_ = self._stage(
                "insurer_surface", build_value_surface, values, self.train_coords_, geometry,
                cfg.nn_risk, cfg.risk_hidden,
            )
        self.config_ = cfg
        self.split_ = split_info
        self.n_features_in_ = N_FEATURES
        return self

    def transform(self, records) -> np.ndarray:
        check_is_fitted(self, "surface_")
        if len(records) == 0:
            return np.zeros((0, 2))
        return forward(self.nn_tsne_, self.normalizer_.transform(encode_features(records)))

    def predict(self, records) -> np.ndarray:
        return self.surface_.score(self.transform(records))

    def evaluate(self, records, insurer: bool = False,
                 boundaries=DEFAULT_BOUNDARIES) -> EvalReport:
        scores = self.predict(records)
        claims = claims_of(records)
        ins = insurer_risk(records) if insurer else None
        return build_report(scores, claims, ins, boundaries)

    # -- persistence -------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "surface_")
        return {
            "format_version": FORMAT_VERSION,
            "lineage": self.lineage_,
            "config": self.config_.to_dict(),
            "normalizer": self.normalizer_.to_dict(),
            "tsne": {
                "embedding": self.embedding_.tolist(),
                "kl_history": self.kl_history_.tolist(),
                "n_sigma_warnings": self.n_sigma_warnings_,
            },
            "train_claims": self.train_claims_.tolist(),
            "train_coords": self.train_coords_.tolist(),
            "nn_tsne": self.nn_tsne_.to_dict(),
            "nn_risk": self.nn_risk_.to_dict(),
            "surface": self.surface_.to_dict(),
            "insurer_surface": None if self.insurer_surface_ is None
            else self.insurer_surface_.to_dict(),
            "split": self.split_,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RiskPipeline":
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise ArtifactError(f"unsupported artifact format_version {version!r}; "
                                f"expected {FORMAT_VERSION}")
        try:
            cfg = PipelineConfig.from_dict(data["config"])
            pipe = cls(cfg)
            pipe.config_ = cfg
            pipe.lineage_ = data["lineage"]
            pipe.normalizer_ = Normalizer.from_dict(data["normalizer"])
            pipe.embedding_ = np.asarray(data["tsne"]["embedding"], dtype=float).reshape(-1, 2)
            pipe.kl_history_ = np.asarray(data["tsne"]["kl_history"], dtype=float)
            pipe.n_sigma_warnings_ = int(data["tsne"]["n_sigma_warnings"])
            pipe.train_claims_ = np.asarray(data["train_claims"], dtype=int)
            pipe.train_coords_ = np.asarray(data["train_coords"], dtype=float).reshape(-1, 2)
            pipe.nn_tsne_ = Mlp.from_dict(data["nn_tsne"])
            pipe.nn_risk_ = Mlp.from_dict(data["nn_risk"])
            pipe.surface_ = RiskSurface.from_dict(data["surface"])
            ins = data.get("insurer_surface")
            pipe.insurer_surface_ = None if ins is None else RiskSurface.from_dict(ins)
            pipe.split_ = data.get("split")
        except (KeyError, TypeError, ValueError) as exc:
            raise ArtifactError(f"malformed artifact: {exc}") from None
        pipe.n_features_in_ = N_FEATURES
        pipe._check_consistency()
        return pipe

    def _check_consistency(self):
        n = self.embedding_.shape[0]
        problems = []
        if self.normalizer_.n_features_in_ != self.nn_tsne_.n_inputs:
            problems.append("normalizer width differs from the embedding network input")
        if self.nn_tsne_.n_outputs != 2 or self.nn_risk_.n_inputs != 2:
            problems.append("embedding network and risk network dimensions do not chain")
        if self.train_claims_.shape[0] != n or self.train_coords_.shape[0] != n:
            problems.append("claim vector, coordinates and embedding row counts differ")
        if self.insurer_surface_ is not None and \
                self.insurer_surface_.geometry != self.surface_.geometry:
            problems.append("insurer surface geometry differs from the risk surface")
        if self.split_ is not None and len(self.split_["train"]) != n:
            problems.append("stored split does not match the training set size")
        if problems:
            raise ArtifactError("inconsistent artifact: " + "; ".join(problems))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RiskPipeline":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"artifact is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ArtifactError("artifact must be a JSON object")
        return cls.from_dict(data)
