"""Insurance risk surfaces from a parametric t-SNE map of contract features."""

from .dataset import (
    ContractRecord,
    Normalizer,
    SyntheticConfig,
    encode_features,
    generate_synthetic,
    insurer_risk,
    parse_contracts,
    split,
)
from .metrics import build_report, group_stats, pearson, roc_auc, threshold_curve, top_fraction_table
from .neuralnet import MLPRegressor, TrainConfig
from .pipeline import PipelineConfig, RiskPipeline
from .surface import RiskSurface, RiskSurfaceRegressor
from .tsne import ExactTSNE, TsneConfig

__version__ = "0.1.0"

__all__ = [
    "ContractRecord",
    "ExactTSNE",
    "MLPRegressor",
    "Normalizer",
    "PipelineConfig",
    "RiskPipeline",
    "RiskSurface",
    "RiskSurfaceRegressor",
    "SyntheticConfig",
    "TrainConfig",
    "TsneConfig",
    "build_report",
    "encode_features",
    "generate_synthetic",
    "group_stats",
    "insurer_risk",
    "parse_contracts",
    "pearson",
    "roc_auc",
    "split",
    "threshold_curve",
    "top_fraction_table",
]
