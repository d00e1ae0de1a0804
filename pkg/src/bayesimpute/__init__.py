"""Bayesian recurrent imputation and prediction for multivariate time series."""

from .data import (
    Dataset,
    NormStats,
    SynthConfig,
    baseline_impute,
    compute_deltas,
    generate_synthetic,
    load_csv,
    normalize,
    save_dataset,
    simulate_mar,
    split,
)
from .metrics import auprc, auroc, mae, mre
from .model import ForwardResult, ModelConfig, ModelWeights, forward
from .training import (
    Checkpoint,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .uncertainty import (
    MCResult,
    imputation_distribution_export,
    mc_forward,
    per_feature_variability,
    variance_percentile_curve,
)
from .variational import ScaleMixturePrior, VariationalTensor

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "Dataset",
    "ForwardResult",
    "MCResult",
    "ModelConfig",
    "ModelWeights",
    "NormStats",
    "ScaleMixturePrior",
    "SynthConfig",
    "TrainConfig",
    "VariationalTensor",
    "auprc",
    "auroc",
    "baseline_impute",
    "compute_deltas",
    "forward",
    "generate_synthetic",
    "imputation_distribution_export",
    "load_checkpoint",
    "load_csv",
    "mae",
    "mc_forward",
    "mre",
    "normalize",
    "per_feature_variability",
    "save_checkpoint",
    "save_dataset",
    "simulate_mar",
    "split",
    "train",
    "variance_percentile_curve",
]
