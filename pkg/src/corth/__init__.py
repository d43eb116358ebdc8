"""Cross-fitted orthogonal search for direct linear causes of a response."""

from corth.evalmetrics import ConfusionCounts, MetricsReport, confusion, metrics
from corth.linmodel import (
    CvConfig,
    LinearPredictor,
    lasso_cv,
    lasso_fit,
    linear_projection,
    ols_fit,
    predict,
    standardize,
)
from corth.orthosearch import (
    Dataset,
    FeatureStat,
    ParentReport,
    SearchConfig,
    dataset_from_arrays,
    discover,
    normal_quantile,
    partition,
)
from corth.semgen import DagSpec, GenConfig, SimulatedDataset, sample_dag, sample_data, simulate

__all__ = [
    "ConfusionCounts", "CvConfig", "DagSpec", "Dataset", "FeatureStat", "GenConfig",
    "LinearPredictor", "MetricsReport", "ParentReport", "SearchConfig", "SimulatedDataset",
    "confusion", "dataset_from_arrays", "discover", "lasso_cv", "lasso_fit", "linear_projection", "metrics",
    "normal_quantile", "ols_fit", "partition", "predict", "sample_dag", "sample_data",
    "simulate", "standardize",
]
