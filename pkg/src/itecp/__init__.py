"""Weighted split-conformal prediction intervals for time-varying individual treatment effects."""
from .conformal import (
    CalibrationSet,
    DegenerateWeightsError,
    PredictionInterval,
    WeightedCalibrator,
    WeightScheme,
    build_interval,
    build_intervals,
    conformity_score,
    weighted_quantile,
    weights_for_target,
)
from .evaluation import DominanceReport, MetricsRow, batch_dominance, check_dominance, summarize
from .nuisance import LinearModel, NuisanceEstimates, build_features, cv_lasso, estimate_nuisance, fit_lasso
from .panel import (
    ColumnSchema,
    ConfigError,
    IncompletePanelError,
    PanelDataset,
    PanelError,
    PositivityError,
    SchemaError,
    TrainingSplit,
    load_csv,
    split,
    write_csv,
)
from .pipeline import ExperimentConfig, FittedPipeline, IntervalBatch, StageError, fit, run, run_schemes
from .pseudo import PseudoOutcomeTable, dr_transform, ipw_transform, pseudo_outcomes, transform_dataset
from .quantile import QuantileModelPair, fit_pinball, fit_quantile_pair, pinball_loss, qr_features, signed_errors
from .synthetic import SimConfig, generate

__version__ = "0.1.0"
