"""Boosted soft decision trees with a learnable input transform."""

from .boosting import (
    BoostConfig,
    Ensemble,
    Variant,
    load_model,
    predict,
    save_model,
    staged_predict,
    train,
)
from .data import (
    CsvSchema,
    SeriesDataset,
    SplitSpec,
    SynthSpec,
    engineer_features,
    generate_synthetic,
    inverse_scale,
    load_csv,
    minmax_scale,
    save_csv,
    split,
)
from .errors import ConfigError, DataError, OracleError, TrainingError
from .evaluation import (
    EvalReport,
    GradCheckResult,
    WeightRecoveryReport,
    fd_gradient,
    gradient_relative_error,
    mse_curves,
    run_gradient_checks,
    weight_recovery_experiment,
)
from .transform import (
    LinearMap,
    MlpTransform,
    TransformFitConfig,
    apply,
    fit_transform,
    grad_linear,
    grad_loss_linear,
    grad_mlp,
)
from .tree import (
    SoftTree,
    TreeFitConfig,
    fit,
    forward,
    forward_batch,
    grad_input,
    grad_input_batch,
    grad_params,
    leaf_path,
    leaf_probabilities,
)

__version__ = "0.1.0"
