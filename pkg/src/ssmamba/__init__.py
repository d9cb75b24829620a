"""Spectral-spatial Mamba classifier for hyperspectral images.

Everything is self-contained: a small reverse-mode autodiff engine, the
selective state-space scan with its convolutional dual, spectral/spatial
tokenization, the dual-branch model with feature enhancement, and the full
training/evaluation protocol.  `SSMambaClassifier` is the scikit-learn
style entry point; the `ssmamba` CLI drives scene-level workflows.
"""

from .autodiff import GradCheckReport, NumericError, ShapeError, Tensor, backward, grad_check
from .config import BRANCH_MODES, RunConfig
from .data import (
    HsicFormatError,
    HsiCube,
    MetricsResult,
    SyntheticSpec,
    confusion_matrix,
    extract_window,
    joint_benchmark_config,
    joint_benchmark_spec,
    load_hsic,
    make_synthetic,
    metrics,
    overfit_config,
    overfit_spec,
    render_map,
    save_hsic,
)
from .estimator import SSMambaClassifier
from .model import ModelParams, count_params, init_model, model_forward, named_params
from .ssm import conv_apply, discretize_zoh, recurrent_scan, selective_scan, ssm_conv_kernel
from .training import (
    RepeatedEvalResult,
    TrainingDiverged,
    TrainState,
    evaluate,
    lr_at,
    predict_scene,
    repeated_eval,
    split_dataset,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "ShapeError", "NumericError", "backward", "grad_check", "GradCheckReport",
    "RunConfig", "BRANCH_MODES",
    "HsiCube", "HsicFormatError", "MetricsResult", "SyntheticSpec",
    "load_hsic", "save_hsic", "extract_window", "confusion_matrix", "metrics",
    "render_map", "make_synthetic", "overfit_spec", "overfit_config",
    "joint_benchmark_spec", "joint_benchmark_config",
    "SSMambaClassifier",
    "ModelParams", "init_model", "model_forward", "named_params", "count_params",
    "discretize_zoh", "recurrent_scan", "ssm_conv_kernel", "conv_apply", "selective_scan",
    "train", "evaluate", "repeated_eval", "split_dataset", "lr_at", "predict_scene",
    "TrainState", "TrainingDiverged", "RepeatedEvalResult",
    "__version__",
]
