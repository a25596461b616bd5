"""Pixel-space visual prompt tuning for no-reference image quality assessment.

Learns a small set of pixels added to every input image so that a frozen
scorer's token logits track human quality ratings, without touching the
scorer's own parameters.
"""

from .backend import (
    BackendConfig,
    FrozenScorer,
    ScorerOutput,
    ToyScorer,
    make_backend,
    preprocess,
    score_image,
    toy_config,
)
from .checkpoint import load_prompt, save_prompt
from .data import SampleManifest, SplitSpec, augment, load_manifest, split_manifest
from .errors import (
    BackendError,
    CheckpointError,
    ConfigError,
    ConstantInputError,
    IngestionError,
    InputError,
    ShapeError,
    TrainError,
    VpqaError,
)
from .metrics import EvalReport, evaluate, plcc, plcc_with_logistic, srcc
from .prompts import (
    PromptKind,
    PromptShape,
    PromptedImage,
    VisualPrompt,
    apply_prompt,
    create_prompt,
    materialize,
    param_count,
)
from .scoring import LogitVector, TokenSets, quality_score, quality_score_gradient
from .train import TrainConfig, TrainHistory, mse_loss, preset_config, sgd_step, train_prompt

__version__ = "0.1.0"

__all__ = [
    "BackendConfig",
    "BackendError",
    "CheckpointError",
    "ConfigError",
    "ConstantInputError",
    "EvalReport",
    "FrozenScorer",
    "IngestionError",
    "InputError",
    "LogitVector",
    "PromptKind",
    "PromptShape",
    "PromptedImage",
    "SampleManifest",
    "ScorerOutput",
    "ShapeError",
    "SplitSpec",
    "TokenSets",
    "ToyScorer",
    "TrainConfig",
    "TrainError",
    "TrainHistory",
    "VisualPrompt",
    "VpqaError",
    "apply_prompt",
    "augment",
    "create_prompt",
    "evaluate",
    "load_manifest",
    "load_prompt",
    "make_backend",
    "materialize",
    "mse_loss",
    "param_count",
    "plcc",
    "plcc_with_logistic",
    "preprocess",
    "preset_config",
    "quality_score",
    "quality_score_gradient",
    "save_prompt",
    "score_image",
    "sgd_step",
    "split_manifest",
    "srcc",
    "toy_config",
    "train_prompt",
]
