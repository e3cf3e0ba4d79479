"""Sparse X-shaped adversarial perturbations against image-text encoders."""

__version__ = "0.1.0"

from .engine import (
    AttackConfig,
    AttackResult,
    ClassLabels,
    DiversityConfig,
    apply_perturbation,
    input_diversity,
    momentum_update,
    project,
    run_attack,
    sign_step,
)
from .encoders import (
    AttackSpecText,
    EncoderHandle,
    ToyEncoder,
    build_text_pools,
    class_prompt_features,
    external_encoder_adapter,
    toy_encoder,
)
from .geometry import (
    ImageShape,
    XMask,
    XMaskSpec,
    build_x_mask,
    mask_coverage,
    render_mask_preview,
    validate_spec,
)
from .config import RunConfig, load_config, save_config, with_overrides
from .evaluation import (
    SweepConfig,
    ablation_sweep,
    attack_success_rate,
    judge_score,
    zero_shot_accuracy,
)
from .objective import LossBreakdown, TextPools, WeightSchedule, Weights
from .runtime import AttackSession, cmd_attack, cmd_eval, cmd_mask_preview, cmd_sweep

__all__ = [
    "AttackConfig",
    "AttackResult",
    "AttackSession",
    "AttackSpecText",
    "ClassLabels",
    "DiversityConfig",
    "EncoderHandle",
    "ImageShape",
    "LossBreakdown",
    "RunConfig",
    "SweepConfig",
    "TextPools",
    "ToyEncoder",
    "WeightSchedule",
    "Weights",
    "XMask",
    "XMaskSpec",
    "ablation_sweep",
    "apply_perturbation",
    "attack_success_rate",
    "build_text_pools",
    "build_x_mask",
    "class_prompt_features",
    "cmd_attack",
    "cmd_eval",
    "cmd_mask_preview",
    "cmd_sweep",
    "external_encoder_adapter",
    "input_diversity",
    "judge_score",
    "load_config",
    "mask_coverage",
    "momentum_update",
    "project",
    "render_mask_preview",
    "run_attack",
    "save_config",
    "sign_step",
    "toy_encoder",
    "validate_spec",
    "with_overrides",
    "zero_shot_accuracy",
]
