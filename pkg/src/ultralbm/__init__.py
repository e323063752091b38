"""Ultralight bidirectional-Mamba U-Net for binary segmentation.

Shared-weight bidirectional selective-scan blocks with multi-branch local
perception, a hybrid knowledge-distillation trainer, complexity accounting,
and a synthetic desk-scale data harness.
"""

from .blocks import GLMBPBlock, LMBPBlock
from .complexity import ComplexityReport, count_flops, count_params
from .data import Sample, SynthSpec, generate_synthetic, load_dataset, split_dataset
from .gradcheck import finite_diff_gradcheck
from .losses import (
    DistillWeights,
    attention_transfer_loss,
    bce_dice_loss,
    distill_loss,
    dkd_loss,
    gradient_matching_loss,
)
from .metrics import dsc, iou
from .model import (
    ConfigError,
    ModelConfig,
    UltraLBMUNet,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .ssm import BiMamba, Mamba, flip_sequence, selective_scan, selective_scan_ref
from .train import TrainConfig, distill_train, train

__version__ = "0.1.0"

__all__ = [
    "BiMamba",
    "ComplexityReport",
    "ConfigError",
    "DistillWeights",
    "GLMBPBlock",
    "LMBPBlock",
    "Mamba",
    "ModelConfig",
    "Sample",
    "SynthSpec",
    "TrainConfig",
    "UltraLBMUNet",
    "attention_transfer_loss",
    "bce_dice_loss",
    "build_model",
    "count_flops",
    "count_params",
    "distill_loss",
    "distill_train",
    "dkd_loss",
    "dsc",
    "finite_diff_gradcheck",
    "flip_sequence",
    "generate_synthetic",
    "gradient_matching_loss",
    "iou",
    "load_checkpoint",
    "load_dataset",
    "save_checkpoint",
    "selective_scan",
    "selective_scan_ref",
    "split_dataset",
    "train",
]
