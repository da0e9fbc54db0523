"""
Neural network core
Lõi CNN viết bằng numpy: layers, loss, optimizers, checkpoint
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .hyperparams import PROFILES, VERIFIED_CONFIG, VERIFIED_CONFIG_L2, Hyperparams, make_hyperparams
from .model import (
    LayerSpec,
    ModelSpec,
    Weights,
    backprop,
    build_model,
    count_params,
    forward,
    init_weights,
    make_dropout_masks,
    predict,
    spec_from_text,
    spec_to_text,
    summary_table,
)
from .optim import OptimizerState, max_norm_apply, optimizer_step
from .tensor_ops import (
    activation_apply,
    bce_loss,
    conv2d_forward,
    dropout_mask,
    maxpool2_forward,
)

__all__ = [
    "Hyperparams", "make_hyperparams", "PROFILES", "VERIFIED_CONFIG", "VERIFIED_CONFIG_L2",
    "LayerSpec", "ModelSpec", "Weights", "build_model", "count_params", "summary_table",
    "init_weights", "make_dropout_masks", "forward", "predict", "backprop",
    "spec_to_text", "spec_from_text", "OptimizerState", "optimizer_step", "max_norm_apply",
    "save_checkpoint", "load_checkpoint", "conv2d_forward", "maxpool2_forward",
    "activation_apply", "bce_loss", "dropout_mask",
]
