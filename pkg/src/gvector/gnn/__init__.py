from .layers import ATTENTION_VARIANTS, VARIANTS, attention_coeffs, make_layer
from .model import (
    BatchNormState,
    GnnConfig,
    GnnModel,
    backward,
    batch_norm,
    forward,
    load_checkpoint,
    masked_cross_entropy,
    save_checkpoint,
)
from .ops import GraphOps
from .optim import AdamState, adam_step
from .train import extract_gvectors, predict, train, write_loss_history

__all__ = [
    "ATTENTION_VARIANTS",
    "AdamState",
    "BatchNormState",
    "GnnConfig",
    "GnnModel",
    "GraphOps",
    "VARIANTS",
    "adam_step",
    "attention_coeffs",
    "backward",
    "batch_norm",
    "extract_gvectors",
    "forward",
    "load_checkpoint",
    "make_layer",
    "masked_cross_entropy",
    "predict",
    "save_checkpoint",
    "train",
    "write_loss_history",
]
