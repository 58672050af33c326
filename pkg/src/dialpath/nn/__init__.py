from .checkpoint import load_arrays, save_arrays
from .layers import (
    S_MASKED,
    Dropout,
    Embedding,
    LayerNorm,
    Linear,
    MLP,
    ModelParams,
    Module,
    MultiHeadAttention,
    MultiSourceDecoderBlock,
    TransformerBlock,
    causal_mask,
    cross_entropy_with_label_smoothing,
    masked_softmax,
    pos_encode,
)
from .optim import Adam, AdamState, WarmupSchedule, adam_step
from .tensor import Tensor, backward, no_grad, parameter

__all__ = [
    "Adam", "AdamState", "Dropout", "Embedding", "LayerNorm", "Linear", "MLP", "ModelParams", "Module",
    "MultiHeadAttention", "MultiSourceDecoderBlock", "S_MASKED", "Tensor", "TransformerBlock", "WarmupSchedule",
    "adam_step", "backward", "causal_mask", "cross_entropy_with_label_smoothing", "load_arrays", "masked_softmax",
    "no_grad", "parameter", "pos_encode", "save_arrays",
]
