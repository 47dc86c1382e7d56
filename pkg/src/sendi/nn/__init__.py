"""Small reverse-mode autodiff engine and the layers the set models are built from."""

from .autodiff import (DimensionError, NumericError, Tensor, attention, concat, ensure_tensor,
                       layer_norm, matmul, parameter, softmax, sorted_pool)
from .checkpoint import CheckpointError, dump_checkpoint, load_checkpoint
from .layers import (ACTIVATIONS, POOLS, MLP, ConfigurationError, Dense, EquivariantLayer,
                     LayerNorm, Module, MultiHeadAttention, RowFF, activate, forward_dense,
                     multi_head)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "ACTIVATIONS", "POOLS", "Adam", "AdamState", "CheckpointError", "ConfigurationError",
    "Dense", "DimensionError", "EquivariantLayer", "LayerNorm", "MLP", "Module",
    "MultiHeadAttention", "NumericError", "RowFF", "Tensor", "activate", "adam_step",
    "attention", "concat", "dump_checkpoint", "ensure_tensor", "forward_dense", "layer_norm",
    "load_checkpoint", "matmul", "multi_head", "parameter", "softmax", "sorted_pool",
]
