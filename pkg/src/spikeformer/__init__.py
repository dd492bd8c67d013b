"""Spiking-transformer engine: softmax-free binary attention, surrogate-gradient
training, and synaptic-operation/energy profiling, on a self-contained
reverse-mode tensor core."""

from .attention import AttentionCost, SpikingSelfAttention, SsaConfig, flop_sop_cost, sparse_dot
from .errors import (CheckpointError, ConfigError, DataError, InstrumentationError,
                     ShapeError, SpikeformerError, TrainingDiverged)
from .model import ModelConfig, SpikeTransformer, replicate_static_input
from .neuron import LifNeuron, LifParams, LifState, lif_forward, surrogate_grad
from .tensor import Tensor, no_grad, set_default_dtype, using_dtype
from .trainer import AdamW, TrainConfig, cosine_lr, eval_loop, train_loop

__version__ = "0.1.0"

__all__ = [
    "AdamW", "AttentionCost", "CheckpointError", "ConfigError", "DataError",
    "InstrumentationError", "LifNeuron", "LifParams", "LifState", "ModelConfig",
    "ShapeError", "SpikeTransformer", "SpikeformerError", "SpikingSelfAttention",
    "SsaConfig", "Tensor", "TrainConfig", "TrainingDiverged", "cosine_lr",
    "eval_loop", "flop_sop_cost", "lif_forward", "no_grad",
    "replicate_static_input", "set_default_dtype", "sparse_dot", "surrogate_grad",
    "train_loop", "using_dtype",
]
