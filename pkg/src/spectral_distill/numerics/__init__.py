from . import tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, gradient_check
from .nn import (
    BatchNorm1d,
    Dropout,
    EncoderLayer,
    EncoderLayerConfig,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    ParameterSet,
    TransformerEncoder,
    multi_head_self_attention,
    scaled_sigmoid,
    set_rng,
    sinusoidal_positional_encoding,
    softmax,
    transformer_encoder_layer,
)
from .tensor import Tensor, no_grad

__all__ = [
    "BatchNorm1d",
    "Dropout",
    "EncoderLayer",
    "EncoderLayerConfig",
    "GradCheckReport",
    "LayerNorm",
    "Linear",
    "Module",
    "Parameter",
    "ParameterSet",
    "Tensor",
    "TransformerEncoder",
    "gradient_check",
    "load_checkpoint",
    "multi_head_self_attention",
    "no_grad",
    "save_checkpoint",
    "scaled_sigmoid",
    "set_rng",
    "sinusoidal_positional_encoding",
    "softmax",
    "tensor",
    "transformer_encoder_layer",
]
