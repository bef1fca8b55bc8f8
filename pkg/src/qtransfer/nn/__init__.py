"""Minimal numpy neural-network engine (NHWC, float32)."""
from .functional import cross_entropy as loss_cross_entropy
from .functional import softmax
from .layers import KINDS, Ctx, LayerSpec, build_layers
from .model import (
    ForwardTrace,
    Model,
    backward,
    backward_from_logits,
    forward,
    input_gradient,
    jacobian_wrt_input,
    logits_of,
    predict,
    softmax_jacobian_rows,
)

__all__ = [
    "KINDS", "Ctx", "ForwardTrace", "LayerSpec", "Model", "backward", "backward_from_logits",
    "build_layers", "forward", "input_gradient", "jacobian_wrt_input", "logits_of",
    "loss_cross_entropy", "predict", "softmax", "softmax_jacobian_rows",
]
