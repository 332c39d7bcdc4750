"""A small float64 reverse-mode differentiation core."""
from efr.autograd.tensor import (
    LAYER_NORM_EPS, ShapeError, Tape, Tensor, add, as_tensor, backward, clip_min, concat, div, dropout,
    embedding_lookup, exp, getitem, layer_norm, log, matmul, mean, mul, power, relu, reshape, sigmoid,
    softmax, sub, sum, tanh, transpose,
)
from efr.autograd.layers import (
    ParamStore, add_gru_params, add_transformer_params, gru_cell, gru_sequence, linear,
    multi_head_attention, positional_encoding, transformer_encoder, transformer_encoder_layer,
)
from efr.autograd.gradcheck import GradCheckResult, grad_check, relative_error
