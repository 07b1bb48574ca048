"""Minimal numpy tensor library with reverse-mode autodiff and the layers the parser needs."""

from .autograd import (Tensor, as_tensor, concat, default_dtype, exp, get_default_dtype, layer_norm,
                       leaky_relu, log, log_softmax, lstm_sequence, masked_fill, matmul, nll_loss,
                       no_grad, relu, scatter_add, segment_softmax, set_default_dtype, sigmoid,
                       softmax, stack, take, tanh)
from .gradcheck import GradCheckError, grad_check, relative_error
from .nn import (GATLayer, LSTM, Embedding, FeedForward, LayerNorm, Linear, Module,
                 MultiHeadAttention, Parameter, TransformerConv, TransformerDecoderLayer,
                 TransformerEncoderLayer, causal_mask, count_attention, sinusoid)
from .optim import SGD, Adam

__all__ = [
    "Tensor", "as_tensor", "concat", "default_dtype", "exp", "get_default_dtype", "layer_norm",
    "leaky_relu", "log", "log_softmax", "lstm_sequence", "masked_fill", "matmul", "nll_loss",
    "no_grad", "relu", "scatter_add", "segment_softmax", "set_default_dtype", "sigmoid", "softmax",
    "stack", "take", "tanh", "GradCheckError", "grad_check", "relative_error", "GATLayer", "LSTM",
    "Embedding", "FeedForward", "LayerNorm", "Linear", "Module", "MultiHeadAttention", "Parameter",
    "TransformerConv", "TransformerDecoderLayer", "TransformerEncoderLayer", "causal_mask",
    "count_attention", "sinusoid", "SGD", "Adam",
]
