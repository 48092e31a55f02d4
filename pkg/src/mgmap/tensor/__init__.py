"""Numpy-backed tensors with reverse-mode autodiff."""
from .core import DimensionError, Graph, NumericError, Tensor, as_tensor, no_grad, precision, topological_order
from .nn import batch_norm, bilstm, conv2d, gru_cell, lstm_cell, scaled_dot_attention, transpose_conv2d
from .ops import (add, cast, concat, cross_entropy_per_pixel, div, embedding_lookup, exp, kl_divergence, linear, log,
                  matmul, mean, mse, mul, neg, relu, reshape, sigmoid, slice_, softmax, squared_error, stack, sub,
                  sum_, tanh, transpose)
from .optim import Adam, AdamState, adam_step, clip_grad_norm
