"""Minimal float64 neural substrate: autodiff tensors, layers, Adam, checkpoints."""

from hifinet.nn.checkpoint import load_checkpoint, save_checkpoint
from hifinet.nn.layers import LSTM, Dense, LayerNorm, ParamStore, adam_step, as_steps, dense_forward, lstm_forward
from hifinet.nn.tensor import Tensor, backward, no_grad, cross_entropy, mse, softmax

__all__ = [
    "LSTM", "Dense", "LayerNorm", "ParamStore", "Tensor", "adam_step", "as_steps", "backward",
    "cross_entropy", "dense_forward", "load_checkpoint", "lstm_forward", "mse", "no_grad", "save_checkpoint", "softmax",
]
