"""Small numpy neural-network engine with analytic gradients."""

from .layers import (BatchNorm, Conv1D, Conv2D, Dense, Flatten, Layer, MaxPool2x2, ReLU, Reshape,
                     Softmax, TransposedConv1D, conv1d_forward, conv2d_forward, softmax,
                     transposed_conv1d_forward)
from .losses import cross_entropy, kl_gaussian, mse
from .network import Sequential, TrainHistory, from_document, load, loads, one_hot, save, dumps, \
    to_document, train
from .optim import AdamState, Optimizer, TrainConfig, adam_step, sgd_step

__all__ = [
    "BatchNorm", "Conv1D", "Conv2D", "Dense", "Flatten", "Layer", "MaxPool2x2", "ReLU", "Reshape", "Softmax",
    "TransposedConv1D", "conv1d_forward", "conv2d_forward", "softmax", "transposed_conv1d_forward",
    "cross_entropy", "kl_gaussian", "mse",
    "Sequential", "TrainHistory", "from_document", "load", "loads", "one_hot", "save", "dumps", "to_document",
    "train",
    "AdamState", "Optimizer", "TrainConfig", "adam_step", "sgd_step",
]
