"""Minimal dense-tensor engine: layers, reverse-mode gradients, Adam."""

from .adam import AdamState, adam_step
from .backend import KERNEL_BACKEND
from .graph import ForwardContext, GradStore, ModelGraph, Sequential, sequential_from_specs
from .init import xavier_bound, xavier_init, xavier_uniform
from .layers import (
    BatchNorm,
    Conv2D,
    Dense,
    Flatten,
    Layer,
    LayerSpec,
    ParamBlock,
    ReLU,
    conv_geometry,
    conv_spec,
    dense_spec,
    make_layer,
)

__all__ = [
    "AdamState",
    "adam_step",
    "KERNEL_BACKEND",
    "ForwardContext",
    "GradStore",
    "ModelGraph",
    "Sequential",
    "sequential_from_specs",
    "xavier_bound",
    "xavier_init",
    "xavier_uniform",
    "BatchNorm",
    "Conv2D",
    "Dense",
    "Flatten",
    "Layer",
    "LayerSpec",
    "ParamBlock",
    "ReLU",
    "conv_geometry",
    "conv_spec",
    "dense_spec",
    "make_layer",
]
