"""Differentiable building blocks: functional primitives, layer modules,
parameter containers, and the finite-difference gradient checker."""

from . import functional
from .gradcheck import GradCheckReport, cast_params, check_module, grad_check
from .layers import (
    Activation,
    Affine,
    AvgPool,
    ChannelNorm,
    Conv2d,
    FixedConv2d,
    GlobalAvgPool,
    PointwiseConv,
    Sequential,
    UpsampleNearest,
)
from .params import Module, Param, uniform_init

__all__ = [
    "Activation",
    "Affine",
    "AvgPool",
    "ChannelNorm",
    "Conv2d",
    "FixedConv2d",
    "GlobalAvgPool",
    "GradCheckReport",
    "Module",
    "Param",
    "PointwiseConv",
    "Sequential",
    "UpsampleNearest",
    "cast_params",
    "check_module",
    "functional",
    "grad_check",
    "uniform_init",
]
