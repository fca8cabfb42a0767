"""Module wrappers around the functional primitives.

Each layer owns its parameters and the cache from its most recent
forward, so blocks compose as ``y = layer.forward(x, train)`` followed by
``dx = layer.backward(dy)`` in reverse order.
"""

import numpy as np

from . import functional as F
from .params import Module, Param, uniform_init


class Conv2d(Module):
    """Learnable 2D convolution, square odd kernel, symmetric padding."""

    def __init__(self, c_in, c_out, k, *, rng, stride=1, dilation=1, padding=0,
                 groups=1, bias=True, dtype=np.float32):
        if c_in % groups != 0:
            raise ValueError(f"in channels {c_in} not divisible by groups {groups}")
        fan_in = (c_in // groups) * k * k
        self.weight = Param(uniform_init(rng, (c_out, c_in // groups, k, k), fan_in, dtype))
        self.bias = Param(np.zeros(c_out, dtype=dtype)) if bias else None
        self._stride = stride
        self._dilation = dilation
        self._padding = padding
        self._groups = groups
        self._cache = None

    def forward(self, x, train=False):
        out, self._cache = F.conv2d_forward(
            x, self.weight.value, None if self.bias is None else self.bias.value,
            stride=self._stride, dilation=self._dilation,
            padding=self._padding, groups=self._groups,
        )
        return out

    def backward(self, dout):
        dx, dw, db = F.conv2d_backward(dout, self._cache)
        self.weight.add_grad(dw)
        if self.bias is not None:
            self.bias.add_grad(db)
        return dx


class FixedConv2d(Module):
    """Convolution with a frozen weight buffer (no gradient to the weight).

    Used for the fixed filter banks; accepts even kernels with asymmetric
    padding, which the learnable Conv2d deliberately rejects.
    """

    def __init__(self, weight, *, padding, groups=1, dtype=np.float32):
        self.weight = Param(np.asarray(weight, dtype=dtype), requires_grad=False)
        self._padding = padding
        self._groups = groups
        self._cache = None

    def forward(self, x, train=False):
        out, self._cache = F.conv2d_core_forward(
            x, self.weight.value, None, padding=self._padding, groups=self._groups
        )
        return out

    def backward(self, dout):
        dx, _, _ = F.conv2d_core_backward(dout, self._cache, need_weight_grad=False)
        return dx


class PointwiseConv(Module):
    """1x1 convolution mixing channels per pixel."""

    def __init__(self, c_in, c_out, *, rng, bias=True, dtype=np.float32):
        self.weight = Param(uniform_init(rng, (c_out, c_in, 1, 1), c_in, dtype))
        self.bias = Param(np.zeros(c_out, dtype=dtype)) if bias else None
        self._cache = None

    def forward(self, x, train=False):
        out, self._cache = F.pointwise_forward(
            x, self.weight.value, None if self.bias is None else self.bias.value
        )
        return out

    def backward(self, dout):
        dx, dw, db = F.pointwise_backward(dout, self._cache)
        self.weight.add_grad(dw)
        if self.bias is not None:
            self.bias.add_grad(db)
        return dx


class ChannelNorm(Module):
    """Per-channel batch normalization with running statistics."""

    def __init__(self, c, *, momentum=0.1, eps=F.NORM_EPS, dtype=np.float32):
        self.scale = Param(np.ones(c, dtype=dtype))
        self.shift = Param(np.zeros(c, dtype=dtype))
        self.running_mean = Param(np.zeros(c, dtype=dtype), requires_grad=False)
        self.running_var = Param(np.ones(c, dtype=dtype), requires_grad=False)
        self._momentum = momentum
        self._eps = eps
        self._cache = None

    def forward(self, x, train=False):
        out, self._cache = F.channel_norm_forward(
            x, self.scale.value, self.shift.value,
            self.running_mean.value, self.running_var.value,
            train=train, momentum=self._momentum, eps=self._eps,
        )
        return out

    def backward(self, dout):
        dx, dscale, dshift = F.channel_norm_backward(dout, self._cache)
        self.scale.add_grad(dscale)
        self.shift.add_grad(dshift)
        return dx


class Activation(Module):
    def __init__(self, kind="relu"):
        if kind not in ("relu", "sigmoid"):
            raise ValueError(f"unknown activation kind {kind!r}")
        self.kind = kind
        self._cache = None

    def forward(self, x, train=False):
        out, self._cache = F.activation_forward(x, self.kind)
        return out

    def backward(self, dout):
        return F.activation_backward(dout, self._cache, self.kind)


class AvgPool(Module):
    """Window mean; padded cells excluded from the divisor."""

    def __init__(self, k=3, stride=1, padding=1):
        self._k = k
        self._stride = stride
        self._padding = padding
        self._cache = None

    def forward(self, x, train=False):
        out, self._cache = F.avg_pool_forward(x, self._k, self._stride, self._padding)
        return out

    def backward(self, dout):
        return F.avg_pool_backward(dout, self._cache)


class UpsampleNearest(Module):
    def __init__(self, factor=2):
        self._factor = factor
        self._cache = None

    def forward(self, x, train=False):
        out, self._cache = F.upsample_nearest_forward(x, self._factor)
        return out

    def backward(self, dout):
        return F.upsample_nearest_backward(dout, self._cache)


class GlobalAvgPool(Module):
    def forward(self, x, train=False):
        out, self._cache = F.global_avg_pool_forward(x)
        return out

    def backward(self, dout):
        return F.global_avg_pool_backward(dout, self._cache)


class Sequential(Module):
    """Run modules in order; backward unwinds them in reverse."""

    def __init__(self, *modules):
        self.modules = list(modules)

    def forward(self, x, train=False):
        for m in self.modules:
            x = m.forward(x, train=train)
        return x

    def backward(self, dout):
        for m in reversed(self.modules):
            dout = m.backward(dout)
        return dout


class Affine(Module):
    """Dense map on [B, D_in] vectors."""

    def __init__(self, d_in, d_out, *, rng, bias=True, dtype=np.float32):
        self.weight = Param(uniform_init(rng, (d_out, d_in), d_in, dtype))
        self.bias = Param(np.zeros(d_out, dtype=dtype)) if bias else None
        self._cache = None

    def forward(self, x, train=False):
        out, self._cache = F.affine_forward(
            x, self.weight.value, None if self.bias is None else self.bias.value
        )
        return out

    def backward(self, dout):
        dx, dw, db = F.affine_backward(dout, self._cache)
        self.weight.add_grad(dw)
        if self.bias is not None:
            self.bias.add_grad(db)
        return dx
