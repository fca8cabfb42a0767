"""Spatial branch: dual-dilation residual blocks with channel attention.

Each block splits its input channels in half, runs the halves through
3x3 convolutions at dilation rates 1 and 2 (padding = dilation, so the
resolution never changes), adds a residual per branch (identity when the
channel count is unchanged, a learned 1x1 projection otherwise), and
fuses the concatenated branches with a pointwise convolution plus
normalization and activation.  The full unit is block(C -> C/2),
channel-attention gating, block(C/2 -> C).
"""

import numpy as np

from .nn import (
    Activation,
    Affine,
    ChannelNorm,
    Conv2d,
    GlobalAvgPool,
    Module,
    PointwiseConv,
)

BRANCH_DILATIONS = (1, 2)


def effective_kernel(k, dilation):
    """Span of a dilated kernel: k + (k-1)(dilation-1)."""
    return k + (k - 1) * (dilation - 1)


def stacked_receptive_field(effective_kernels):
    """Receptive field of stride-1 layers composed in sequence."""
    rf = 1
    for k in effective_kernels:
        rf += k - 1
    return rf


class DualDilationBlock(Module):
    """Channel-split block with dilation-(1,2) branches and residuals."""

    def __init__(self, c_in, c_out, *, rng, activation="relu", dtype=np.float32):
        if c_in % 2 != 0 or c_out % 2 != 0:
            raise ValueError(f"channel counts must be even, got {c_in} -> {c_out}")
        half_in, half_out = c_in // 2, c_out // 2
        # biases are omitted throughout: the block ends in a train-mode norm,
        # which cancels any per-channel constant
        self.branch_a = Conv2d(half_in, half_out, 3, rng=rng, dilation=1,
                               padding=1, bias=False, dtype=dtype)
        self.branch_b = Conv2d(half_in, half_out, 3, rng=rng, dilation=2,
                               padding=2, bias=False, dtype=dtype)
        if half_in != half_out:
            self.proj_a = PointwiseConv(half_in, half_out, rng=rng, bias=False,
                                        dtype=dtype)
            self.proj_b = PointwiseConv(half_in, half_out, rng=rng, bias=False,
                                        dtype=dtype)
        else:
            self.proj_a = None
            self.proj_b = None
        self.fuse = PointwiseConv(c_out, c_out, rng=rng, bias=False, dtype=dtype)
        self.norm = ChannelNorm(c_out, dtype=dtype)
        self.act = Activation(activation)
        self._half_in = half_in
        self._half_out = half_out

    def forward(self, x, train=False):
        if x.shape[1] != 2 * self._half_in:
            raise ValueError(
                f"expected {2 * self._half_in} input channels, got {x.shape[1]}"
            )
        xa = x[:, :self._half_in]
        xb = x[:, self._half_in:]
        ya = self.branch_a.forward(xa)
        yb = self.branch_b.forward(xb)
        ya = ya + (xa if self.proj_a is None else self.proj_a.forward(xa))
        yb = yb + (xb if self.proj_b is None else self.proj_b.forward(xb))
        out = np.concatenate([ya, yb], axis=1)
        out = self.fuse.forward(out)
        out = self.norm.forward(out, train=train)
        return self.act.forward(out)

    def backward(self, dout):
        d = self.act.backward(dout)
        d = self.norm.backward(d)
        d = self.fuse.backward(d)
        da = d[:, :self._half_out]
        db = d[:, self._half_out:]
        dxa = self.branch_a.backward(da)
        dxa = dxa + (da if self.proj_a is None else self.proj_a.backward(da))
        dxb = self.branch_b.backward(db)
        dxb = dxb + (db if self.proj_b is None else self.proj_b.backward(db))
        return np.concatenate([dxa, dxb], axis=1)

    def branch_receptive_fields(self):
        return tuple(effective_kernel(3, d) for d in BRANCH_DILATIONS)


class ChannelAttention(Module):
    """Squeeze-excite gate: per-channel sigmoid weights times the input."""

    def __init__(self, c, *, rng, reduction=4, dtype=np.float32):
        if c % reduction != 0:
            raise ValueError(f"reduction {reduction} must divide channels {c}")
        self.gap = GlobalAvgPool()
        self.fc1 = Affine(c, c // reduction, rng=rng, bias=False, dtype=dtype)
        self.act = Activation("relu")
        self.fc2 = Affine(c // reduction, c, rng=rng, bias=False, dtype=dtype)
        self.gate = Activation("sigmoid")
        self._cache = None

    def gates(self, x, train=False):
        s = self.gap.forward(x)
        h = self.act.forward(self.fc1.forward(s))
        return self.gate.forward(self.fc2.forward(h))

    def forward(self, x, train=False):
        g = self.gates(x, train=train)
        self._cache = (x, g)
        return g[:, :, None, None] * x

    def backward(self, dout):
        x, g = self._cache
        dg = (dout * x).sum(axis=(2, 3))
        dx = dout * g[:, :, None, None]
        d = self.gate.backward(dg)
        d = self.fc2.backward(d)
        d = self.act.backward(d)
        d = self.fc1.backward(d)
        dx += self.gap.backward(d)
        return dx


class SpatialUnit(Module):
    """Two dual-dilation blocks around a channel-attention bottleneck.

    Channel contract: C -> C/2 -> C, asserted on every forward.
    """

    def __init__(self, c, *, rng, reduction=4, activation="relu", dtype=np.float32):
        if c % 4 != 0:
            raise ValueError(f"channel count must be divisible by 4, got {c}")
        self.block1 = DualDilationBlock(c, c // 2, rng=rng, activation=activation,
                                        dtype=dtype)
        self.attn = ChannelAttention(c // 2, rng=rng, reduction=reduction,
                                     dtype=dtype)
        self.block2 = DualDilationBlock(c // 2, c, rng=rng, activation=activation,
                                        dtype=dtype)
        self._c = c

    def forward(self, x, train=False):
        mid = self.block1.forward(x, train=train)
        assert mid.shape[1] == self._c // 2, "mid width must be C/2"
        gated = self.attn.forward(mid, train=train)
        out = self.block2.forward(gated, train=train)
        assert out.shape[1] == self._c, "output width must be C"
        return out

    def backward(self, dout):
        d = self.block2.backward(dout)
        d = self.attn.backward(d)
        return self.block1.backward(d)

    def max_conv_receptive_field(self):
        """Widest convolutional path: the dilation-2 branch of both blocks."""
        wide = effective_kernel(3, BRANCH_DILATIONS[1])
        return stacked_receptive_field([wide, wide])
