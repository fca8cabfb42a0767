"""Frequency branch: channel groups filtered by fixed kernel banks.

The input's channels are split into N groups; group n is convolved
depthwise with the S fixed kernels of bank group n (each channel meets
each kernel), passed through activation and a resolution-preserving
average pool, and the concatenated responses are mixed back to C channels
by a learned pointwise convolution with normalization and activation.
Only the pointwise convolution and the norm learn; the banks are buffers.
"""

import numpy as np

from .nn import Activation, AvgPool, ChannelNorm, FixedConv2d, Module, PointwiseConv


def split_channels(x, n):
    """Split [B, C, H, W] into n equal channel groups, order-preserving."""
    c = x.shape[1]
    if n < 1:
        raise ValueError(f"group count must be >= 1, got {n}")
    if c % n != 0:
        raise ValueError(f"channel count {c} not divisible by group count {n}")
    step = c // n
    return [x[:, i * step:(i + 1) * step] for i in range(n)]


def _bank_weight(kernels, c_group, dtype):
    """Depthwise weight [(c_group * S), 1, k, k]: channel c with kernel s
    lands on output slot c*S + s."""
    k = kernels[0].k
    if any(kern.k != k for kern in kernels):
        raise ValueError("all kernels in a group must share one size")
    s = len(kernels)
    weight = np.zeros((c_group * s, 1, k, k), dtype=dtype)
    for ci in range(c_group):
        for si, kern in enumerate(kernels):
            weight[ci * s + si, 0] = kern.values
    return weight


def _bank_padding(k):
    if k % 2 == 1:
        return ((k - 1) // 2,) * 4
    if k == 2:
        return (1, 0, 1, 0)  # top, bottom, left, right
    raise ValueError(f"unsupported even kernel size {k}")


class FilterBlock(Module):
    """One group's pipeline: fixed depthwise conv, activation, window mean."""

    def __init__(self, c_group, kernels, *, activation="relu",
                 pool=(3, 1, 1), dtype=np.float32):
        if len(kernels) == 0:
            raise ValueError("kernel list must not be empty")
        k = kernels[0].k
        self.conv = FixedConv2d(_bank_weight(kernels, c_group, dtype),
                                padding=_bank_padding(k), groups=c_group,
                                dtype=dtype)
        self.act = Activation(activation)
        self.pool = AvgPool(*pool)

    def forward(self, x, train=False):
        return self.pool.forward(self.act.forward(self.conv.forward(x)))

    def backward(self, dout):
        return self.conv.backward(self.act.backward(self.pool.backward(dout)))


class FrequencyUnit(Module):
    """Full frequency branch mapping [B, C, H, W] -> [B, C_out, H, W]."""

    def __init__(self, c, bank, *, rng, c_out=None, n_groups=4,
                 activation="relu", pool=(3, 1, 1), dtype=np.float32):
        if bank.n_groups != n_groups:
            raise ValueError(
                f"bank has {bank.n_groups} groups but the unit expects {n_groups}"
            )
        if c % n_groups != 0:
            raise ValueError(f"channel count {c} not divisible by {n_groups} groups")
        c_out = c if c_out is None else c_out
        c_group = c // n_groups
        self.blocks = [
            FilterBlock(c_group, list(group), activation=activation,
                        pool=pool, dtype=dtype)
            for group in bank.groups
        ]
        mid_channels = c * bank.n_scales
        # bias would be cancelled by the norm's train-mode standardization
        self.fuse = PointwiseConv(mid_channels, c_out, rng=rng, bias=False, dtype=dtype)
        self.norm = ChannelNorm(c_out, dtype=dtype)
        self.act = Activation(activation)
        self._n_groups = n_groups
        self._group_width = c_group
        self._last_mid = None

    def forward(self, x, train=False):
        groups = split_channels(x, self._n_groups)
        mids = [blk.forward(g, train=train) for blk, g in zip(self.blocks, groups)]
        mid = np.concatenate(mids, axis=1)
        self._last_mid = mid
        out = self.fuse.forward(mid)
        out = self.norm.forward(out, train=train)
        return self.act.forward(out)

    def backward(self, dout):
        d = self.act.backward(dout)
        d = self.norm.backward(d)
        dmid = self.fuse.backward(d)
        width = dmid.shape[1] // self._n_groups
        parts = [
            blk.backward(dmid[:, i * width:(i + 1) * width])
            for i, blk in enumerate(self.blocks)
        ]
        return np.concatenate(parts, axis=1)

    @property
    def last_mid(self):
        """Concatenated per-group responses from the most recent forward."""
        return self._last_mid
