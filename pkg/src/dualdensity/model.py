"""Full extractor: stem, dual-branch fusion, and the density head.

Layout for an H x W image (H, W multiples of 8):
  stem: three stride-2 convolutions, 3 -> 16 -> 32 -> C, feature stride 8
  fusion: frequency branch and spatial branch concatenated and mixed
      back to C channels by a pointwise convolution
  head: two conv+upsample stages and a 1x1 projection to a single
      non-negative channel, stride 8 -> 2 relative to the image

When no kernel family is configured the frequency branch is absent and
its concat slots are zero, so fusion reduces to a learned map of the
spatial branch alone; this is the dilated-only baseline used in the
ablation and convergence experiments.
"""

import numpy as np

from .frequency import FrequencyUnit
from .kernels import build_bank
from .nn import (
    Activation,
    ChannelNorm,
    Conv2d,
    Module,
    PointwiseConv,
    Sequential,
    UpsampleNearest,
)
from .spatial import SpatialUnit

STEM_WIDTHS = (16, 32)
STEM_STRIDE = 8
HEAD_UPSAMPLE = 4
DENSITY_STRIDE = STEM_STRIDE // HEAD_UPSAMPLE  # density cells are 2x2 px


class Stem(Module):
    """Three stride-2 conv/norm/act stages standing in for a real backbone."""

    def __init__(self, c, *, rng, activation="relu", dtype=np.float32):
        widths = (3,) + STEM_WIDTHS + (c,)
        stages = []
        for c_in, c_out in zip(widths[:-1], widths[1:]):
            stages += [
                Conv2d(c_in, c_out, 3, rng=rng, stride=2, padding=1,
                       bias=False, dtype=dtype),
                ChannelNorm(c_out, dtype=dtype),
                Activation(activation),
            ]
        self.stages = Sequential(*stages)

    def forward(self, x, train=False):
        return self.stages.forward(x, train=train)

    def backward(self, dout):
        return self.stages.backward(dout)


class DualDomainFusion(Module):
    """Concat of the frequency and spatial branches, mixed back to C."""

    def __init__(self, c, *, rng, family="gabor", reduction=4,
                 activation="relu", dtype=np.float32):
        if c % 4 != 0:
            raise ValueError(f"channel count must be divisible by 4, got {c}")
        # one child stream per submodule: the spatial branch and the mixing
        # convolution must draw the same initial values whether or not the
        # frequency branch exists, so family comparisons are paired by seed
        freq_rng, spat_rng, fuse_rng = rng.spawn(3)
        if family == "none":
            self.freq = None
        else:
            bank = build_bank(family)
            self.freq = FrequencyUnit(c, bank, rng=freq_rng,
                                      n_groups=bank.n_groups,
                                      activation=activation, dtype=dtype)
        self.spat = SpatialUnit(c, rng=spat_rng, reduction=reduction,
                                activation=activation, dtype=dtype)
        self.fuse = PointwiseConv(2 * c, c, rng=fuse_rng, bias=False, dtype=dtype)
        self.norm = ChannelNorm(c, dtype=dtype)
        self.act = Activation(activation)
        self._c = c

    def forward(self, x, train=False):
        fs = self.spat.forward(x, train=train)
        if self.freq is None:
            ff = np.zeros_like(fs)
        else:
            ff = self.freq.forward(x, train=train)
        if ff.shape != fs.shape:
            raise AssertionError(
                f"branch shapes diverged: {ff.shape} vs {fs.shape}"
            )
        out = self.fuse.forward(np.concatenate([ff, fs], axis=1))
        out = self.norm.forward(out, train=train)
        return self.act.forward(out)

    def backward(self, dout):
        d = self.act.backward(dout)
        d = self.norm.backward(d)
        d = self.fuse.backward(d)
        df = d[:, :self._c]
        ds = d[:, self._c:]
        dx = self.spat.backward(ds)
        if self.freq is not None:
            dx = dx + self.freq.backward(df)
        return dx


class DensityHead(Module):
    """C-channel features -> single-channel map at 4x the feature size."""

    def __init__(self, c, *, rng, activation="relu", dtype=np.float32):
        if c % 4 != 0:
            raise ValueError(f"head needs channels divisible by 4, got {c}")
        # each stage upsamples before convolving: the last 3x3 conv must
        # run on the full-resolution grid, otherwise the map is constant
        # over 2x2 blocks and can never contain a strict local maximum
        self.stage1 = Sequential(
            UpsampleNearest(2),
            Conv2d(c, c // 2, 3, rng=rng, padding=1, dtype=dtype),
            Activation(activation),
        )
        self.stage2 = Sequential(
            UpsampleNearest(2),
            Conv2d(c // 2, c // 4, 3, rng=rng, padding=1, dtype=dtype),
            Activation(activation),
        )
        project = PointwiseConv(c // 4, 1, rng=rng, dtype=dtype)
        # small positive bias keeps the output relu alive at init; with few
        # input channels an all-negative weight draw would otherwise clamp
        # the map to zero and kill every gradient
        project.bias.value = np.full_like(project.bias.value, 0.01)
        self.final = Sequential(
            project,
            Activation("relu"),  # non-negativity of the density map
        )

    def forward(self, x, train=False):
        out = self.stage1.forward(x, train=train)
        out = self.stage2.forward(out, train=train)
        return self.final.forward(out, train=train)

    def backward(self, dout):
        d = self.final.backward(dout)
        d = self.stage2.backward(d)
        return self.stage1.backward(d)


class DensityNet(Module):
    """End-to-end image -> density map extractor."""

    def __init__(self, c, *, rng, family="gabor", reduction=4,
                 activation="relu", dtype=np.float32):
        stem_rng, fusion_rng, head_rng = rng.spawn(3)
        self.stem = Stem(c, rng=stem_rng, activation=activation, dtype=dtype)
        self.fusion = DualDomainFusion(c, rng=fusion_rng, family=family,
                                       reduction=reduction,
                                       activation=activation, dtype=dtype)
        self.head = DensityHead(c, rng=head_rng, activation=activation,
                                dtype=dtype)
        self.family = family
        self.width = c

    def forward(self, image, train=False):
        h, w = image.shape[2], image.shape[3]
        if h % STEM_STRIDE or w % STEM_STRIDE:
            pad_h = (-h) % STEM_STRIDE
            pad_w = (-w) % STEM_STRIDE
            raise ValueError(
                f"image {h}x{w} is not a multiple of {STEM_STRIDE}; "
                f"pad by ({pad_h}, {pad_w}) to {h + pad_h}x{w + pad_w}"
            )
        out = self.stem.forward(image, train=train)
        out = self.fusion.forward(out, train=train)
        return self.head.forward(out, train=train)

    def backward(self, dout):
        d = self.head.backward(dout)
        d = self.fusion.backward(d)
        return self.stem.backward(d)


def build_model(c, family, seed, *, reduction=4, dtype=np.float32):
    """Deterministic model construction: one seed, one parameter stream."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    return DensityNet(c, rng=rng, family=family, reduction=reduction, dtype=dtype)
