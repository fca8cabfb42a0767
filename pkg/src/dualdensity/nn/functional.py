"""Pure forward/backward pairs for every primitive.

Each ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes ``(grad_out, cache)``, so the pairs compose into arbitrary blocks
without hidden state.  Convolutions are im2col + GEMM; the patch tensor is
kept in the cache because both weight and input gradients reuse it.

All math runs in the dtype of the inputs: training uses float32, gradient
checks rebuild the same graphs in float64.
"""

import numpy as np

# ---------------------------------------------------------------- conv core


def _pad4(padding):
    """Normalize padding to (top, bottom, left, right)."""
    if isinstance(padding, int):
        if padding < 0:
            raise ValueError(f"padding must be >= 0, got {padding}")
        return (padding,) * 4
    pt, pb, pl, pr = padding
    return pt, pb, pl, pr


def _patch_view(xp, kh, kw, stride, dilation):
    """Read-only [B, C, kh, kw, H_out, W_out] window view of a padded map."""
    b, c, hp, wp = xp.shape
    h_out = (hp - dilation * (kh - 1) - 1) // stride + 1
    w_out = (wp - dilation * (kw - 1) - 1) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ValueError(
            f"kernel {kh}x{kw} with dilation {dilation} does not fit input {hp}x{wp}"
        )
    sb, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, kh, kw, h_out, w_out),
        strides=(sb, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
        writeable=False,
    )


def conv2d_core_forward(x, weight, bias=None, *, stride=1, dilation=1, padding=0, groups=1):
    """Cross-correlation for NCHW maps.  Accepts any kernel size and
    asymmetric (top, bottom, left, right) padding; the public ``conv2d``
    wrapper adds the odd-k / symmetric-padding contract."""
    b, c_in, h, w = x.shape
    c_out, c_in_g, kh, kw = weight.shape
    if c_in_g * groups != c_in:
        raise ValueError(
            f"weight expects {c_in_g * groups} input channels "
            f"({c_in_g} x {groups} groups) but input has {c_in}"
        )
    if c_out % groups != 0:
        raise ValueError(f"out channels {c_out} not divisible by groups {groups}")
    if stride < 1 or dilation < 1:
        raise ValueError(f"stride and dilation must be >= 1, got {stride}, {dilation}")
    pt, pb, pl, pr = _pad4(padding)

    if pt or pb or pl or pr:
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    else:
        xp = x
    view = _patch_view(xp, kh, kw, stride, dilation)
    h_out, w_out = view.shape[4], view.shape[5]
    p = h_out * w_out

    # col: [B, groups, (C_in/g)*kh*kw, P]
    col = np.ascontiguousarray(view).reshape(b, groups, c_in_g * kh * kw, p)
    w2 = weight.reshape(groups, c_out // groups, c_in_g * kh * kw)
    out = np.matmul(w2[None], col)  # [B, g, C_out/g, P]
    out = out.reshape(b, c_out, h_out, w_out)
    if bias is not None:
        out += bias.reshape(1, c_out, 1, 1)
    cache = (col, weight, x.shape, stride, dilation, (pt, pb, pl, pr),
             groups, (h_out, w_out), bias is not None)
    return out, cache


def conv2d_core_backward(dout, cache, *, need_weight_grad=True):
    """Returns (dx, dweight, dbias); dbias is None when forward had no bias,
    dweight is None when the caller marks the weight as frozen."""
    col, weight, x_shape, stride, dilation, (pt, pb, pl, pr), groups, \
        (h_out, w_out), has_bias = cache
    b, c_in, h, w = x_shape
    c_out, c_in_g, kh, kw = weight.shape

    dout2 = np.ascontiguousarray(dout).reshape(b, groups, c_out // groups, h_out * w_out)
    dbias = dout.sum(axis=(0, 2, 3)) if has_bias else None

    if need_weight_grad:
        # dW[g] = sum_b dout2[b, g] @ col[b, g].T
        dw = np.matmul(dout2, col.transpose(0, 1, 3, 2)).sum(axis=0)
        dw = dw.reshape(c_out, c_in_g, kh, kw)
    else:
        dw = None

    # dcol = W[g].T @ dout2, then scatter-add windows back onto the padded map
    w2 = weight.reshape(groups, c_out // groups, c_in_g * kh * kw)
    dcol = np.matmul(w2.transpose(0, 2, 1)[None], dout2)  # [B, g, K, P]
    dcol = dcol.reshape(b, c_in, kh, kw, h_out, w_out)

    hp, wp = h + pt + pb, w + pl + pr
    dxp = np.zeros((b, c_in, hp, wp), dtype=dout.dtype)
    for i in range(kh):
        hi = i * dilation
        for j in range(kw):
            wj = j * dilation
            dxp[:, :, hi:hi + stride * h_out:stride,
                wj:wj + stride * w_out:stride] += dcol[:, :, i, j]
    dx = dxp[:, :, pt:pt + h, pl:pl + w]
    return dx, dw, dbias


def conv2d_forward(x, weight, bias=None, *, dilation=1, padding=0, groups=1, stride=1):
    """Grouped strided dilated convolution: square odd kernels, symmetric padding.

    With ``padding = dilation`` and k = 3 the spatial size is preserved;
    in general H_out = (H + 2*padding - dilation*(k-1) - 1) // stride + 1.
    """
    kh, kw = weight.shape[2], weight.shape[3]
    if kh != kw:
        raise ValueError(f"expected a square kernel, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {kh}")
    return conv2d_core_forward(
        x, weight, bias, stride=stride, dilation=dilation, padding=padding, groups=groups
    )


conv2d_backward = conv2d_core_backward


# ------------------------------------------------------------ pointwise conv


def pointwise_forward(x, weight, bias=None):
    """1x1 convolution: per-pixel affine mix of channels."""
    b, c_in, h, w = x.shape
    c_out, c_in_w = weight.shape[0], weight.shape[1]
    if c_in_w != c_in:
        raise ValueError(f"pointwise weight expects {c_in_w} channels, input has {c_in}")
    w2 = weight.reshape(c_out, c_in)
    x2 = x.reshape(b, c_in, h * w)
    out = np.matmul(w2[None], x2).reshape(b, c_out, h, w)
    if bias is not None:
        out += bias.reshape(1, c_out, 1, 1)
    return out, (x2, w2, x.shape, bias is not None)


def pointwise_backward(dout, cache):
    x2, w2, x_shape, has_bias = cache
    b, c_in, h, w = x_shape
    c_out = w2.shape[0]
    dout2 = dout.reshape(b, c_out, h * w)
    dbias = dout.sum(axis=(0, 2, 3)) if has_bias else None
    dw = np.matmul(dout2, x2.transpose(0, 2, 1)).sum(axis=0)
    dw = dw.reshape(c_out, c_in, 1, 1)
    dx = np.matmul(w2.T[None], dout2).reshape(x_shape)
    return dx, dw, dbias


# ------------------------------------------------------------- channel norm

NORM_EPS = 1e-5


def channel_norm_forward(x, scale, shift, running_mean, running_var, *,
                         train, momentum=0.1, eps=NORM_EPS):
    """Batch normalization over the (B, H, W) axes of each channel.

    Train mode standardizes with batch statistics (biased variance) and
    updates the running stats in place by exponential moving average.
    Eval mode uses the running stats only.
    """
    b, c, h, w = x.shape
    if train:
        m = b * h * w
        if m < 2:
            raise ValueError(
                f"channel_norm needs B*H*W >= 2 per channel in train mode, got {m}"
            )
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = xhat * scale.reshape(1, c, 1, 1) + shift.reshape(1, c, 1, 1)
    return out, (xhat, inv_std, scale, train)


def channel_norm_backward(dout, cache):
    xhat, inv_std, scale, train = cache
    c = xhat.shape[1]
    axes = (0, 2, 3)
    dscale = (dout * xhat).sum(axis=axes)
    dshift = dout.sum(axis=axes)
    dxhat = dout * scale.reshape(1, c, 1, 1)
    if train:
        m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
        mean_dxhat = dxhat.mean(axis=axes).reshape(1, c, 1, 1)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes).reshape(1, c, 1, 1)
        dx = inv_std.reshape(1, c, 1, 1) * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    else:
        dx = dxhat * inv_std.reshape(1, c, 1, 1)
    return dx, dscale, dshift


# -------------------------------------------------------------- activations


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def sigmoid_forward(x):
    # split by sign so exp never sees a large positive argument
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def sigmoid_backward(dout, out):
    return dout * out * (1.0 - out)


def activation_forward(x, kind):
    if kind == "relu":
        return relu_forward(x)
    if kind == "sigmoid":
        return sigmoid_forward(x)
    raise ValueError(f"unknown activation kind {kind!r} (expected 'relu' or 'sigmoid')")


def activation_backward(dout, cache, kind):
    if kind == "relu":
        return relu_backward(dout, cache)
    if kind == "sigmoid":
        return sigmoid_backward(dout, cache)
    raise ValueError(f"unknown activation kind {kind!r}")


# ------------------------------------------------------------------ pooling


def _pool_counts(h, w, k, stride, padding, dtype):
    """Per-window count of non-padding cells (divisor for the window mean)."""
    ones = np.ones((1, 1, h, w), dtype=dtype)
    if padding:
        ones = np.pad(ones, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    view = _patch_view(ones, k, k, stride, 1)
    return view.sum(axis=(2, 3))[0, 0]  # [H_out, W_out]


def avg_pool_forward(x, k, stride, padding):
    """Window mean; padded cells do not count toward the divisor, so a
    constant map is a fixed point for any k/stride/padding."""
    if k < 1:
        raise ValueError(f"pool kernel must be >= 1, got {k}")
    if stride < 1:
        raise ValueError(f"pool stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    view = _patch_view(xp, k, k, stride, 1)
    sums = view.sum(axis=(2, 3))
    counts = _pool_counts(h, w, k, stride, padding, x.dtype)
    if np.any(counts == 0):
        raise ValueError("pooling window contains only padding; reduce padding")
    out = sums / counts
    return out, (x.shape, k, stride, padding, counts)


def avg_pool_backward(dout, cache):
    (b, c, h, w), k, stride, padding, counts = cache
    h_out, w_out = dout.shape[2], dout.shape[3]
    d_scaled = dout / counts
    hp, wp = h + 2 * padding, w + 2 * padding
    dxp = np.zeros((b, c, hp, wp), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * h_out:stride,
                j:j + stride * w_out:stride] += d_scaled
    return dxp[:, :, padding:padding + h, padding:padding + w]


# ----------------------------------------------------------------- upsample


def upsample_nearest_forward(x, factor):
    """Replicate every pixel into a factor x factor block."""
    if factor < 2:
        raise ValueError(f"upsample factor must be >= 2, got {factor}")
    b, c, h, w = x.shape
    out = np.broadcast_to(
        x[:, :, :, None, :, None], (b, c, h, factor, w, factor)
    ).reshape(b, c, h * factor, w * factor)
    return np.ascontiguousarray(out), (x.shape, factor)


def upsample_nearest_backward(dout, cache):
    (b, c, h, w), factor = cache
    return dout.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5))


# -------------------------------------------------------- global average pool


def global_avg_pool_forward(x):
    """[B, C, H, W] -> [B, C] per-channel spatial mean."""
    b, c, h, w = x.shape
    return x.mean(axis=(2, 3)), (x.shape,)


def global_avg_pool_backward(dout, cache):
    (b, c, h, w), = cache
    return np.broadcast_to(
        (dout / (h * w))[:, :, None, None], (b, c, h, w)
    ).copy()


# ------------------------------------------------------------------- affine


def affine_forward(x, weight, bias=None):
    """y = x @ W.T + b on [B, D_in] vectors."""
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"affine weight expects {weight.shape[1]} features, input has {x.shape[1]}"
        )
    out = x @ weight.T
    if bias is not None:
        out += bias
    return out, (x, weight, bias is not None)


def affine_backward(dout, cache):
    x, weight, has_bias = cache
    dbias = dout.sum(axis=0) if has_bias else None
    dw = dout.T @ x
    dx = dout @ weight
    return dx, dw, dbias
