"""Pure-numpy kernels for convolution and max-pooling.

Reference semantics for the numba backend: stride-1 valid correlation on a
pre-padded input, floor-division pooling windows, pooling ties broken by the
first (row-major) index. Convolution leans on BLAS via im2col/tensordot.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(xp, w):
    """Valid stride-1 correlation. xp: [B,C,Hp,Wp] (already padded), w: [F,C,kh,kw]."""
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # [B,C,Ho,Wo,kh,kw]
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # [B,Ho,Wo,F]
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_backward_w(xp, g):
    """Gradient w.r.t. weights. g: [B,F,Ho,Wo] -> [F,C,kh,kw]."""
    B, F, Ho, Wo = g.shape
    kh = xp.shape[2] - Ho + 1
    kw = xp.shape[3] - Wo + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # [B,C,Ho,Wo,kh,kw]
    dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # [F,C,kh,kw]
    return np.ascontiguousarray(dw)


def conv2d_backward_x(g, w, Hp, Wp):
    """Gradient w.r.t. the padded input. Returns [B,C,Hp,Wp]."""
    B, F, Ho, Wo = g.shape
    _, C, kh, kw = w.shape
    dxp = np.zeros((B, C, Hp, Wp), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            # dxp[:, :, i:i+Ho, j:j+Wo] += g . w[:, :, i, j]
            dxp[:, :, i : i + Ho, j : j + Wo] += np.tensordot(
                g, w[:, :, i, j], axes=([1], [0])
            ).transpose(0, 3, 1, 2)
    return dxp


def maxpool2d_forward(x, k):
    """Non-overlapping k*k max pooling with floor semantics.

    Returns (out [B,C,Ho,Wo], argmax [B,C,Ho,Wo] int64) where argmax holds the
    flat h*W+w index of the per-window maximum in the input, first index wins.
    """
    B, C, H, W = x.shape
    Ho, Wo = H // k, W // k
    v = x[:, :, : Ho * k, : Wo * k].reshape(B, C, Ho, k, Wo, k)
    v = v.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, k * k)
    flat = v.argmax(axis=-1)  # first maximum per window
    out = np.take_along_axis(v, flat[..., None], axis=-1)[..., 0]
    hi = np.arange(Ho)[:, None] * k
    wi = np.arange(Wo)[None, :] * k
    arg = (hi + flat // k) * W + (wi + flat % k)
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool2d_backward(g, argmax, H, W):
    """Scatter the pooled gradient back to the argmax positions."""
    B, C, Ho, Wo = g.shape
    dx = np.zeros((B, C, H * W), dtype=g.dtype)
    b = np.arange(B)[:, None, None, None]
    c = np.arange(C)[None, :, None, None]
    np.add.at(dx, (b, c, argmax), g)
    return dx.reshape(B, C, H, W)
