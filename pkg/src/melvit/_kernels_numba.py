"""Numba-compiled kernels for convolution and max-pooling.

Same contracts as ``_kernels_numpy``; see there for semantics. Loops are
ordered so the innermost index runs over the contiguous output/input width,
which numba vectorizes. Kernels specialize per dtype (float32 and float64).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(xp, w):
    B, C, Hp, Wp = xp.shape
    F, _, kh, kw = w.shape
    Ho = Hp - kh + 1
    Wo = Wp - kw + 1
    y = np.zeros((B, F, Ho, Wo), dtype=xp.dtype)
    for b in range(B):
        for f in range(F):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        wv = w[f, c, i, j]
                        for oi in range(Ho):
                            for oj in range(Wo):
                                y[b, f, oi, oj] += wv * xp[b, c, oi + i, oj + j]
    return y


@njit(cache=True)
def conv2d_backward_w(xp, g):
    B, F, Ho, Wo = g.shape
    C = xp.shape[1]
    kh = xp.shape[2] - Ho + 1
    kw = xp.shape[3] - Wo + 1
    dw = np.zeros((F, C, kh, kw), dtype=g.dtype)
    for b in range(B):
        for f in range(F):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        acc = dw[f, c, i, j]
                        for oi in range(Ho):
                            for oj in range(Wo):
                                acc += g[b, f, oi, oj] * xp[b, c, oi + i, oj + j]
                        dw[f, c, i, j] = acc
    return dw


@njit(cache=True)
def conv2d_backward_x(g, w, Hp, Wp):
    B, F, Ho, Wo = g.shape
    _, C, kh, kw = w.shape
    dxp = np.zeros((B, C, Hp, Wp), dtype=g.dtype)
    for b in range(B):
        for f in range(F):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        wv = w[f, c, i, j]
                        for oi in range(Ho):
                            for oj in range(Wo):
                                dxp[b, c, oi + i, oj + j] += wv * g[b, f, oi, oj]
    return dxp


@njit(cache=True)
def maxpool2d_forward(x, k):
    B, C, H, W = x.shape
    Ho = H // k
    Wo = W // k
    out = np.empty((B, C, Ho, Wo), dtype=x.dtype)
    arg = np.empty((B, C, Ho, Wo), dtype=np.int64)
    for b in range(B):
        for c in range(C):
            for oi in range(Ho):
                for oj in range(Wo):
                    best = x[b, c, oi * k, oj * k]
                    besta = (oi * k) * W + oj * k
                    for i in range(k):
                        for j in range(k):
                            v = x[b, c, oi * k + i, oj * k + j]
                            if v > best:  # strict: first index wins ties
                                best = v
                                besta = (oi * k + i) * W + oj * k + j
                    out[b, c, oi, oj] = best
                    arg[b, c, oi, oj] = besta
    return out, arg


@njit(cache=True)
def maxpool2d_backward(g, argmax, H, W):
    B, C, Ho, Wo = g.shape
    dx = np.zeros((B, C, H * W), dtype=g.dtype)
    for b in range(B):
        for c in range(C):
            for oi in range(Ho):
                for oj in range(Wo):
                    dx[b, c, argmax[b, c, oi, oj]] += g[b, c, oi, oj]
    return dx.reshape(B, C, H, W)
