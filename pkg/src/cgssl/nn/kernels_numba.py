"""Numba-jitted convolution kernels.

Same contracts as kernels_numpy: im2col gathers run as jitted loops (the hot
part on CPU) and the contraction itself goes through BLAS via np.dot inside
nopython code. Buffers are allocated by the wrappers so both float32 and
float64 specialize cleanly. Loop nests write each output element from exactly
one parallel iteration, so results are bitwise deterministic for any thread
count.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def _fill_pad(x, out, top, left):
    n, h, w, _ = x.shape
    for i in prange(n):
        out[i, top : top + h, left : left + w, :] = x[i]


def _pad_nhwc(x, top, bottom, left, right):
    n, h, w, c = x.shape
    out = np.zeros((n, h + top + bottom, w + left + right, c), dtype=x.dtype)
    _fill_pad(x, out, top, left)
    return out


@njit(cache=True, parallel=True)
def _fill_cols(xp, cols, kh, kw, stride, ho, wo):
    n = xp.shape[0]
    c = xp.shape[3]
    for i in prange(n):
        base = i * ho * wo
        for y in range(ho):
            for x in range(wo):
                r = base + y * wo + x
                q = 0
                for a in range(kh):
                    for b in range(kw):
                        for ci in range(c):
                            cols[r, q] = xp[i, y * stride + a, x * stride + b, ci]
                            q += 1


def _im2col(xp, kh, kw, stride):
    n, hp, wp, c = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = np.empty((n * ho * wo, kh * kw * c), dtype=xp.dtype)
    _fill_cols(xp, cols, kh, kw, stride, ho, wo)
    return cols, ho, wo


@njit(cache=True, parallel=True)
def _fill_dilate(dy, out, stride):
    n, ho, wo, _ = dy.shape
    for i in prange(n):
        for y in range(ho):
            for x in range(wo):
                out[i, y * stride, x * stride, :] = dy[i, y, x, :]


def _dilate(dy, stride):
    n, ho, wo, c = dy.shape
    out = np.zeros((n, (ho - 1) * stride + 1, (wo - 1) * stride + 1, c), dtype=dy.dtype)
    _fill_dilate(dy, out, stride)
    return out


@njit(cache=True)
def _matmul(a, b):
    return np.dot(a, b)


class ConvCtx:
    __slots__ = ("cols", "x_shape", "w", "stride", "pad")

    def __init__(self, cols, x_shape, w, stride, pad):
        self.cols = cols
        self.x_shape = x_shape
        self.w = w
        self.stride = stride
        self.pad = pad


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int, need_ctx: bool):
    n = x.shape[0]
    kh, kw, cin, cout = w.shape
    xp = _pad_nhwc(x, pad, pad, pad, pad) if pad else np.ascontiguousarray(x)
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    y = _matmul(cols, np.ascontiguousarray(w.reshape(kh * kw * cin, cout))).reshape(n, ho, wo, cout)
    ctx = ConvCtx(cols, x.shape, w, stride, pad) if need_ctx else None
    return y, ctx


def conv2d_backward(ctx: ConvCtx, dy: np.ndarray):
    kh, kw, cin, cout = ctx.w.shape
    n, ho, wo, _ = dy.shape
    dy2d = np.ascontiguousarray(dy.reshape(n * ho * wo, cout))
    dw = _matmul(np.ascontiguousarray(ctx.cols.T), dy2d).reshape(kh, kw, cin, cout)

    # dx as a stride-1 convolution of the dilated dy with the flipped kernel
    w_hat = np.ascontiguousarray(ctx.w[::-1, ::-1].transpose(0, 1, 3, 2))
    dyd = _dilate(dy, ctx.stride) if ctx.stride > 1 else dy
    h_in, w_in = ctx.x_shape[1], ctx.x_shape[2]
    ph = kh - 1 - ctx.pad
    pw = kw - 1 - ctx.pad
    extra_h = h_in - (dyd.shape[1] + 2 * ph - kh + 1)
    extra_w = w_in - (dyd.shape[2] + 2 * pw - kw + 1)
    dyp = _pad_nhwc(np.ascontiguousarray(dyd), ph, ph + extra_h, pw, pw + extra_w)
    cols, _, _ = _im2col(dyp, kh, kw, 1)
    dx = _matmul(cols, np.ascontiguousarray(w_hat.reshape(kh * kw * cout, cin))).reshape(ctx.x_shape)
    return dx, dw
