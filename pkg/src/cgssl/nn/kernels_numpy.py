"""Pure-numpy convolution kernels (im2col + BLAS matmul).

Inputs are NHWC float64; weights are (KH, KW, Cin, Cout). The forward pass
returns an opaque context holding the padded input's column matrix so the
backward pass reuses it; the input gradient is computed as a forward
convolution of the (dilated, padded) output gradient with the flipped,
transposed kernel.
"""

import numpy as np


def _pad(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, Ho, Wo, C, KH, KW) strided view -> contiguous (N*Ho*Wo, KH*KW*C)
    # with (kh, kw, c) fastest-varying, matching w.reshape(KH*KW*C, Cout).
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    n, ho, wo = windows.shape[:3]
    return np.ascontiguousarray(
        windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * xp.shape[3])
    )


def _dilate(dy: np.ndarray, stride: int) -> np.ndarray:
    if stride == 1:
        return dy
    n, ho, wo, c = dy.shape
    out = np.zeros((n, (ho - 1) * stride + 1, (wo - 1) * stride + 1, c), dtype=dy.dtype)
    out[:, ::stride, ::stride, :] = dy
    return out


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
    xp = _pad(x, pad, pad)
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride)
    y = (cols @ w.reshape(kh * kw * cin, cout)).reshape(n, ho, wo, cout)
    ctx = ConvCtx(cols, x.shape, w, stride, pad) if need_ctx else None
    return y, ctx


def conv2d_backward(ctx: ConvCtx, dy: np.ndarray):
    kh, kw, cin, cout = ctx.w.shape
    n, ho, wo, _ = dy.shape
    dy2d = dy.reshape(n * ho * wo, cout)
    dw = (ctx.cols.T @ dy2d).reshape(kh, kw, cin, cout)

    # dx as a stride-1 convolution of the dilated dy with the flipped kernel
    w_hat = np.ascontiguousarray(ctx.w[::-1, ::-1].transpose(0, 1, 3, 2))
    dyd = _dilate(dy, ctx.stride)
    h_in, w_in = ctx.x_shape[1], ctx.x_shape[2]
    # padding that maps the dilated grad back onto the unpadded input extent
    ph = kh - 1 - ctx.pad
    pw = kw - 1 - ctx.pad
    extra_h = h_in - (dyd.shape[1] + 2 * ph - kh + 1)
    extra_w = w_in - (dyd.shape[2] + 2 * pw - kw + 1)
    dyp = np.pad(dyd, ((0, 0), (ph, ph + extra_h), (pw, pw + extra_w), (0, 0)))
    cols = _im2col(dyp, kh, kw, 1)
    dx = (cols @ w_hat.reshape(kh * kw * cout, cin)).reshape(ctx.x_shape)
    return dx, dw
