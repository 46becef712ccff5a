"""Pure-numpy kernel implementations (fallback backend).

Convolutions are computed as kh*kw shifted tensordots so the heavy lifting
stays inside BLAS; pooling uses window reshapes with vectorized argmax.
"""

import numpy as np


def conv2d_forward(xpad, w, stride):
    """Correlate padded input (C,Hp,Wp) with kernels (K,C,kh,kw) -> (K,Ho,Wo)."""
    k_out, c_in, kh, kw = w.shape
    hp, wp = xpad.shape[1], xpad.shape[2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((k_out, ho, wo), dtype=xpad.dtype)
    for di in range(kh):
        for dj in range(kw):
            win = xpad[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride]
            out += np.tensordot(w[:, :, di, dj], win, axes=(1, 0))
    return out


def conv2d_grad_w(xpad, gout, kh, kw, stride):
    """Gradient w.r.t. kernels: (K,C,kh,kw)."""
    k_out, ho, wo = gout.shape
    c_in = xpad.shape[0]
    gw = np.empty((k_out, c_in, kh, kw), dtype=xpad.dtype)
    for di in range(kh):
        for dj in range(kw):
            win = xpad[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride]
            gw[:, :, di, dj] = np.tensordot(gout, win, axes=([1, 2], [1, 2]))
    return gw


def conv2d_grad_x(gout, w, stride, hp, wp):
    """Gradient w.r.t. the padded input: (C,Hp,Wp)."""
    k_out, c_in, kh, kw = w.shape
    ho, wo = gout.shape[1], gout.shape[2]
    gx = np.zeros((c_in, hp, wp), dtype=gout.dtype)
    for di in range(kh):
        for dj in range(kw):
            contrib = np.tensordot(w[:, :, di, dj], gout, axes=(0, 0))
            gx[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride] += contrib
    return gx


def maxpool2x_forward(x):
    """2x2 max pooling of (C,H,W) with even H,W -> ((C,H/2,W/2), argmax in 0..3)."""
    c, h, w = x.shape
    win = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = win.argmax(axis=3).astype(np.uint8)
    out = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    return out, idx


def maxpool2x_backward(gout, idx):
    c, h2, w2 = gout.shape
    gwin = np.zeros((c, h2, w2, 4), dtype=gout.dtype)
    np.put_along_axis(gwin, idx[..., None].astype(np.int64), gout[..., None], axis=3)
    return gwin.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h2 * 2, w2 * 2)


def upsample2x_forward(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2x_backward(gout):
    c, h, w = gout.shape
    return gout.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


def roi_max_forward(fmap, y_starts, y_ends, x_starts, x_ends):
    """Channel-wise max over a grid of bins; returns values and flat argmax.

    Bin edges arrive precomputed (already clamped non-empty). Output is
    (C,G,G) together with int64 argmax positions into the flattened H*W map.
    """
    c = fmap.shape[0]
    w = fmap.shape[2]
    g = len(y_starts)
    out = np.empty((c, g, g), dtype=fmap.dtype)
    arg = np.empty((c, g, g), dtype=np.int64)
    for gy in range(g):
        for gx in range(g):
            patch = fmap[:, y_starts[gy] : y_ends[gy], x_starts[gx] : x_ends[gx]]
            flat = patch.reshape(c, -1)
            local = flat.argmax(axis=1)
            out[:, gy, gx] = flat[np.arange(c), local]
            pw = x_ends[gx] - x_starts[gx]
            py = local // pw + y_starts[gy]
            px = local % pw + x_starts[gx]
            arg[:, gy, gx] = py * w + px
    return out, arg


def roi_max_backward(gout, arg, c, h, w):
    gflat = np.zeros((c, h * w), dtype=gout.dtype)
    rows = np.repeat(np.arange(c), arg.shape[1] * arg.shape[2])
    np.add.at(gflat, (rows, arg.reshape(c, -1).ravel()), gout.reshape(c, -1).ravel())
    return gflat.reshape(c, h, w)
