"""Numba-compiled kernel implementations (default backend).

im2col/col2im gathers and argmax scatters run as compiled loops; the
resulting GEMMs still dispatch to BLAS via np.dot inside nopython code.
"""

import numpy as np
from numba import njit

from .numpy_backend import maxpool2x_backward as _np_maxpool2x_backward  # noqa: F401


@njit(cache=True)
def _im2col(xpad, kh, kw, stride, ho, wo):
    c_in = xpad.shape[0]
    cols = np.empty((c_in * kh * kw, ho * wo), dtype=xpad.dtype)
    r = 0
    for c in range(c_in):
        for di in range(kh):
            for dj in range(kw):
                p = 0
                for i in range(ho):
                    ib = i * stride + di
                    for j in range(wo):
                        cols[r, p] = xpad[c, ib, j * stride + dj]
                        p += 1
                r += 1
    return cols


@njit(cache=True)
def conv2d_forward(xpad, w, stride):
    k_out, c_in, kh, kw = w.shape
    hp, wp = xpad.shape[1], xpad.shape[2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = _im2col(xpad, kh, kw, stride, ho, wo)
    w2 = np.ascontiguousarray(w.reshape(k_out, c_in * kh * kw))
    return np.dot(w2, cols).reshape(k_out, ho, wo)


@njit(cache=True)
def conv2d_grad_w(xpad, gout, kh, kw, stride):
    k_out, ho, wo = gout.shape
    c_in = xpad.shape[0]
    cols = _im2col(xpad, kh, kw, stride, ho, wo)
    g2 = np.ascontiguousarray(gout.reshape(k_out, ho * wo))
    return np.dot(g2, cols.T).reshape(k_out, c_in, kh, kw)


@njit(cache=True)
def conv2d_grad_x(gout, w, stride, hp, wp):
    k_out, c_in, kh, kw = w.shape
    ho, wo = gout.shape[1], gout.shape[2]
    w2 = np.ascontiguousarray(w.reshape(k_out, c_in * kh * kw))
    g2 = np.ascontiguousarray(gout.reshape(k_out, ho * wo))
    gcols = np.dot(w2.T, g2)
    gx = np.zeros((c_in, hp, wp), dtype=gout.dtype)
    r = 0
    for c in range(c_in):
        for di in range(kh):
            for dj in range(kw):
                p = 0
                for i in range(ho):
                    ib = i * stride + di
                    for j in range(wo):
                        gx[c, ib, j * stride + dj] += gcols[r, p]
                        p += 1
                r += 1
    return gx


@njit(cache=True)
def maxpool2x_forward(x):
    c_in, h, w = x.shape
    h2, w2 = h // 2, w // 2
    out = np.empty((c_in, h2, w2), dtype=x.dtype)
    idx = np.empty((c_in, h2, w2), dtype=np.uint8)
    for c in range(c_in):
        for i in range(h2):
            for j in range(w2):
                best = x[c, 2 * i, 2 * j]
                bi = np.uint8(0)
                for di in range(2):
                    for dj in range(2):
                        v = x[c, 2 * i + di, 2 * j + dj]
                        if v > best:
                            best = v
                            bi = np.uint8(di * 2 + dj)
                out[c, i, j] = best
                idx[c, i, j] = bi
    return out, idx


@njit(cache=True)
def maxpool2x_backward(gout, idx):
    c_in, h2, w2 = gout.shape
    gx = np.zeros((c_in, h2 * 2, w2 * 2), dtype=gout.dtype)
    for c in range(c_in):
        for i in range(h2):
            for j in range(w2):
                k = idx[c, i, j]
                gx[c, 2 * i + k // 2, 2 * j + k % 2] = gout[c, i, j]
    return gx


@njit(cache=True)
def roi_max_forward(fmap, y_starts, y_ends, x_starts, x_ends):
    c_in = fmap.shape[0]
    w = fmap.shape[2]
    g = len(y_starts)
    out = np.empty((c_in, g, g), dtype=fmap.dtype)
    arg = np.empty((c_in, g, g), dtype=np.int64)
    for c in range(c_in):
        for gy in range(g):
            for gx in range(g):
                best = fmap[c, y_starts[gy], x_starts[gx]]
                bpos = y_starts[gy] * w + x_starts[gx]
                for y in range(y_starts[gy], y_ends[gy]):
                    for x in range(x_starts[gx], x_ends[gx]):
                        v = fmap[c, y, x]
                        if v > best:
                            best = v
                            bpos = y * w + x
                out[c, gy, gx] = best
                arg[c, gy, gx] = bpos
    return out, arg


@njit(cache=True)
def roi_max_backward(gout, arg, c, h, w):
    gflat = np.zeros((c, h * w), dtype=gout.dtype)
    g = gout.shape[1]
    for ci in range(c):
        for gy in range(g):
            for gx in range(g):
                gflat[ci, arg[ci, gy, gx]] += gout[ci, gy, gx]
    return gflat.reshape(c, h, w)
