"""Pure-numpy implementations of the hot kernels.

Everything here is shape-trusting: validation happens in the calling layer
(tensor ops, metrics), these functions only do arithmetic.  Layouts:

  images / feature maps   [C, H, W]
  conv weights            [O, C, k, k]
  sample grids            [K, H, W] of fractional source coordinates
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .common import upsample_coords

NAME = "numpy"


# ---------------------------------------------------------------- conv2d

def _pad2d(x, pad):
    if pad == 0:
        return x
    c, h, w = x.shape
    out = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, pad:pad + h, pad:pad + w] = x
    return out


def _im2col(xp, k, stride):
    # xp is already padded; windows laid out [C, Ho, Wo, k, k]
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    return win[:, ::stride, ::stride]


def conv2d_fwd(x, w, stride, pad):
    k = w.shape[2]
    cols = _im2col(_pad2d(x, pad), k, stride)
    return np.tensordot(w, cols, axes=([1, 2, 3], [0, 3, 4]))


def conv2d_bwd_w(dy, x, stride, pad, k):
    cols = _im2col(_pad2d(x, pad), k, stride)
    return np.tensordot(dy, cols, axes=([1, 2], [1, 2]))


def conv2d_bwd_x(dy, w, stride, pad, h, w_in):
    o, ho, wo = dy.shape
    _, c, k, _ = w.shape
    dcols = np.tensordot(w, dy, axes=(0, 0))  # [C, k, k, Ho, Wo]
    dxp = np.zeros((c, h + 2 * pad, w_in + 2 * pad))
    # each kernel tap writes to a disjoint strided grid, so plain += works
    for ki in range(k):
        for kj in range(k):
            dxp[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += dcols[:, ki, kj]
    return dxp[:, pad:pad + h, pad:pad + w_in]


# ------------------------------------------------------- bilinear upsample

def upsample_fwd(x, factor):
    _, h, w = x.shape
    i0, i1, fi = upsample_coords(h, factor)
    j0, j1, fj = upsample_coords(w, factor)
    rows0 = x[:, i0]
    rows1 = x[:, i1]
    top = rows0[:, :, j0] * (1 - fj) + rows0[:, :, j1] * fj
    bot = rows1[:, :, j0] * (1 - fj) + rows1[:, :, j1] * fj
    return top * (1 - fi)[:, None] + bot * fi[:, None]


def upsample_bwd(dy, factor, h, w):
    c = dy.shape[0]
    i0, i1, fi = upsample_coords(h, factor)
    j0, j1, fj = upsample_coords(w, factor)
    drow0 = dy * (1 - fi)[:, None]
    drow1 = dy * fi[:, None]
    tmp = np.zeros((c, h, w * factor))
    np.add.at(tmp, (slice(None), i0), drow0)
    np.add.at(tmp, (slice(None), i1), drow1)
    dx = np.zeros((c, h, w))
    np.add.at(dx, (slice(None), slice(None), j0), tmp * (1 - fj))
    np.add.at(dx, (slice(None), slice(None), j1), tmp * fj)
    return dx


# --------------------------------------------- bilinear sampling (gather)

def bilin_gather(x, pi, pj):
    """Sample x at fractional coordinates (pi, pj), zero outside the image.

    x [C, H, W], pi/pj [K, Ho, Wo]  ->  [C, K, Ho, Wo].
    """
    c, h, w = x.shape
    i0 = np.floor(pi)
    j0 = np.floor(pj)
    fi = pi - i0
    fj = pj - j0
    i0 = i0.astype(np.int64)
    j0 = j0.astype(np.int64)
    xf = x.reshape(c, h * w)
    out = np.zeros((c,) + pi.shape)
    for di in (0, 1):
        for dj in (0, 1):
            ii = i0 + di
            jj = j0 + dj
            ok = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
            wgt = (fi if di else 1.0 - fi) * (fj if dj else 1.0 - fj) * ok
            idx = np.where(ok, ii * w + jj, 0)
            out += xf[:, idx.ravel()].reshape(out.shape) * wgt
    return out


def bilin_gather_bwd(dsamp, x, pi, pj):
    """Gradients of bilin_gather w.r.t. the image and both coordinate grids."""
    c, h, w = x.shape
    i0 = np.floor(pi)
    j0 = np.floor(pj)
    fi = pi - i0
    fj = pj - j0
    i0 = i0.astype(np.int64)
    j0 = j0.astype(np.int64)
    xf = x.reshape(c, h * w)
    dxf = np.zeros_like(xf)
    dpi = np.zeros_like(pi)
    dpj = np.zeros_like(pj)
    rows = np.arange(c)[:, None]
    for di in (0, 1):
        for dj in (0, 1):
            ii = i0 + di
            jj = j0 + dj
            ok = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
            wi = fi if di else 1.0 - fi
            wj = fj if dj else 1.0 - fj
            idx = np.where(ok, ii * w + jj, 0).ravel()
            np.add.at(dxf, (rows, idx[None, :]),
                      (dsamp * (wi * wj * ok)).reshape(c, -1))
            vals = xf[:, idx].reshape(dsamp.shape) * ok
            gv = (dsamp * vals).sum(axis=0)
            dpi += gv * (wj if di else -wj)
            dpj += gv * (wi if dj else -wi)
    return dxf.reshape(c, h, w), dpi, dpj


# -------------------------------------------- nearest foreground lookup

def nearest_fg(mask):
    """Per pixel, the coordinates of the nearest foreground pixel.

    Ties in squared euclidean distance go to the foreground pixel that
    comes first in row-major order.  Returns (rows, cols) int64 arrays,
    -1 everywhere when the mask has no foreground.
    """
    h, w = mask.shape
    br = np.full((h, w), -1, dtype=np.int64)
    bc = np.full((h, w), -1, dtype=np.int64)
    rr, cc = np.nonzero(mask)
    if rr.size == 0:
        return br, bc
    best = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    rgrid = np.arange(h, dtype=np.int64)[:, None]
    cgrid = np.arange(w, dtype=np.int64)[None, :]
    for r, c in zip(rr, cc):
        d2 = (rgrid - r) ** 2 + (cgrid - c) ** 2
        upd = d2 < best
        best[upd] = d2[upd]
        br[upd] = r
        bc[upd] = c
    return br, bc
