"""Coordinate bookkeeping shared by both kernel backends."""

import numpy as np


def upsample_coords(n_in, factor):
    """Source taps and blend weights for 1-D bilinear upsampling by an
    integer factor, align-corners=false convention.

    Output position p samples source coordinate (p + 0.5) / factor - 0.5.
    Coordinates falling outside the array are clamped to the border, which
    collapses both taps onto the edge pixel (weights still sum to 1), so a
    constant signal stays constant.

    Returns (i0, i1, frac): integer taps and the weight of i1.
    """
    pos = (np.arange(n_in * factor, dtype=np.float64) + 0.5) / factor - 0.5
    lo = np.floor(pos)
    frac = pos - lo
    i0 = np.clip(lo, 0, n_in - 1).astype(np.int64)
    i1 = np.clip(lo + 1, 0, n_in - 1).astype(np.int64)
    return i0, i1, frac
