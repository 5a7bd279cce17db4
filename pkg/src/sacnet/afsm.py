"""Cascaded deformable alignment of thermal features onto the RGB grid.

Each stage predicts per-pixel offsets for the nine taps of a 3x3 kernel
from the concatenated thermal and RGB features, then convolves the thermal
features at those bilinearly sampled, possibly fractional positions.
Stacking several stages lets large misalignments be absorbed gradually.
A final fusion convolution mixes the aligned thermal features with the
RGB features into the decoder width.
"""

import numpy as np

from . import tensor as T
from .errors import ParameterError, ShapeError

# 3x3 tap displacements in row-major order; offset channel 2*t is the row
# shift and 2*t+1 the column shift of tap t
_TAPS = np.array([(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)], dtype=np.float64)


class DeformableLayerParams:
    """One deformable stage: an offset predictor and the conv weights.

    The offset predictor is zero-initialised so the stage starts out as a
    plain 3x3 convolution and learns displacements from there.
    """

    def __init__(self, channels, rng):
        self.channels = channels
        self.off_w = T.zeros((18, 2 * channels, 3, 3), requires_grad=True)
        self.off_b = T.zeros((18,), requires_grad=True)
        scale = np.sqrt(2.0 / (channels * 9))
        self.w = T.randn((channels, channels, 3, 3), rng=rng, scale=scale, requires_grad=True)
        self.b = T.zeros((channels,), requires_grad=True)

    def tensors(self, prefix):
        return {f"{prefix}.off_w": self.off_w, f"{prefix}.off_b": self.off_b,
                f"{prefix}.w": self.w, f"{prefix}.b": self.b}


def predict_offsets(f_t, f_rgb, layer):
    """Offsets [18, H, W] from the concatenated feature pair."""
    if f_t.shape != f_rgb.shape:
        raise ShapeError(f"offset predictor needs equal shapes, got {f_t.shape} vs {f_rgb.shape}")
    return T.conv2d(T.concat([f_t, f_rgb], axis=0), layer.off_w, layer.off_b, padding=1)


def deformable_conv(x, offsets, weight, bias=None):
    """3x3 convolution of x [C,H,W] sampled at displaced tap positions.

    offsets [18, H, W] holds (row, col) shifts per tap as described in the
    module header; samples falling outside the image read as zero, matching
    zero padding, so all-zero offsets reproduce conv2d(x, w, b, padding=1)
    exactly.  Differentiable in x, offsets, weight and bias.
    """
    if x.ndim != 3:
        raise ShapeError(f"deformable_conv input must be [C,H,W], got {x.shape}")
    if offsets.ndim != 3 or offsets.shape[0] != 18:
        raise ShapeError(f"offsets must be [18,H,W], got {offsets.shape}")
    if weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ShapeError(f"weight must be [O,C,3,3], got {weight.shape}")
    c, h, w = x.shape
    if offsets.shape[1:] != (h, w):
        raise ShapeError(f"offsets {offsets.shape} do not cover the {h}x{w} map")
    if weight.shape[1] != c:
        raise ShapeError(
            f"weight expects {weight.shape[1]} input channels, image has {c}")
    o = weight.shape[0]
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} must be ({o},)")

    base_i = np.arange(h, dtype=np.float64)[None, :, None] + _TAPS[:, 0][:, None, None]
    base_j = np.arange(w, dtype=np.float64)[None, None, :] + _TAPS[:, 1][:, None, None]
    base_i = np.broadcast_to(base_i, (9, h, w))
    base_j = np.broadcast_to(base_j, (9, h, w))
    pi = offsets[0:18:2] + T.Tensor(base_i)
    pj = offsets[1:18:2] + T.Tensor(base_j)

    samp = T.bilinear_sample(x, pi, pj)                   # [C, 9, H, W]
    flat = samp.reshape(c * 9, h * w)
    y = weight.reshape(o, c * 9).matmul(flat)             # tap order matches w[o,c,ki,kj]
    if bias is not None:
        y = y + bias.reshape(o, 1).matmul(T.ones((1, h * w)))
    return y.reshape(o, h, w)


class AfsmStageParams:
    """A cascade of deformable layers plus the fusion convolution."""

    def __init__(self, channels, out_channels, depth, rng):
        if depth < 1:
            raise ParameterError(f"cascade depth must be >= 1, got {depth}")
        self.channels = channels
        self.out_channels = out_channels
        self.layers = [DeformableLayerParams(channels, rng) for _ in range(depth)]
        scale = np.sqrt(2.0 / (2 * channels * 9))
        self.fuse_w = T.randn((out_channels, 2 * channels, 3, 3), rng=rng,
                              scale=scale, requires_grad=True)
        self.fuse_b = T.zeros((out_channels,), requires_grad=True)

    def tensors(self, prefix):
        out = {}
        for idx, layer in enumerate(self.layers, start=1):
            out.update(layer.tensors(f"{prefix}.d{idx}"))
        out[f"{prefix}.fuse.w"] = self.fuse_w
        out[f"{prefix}.fuse.b"] = self.fuse_b
        return out


def fuse_features(f_t, f_rgb, stage):
    """Fusion convolution only: thermal first, then RGB, 3x3 into the
    decoder width.  This is also the bypass used when alignment is off."""
    cat = T.concat([f_t, f_rgb], axis=0)
    return T.conv2d(cat, stage.fuse_w, stage.fuse_b, padding=1).relu()


def afsm_forward(f_t, f_rgb, stage, align=True):
    """Align thermal features to RGB through the cascade, then fuse.

    Each stage predicts offsets from the current thermal features paired
    with the (fixed) RGB features and resamples the thermal features; the
    result feeds the next stage.  Returns the fused map [out_channels,H,W].
    """
    if f_t.shape != f_rgb.shape:
        raise ShapeError(f"modalities must share a shape, got {f_t.shape} vs {f_rgb.shape}")
    if f_t.shape[0] != stage.channels:
        raise ShapeError(
            f"stage built for {stage.channels} channels, features have {f_t.shape[0]}")
    cur = f_t
    if align:
        for layer in stage.layers:
            offs = predict_offsets(cur, f_rgb, layer)
            cur = deformable_conv(cur, offs, layer.w, layer.b).relu()
    return fuse_features(cur, f_rgb, stage)
