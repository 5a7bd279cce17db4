"""Synthetic misaligned RGB/thermal scenes.

A scene is a textured background with one to three anti-aliased shapes
(ellipses and boxes); the RGB view paints them in a contrasting colour,
the thermal view renders them as a hot intensity field replicated to
three channels.  The ground truth mask stays registered to the RGB view
while the thermal image gets an affine warp, simulating an unaligned
sensor pair.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .errors import ParameterError, ShapeError


# ------------------------------------------------------- affine transforms

@dataclass(frozen=True)
class AffineParams:
    """Similarity transform about the image centre, (row, col) convention.

    Content mapping: p' = scale * R(rotation) @ (p - c) + c + (ty, tx),
    where c = ((H-1)/2, (W-1)/2).  tx shifts columns, ty shifts rows,
    rotation is in degrees.
    """
    tx: float = 0.0
    ty: float = 0.0
    rotation_deg: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ParameterError(f"scale must be positive, got {self.scale}")

    def _rot(self):
        a = np.deg2rad(self.rotation_deg)
        return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])

    def inverse(self):
        """The exact inverse mapping as another AffineParams."""
        rinv = AffineParams(scale=1.0 / self.scale, rotation_deg=-self.rotation_deg)._rot()
        t = rinv @ np.array([self.ty, self.tx]) / self.scale
        return AffineParams(tx=-t[1], ty=-t[0], rotation_deg=-self.rotation_deg,
                            scale=1.0 / self.scale)

    def apply(self, rows, cols, height, width):
        """Map (row, col) coordinate arrays through the transform."""
        cr = (height - 1) / 2.0
        cc = (width - 1) / 2.0
        m = self.scale * self._rot()
        r = rows - cr
        c = cols - cc
        return (m[0, 0] * r + m[0, 1] * c + cr + self.ty,
                m[1, 0] * r + m[1, 1] * c + cc + self.tx)

    def to_dict(self):
        return {"tx": repr(self.tx), "ty": repr(self.ty),
                "rotation_deg": repr(self.rotation_deg), "scale": repr(self.scale)}

    @classmethod
    def from_dict(cls, d):
        return cls(tx=float(d["tx"]), ty=float(d["ty"]),
                   rotation_deg=float(d["rotation_deg"]), scale=float(d["scale"]))


def warp_affine(img, params, mode="bilinear"):
    """Resample img [C,H,W] under the transform; outside reads as zero.

    output(p) = input(params^-1(p)).  The identity transform reproduces the
    input bit for bit.  mode "nearest" rounds source coordinates half-up,
    for label masks.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"warp_affine expects [C,H,W], got {img.shape}")
    _, h, w = img.shape
    inv = params.inverse()
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    pi, pj = inv.apply(rows, cols, h, w)
    if mode == "bilinear":
        return K.bilin_gather(img, pi[None], pj[None])[:, 0]
    if mode == "nearest":
        ri = np.floor(pi + 0.5).astype(np.int64)
        rj = np.floor(pj + 0.5).astype(np.int64)
        ok = (ri >= 0) & (ri < h) & (rj >= 0) & (rj < w)
        out = img[:, np.clip(ri, 0, h - 1), np.clip(rj, 0, w - 1)]
        return out * ok
    raise ParameterError(f"mode must be 'bilinear' or 'nearest', got {mode!r}")


# ------------------------------------------------------------- scene pieces

def _smooth_field(channels, size, rng, lo, hi):
    coarse = rng.uniform(lo, hi, (channels, size // 8, size // 8))
    return K.upsample_fwd(coarse, 8)


def _draw_shapes(size, rng):
    """Anti-aliased union coverage of 1..3 random shapes, via 2x supersampling."""
    ss = 2 * size
    yy, xx = np.meshgrid(np.arange(ss) + 0.5, np.arange(ss) + 0.5, indexing="ij")
    mask = np.zeros((ss, ss), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        kind = rng.choice(["ellipse", "box"])
        cy, cx = rng.uniform(0.25, 0.75, 2) * ss
        ay, ax = rng.uniform(0.08, 0.22, 2) * ss
        ang = rng.uniform(0.0, np.pi)
        u = (yy - cy) * np.cos(ang) - (xx - cx) * np.sin(ang)
        v = (yy - cy) * np.sin(ang) + (xx - cx) * np.cos(ang)
        if kind == "ellipse":
            mask |= (u / ay) ** 2 + (v / ax) ** 2 <= 1.0
        else:
            mask |= (np.abs(u) <= ay) & (np.abs(v) <= ax)
    return mask.reshape(size, 2, size, 2).mean(axis=(1, 3))


def gen_scene(size, rng):
    """One registered scene: (rgb [3,S,S], thermal [3,S,S], gt [S,S] uint8).

    All images are float64 in [0,1].  The foreground fraction is retried
    into [0.02, 0.5] so the mask is neither empty nor wall-to-wall.
    """
    if size < 16 or size % 8 != 0:
        raise ParameterError(f"scene size must be a multiple of 8 and >= 16, got {size}")
    for _ in range(64):
        alpha = _draw_shapes(size, rng)
        gt = alpha >= 0.5
        frac = gt.mean()
        if 0.02 <= frac <= 0.5:
            break
    else:
        raise ParameterError(
            f"could not draw a scene with foreground fraction in [0.02, 0.5] (last {frac:.3f})")

    bg = _smooth_field(3, size, rng, 0.15, 0.85)
    bg_mean = bg.mean(axis=(1, 2))
    color = np.clip(bg_mean + np.where(bg_mean < 0.5, 1.0, -1.0) * rng.uniform(0.3, 0.5, 3), 0, 1)
    rgb = bg * (1.0 - alpha) + color[:, None, None] * alpha
    rgb = np.clip(rgb + rng.normal(0.0, 0.02, rgb.shape), 0.0, 1.0)

    base_temp = rng.uniform(0.15, 0.4)
    obj_temp = base_temp + rng.uniform(0.35, 0.5)
    field = _smooth_field(1, size, rng, -0.05, 0.05)[0] + base_temp + alpha * (obj_temp - base_temp)
    field = np.clip(field + rng.normal(0.0, 0.02, field.shape), 0.0, 1.0)
    thermal = np.repeat(field[None], 3, axis=0)
    return rgb, thermal, gt.astype(np.uint8)


# ------------------------------------------------------------- sample pairs

@dataclass(frozen=True)
class AffineRanges:
    """Sampling ranges for the synthetic misalignment."""
    max_translate: float = 0.1        # fraction of the image side, per axis
    max_rotation_deg: float = 10.0
    scale_low: float = 0.9
    scale_high: float = 1.1

    def __post_init__(self):
        if not 0.0 <= self.max_translate < 0.5:
            raise ParameterError(f"max_translate must be in [0, 0.5), got {self.max_translate}")
        if self.max_rotation_deg < 0:
            raise ParameterError(f"max_rotation_deg must be >= 0, got {self.max_rotation_deg}")
        if not 0 < self.scale_low <= self.scale_high:
            raise ParameterError(
                f"need 0 < scale_low <= scale_high, got [{self.scale_low}, {self.scale_high}]")

    def sample(self, size, rng):
        t = self.max_translate * size
        return AffineParams(tx=float(rng.uniform(-t, t)),
                            ty=float(rng.uniform(-t, t)),
                            rotation_deg=float(rng.uniform(-self.max_rotation_deg,
                                                           self.max_rotation_deg)),
                            scale=float(rng.uniform(self.scale_low, self.scale_high)))


@dataclass
class SyntheticPair:
    """An unaligned input pair; gt stays registered to the RGB view."""
    rgb: np.ndarray
    thermal: np.ndarray
    gt: np.ndarray
    params: AffineParams


def gen_unaligned_pair(size, rng, ranges=AffineRanges()):
    rgb, thermal, gt = gen_scene(size, rng)
    params = ranges.sample(size, rng)
    return SyntheticPair(rgb=rgb, thermal=warp_affine(thermal, params), gt=gt, params=params)


def gen_pairs(count, size, seed, ranges=AffineRanges()):
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    return [gen_unaligned_pair(size, rng, ranges) for _ in range(count)]
