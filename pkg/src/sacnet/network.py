"""The end-to-end saliency network.

Two small convolutional encoders (one per modality) produce four feature
levels at 1/4, 1/8, 1/16 and 1/32 resolution.  Levels 2..4 pass through
semantic guidance and windowed cross-modal correlation, then a deformable
alignment cascade fuses thermal onto RGB per level.  A top-down decoder
merges the fused maps and a two-convolution head emits a full-resolution
saliency map in [0, 1].

Every ablation flag only changes the forward wiring; the parameter set and
its random initialisation are identical across variants with equal seeds,
so ablation runs are comparable step for step.
"""

from dataclasses import dataclass, fields, replace

import numpy as np

from . import io as sio
from . import tensor as T
from .acm import AcmLevelParams, SemanticGuidanceParams, acm_forward, build_window_grid, semantic_guidance
from .afsm import AfsmStageParams, afsm_forward
from .errors import ParameterError, ProtocolError, ShapeError

_STRIDES = (4, 2, 2, 2)


@dataclass(frozen=True)
class SACNetConfig:
    input_size: int = 384
    channels: tuple = (16, 32, 64, 128)
    decoder_channels: int = 32
    small_window: int = 4
    large_window: int = 6
    cascade_depth: int = 4
    seed: int = 0
    use_acm: bool = True
    use_awp: bool = True
    use_sgm: bool = True
    use_afsm: bool = True

    def __post_init__(self):
        if self.input_size < 32 or self.input_size % 32 != 0:
            raise ParameterError(
                f"input_size must be a positive multiple of 32, got {self.input_size}")
        if len(self.channels) != 4 or any(c < 1 for c in self.channels):
            raise ParameterError(f"channels must be 4 positive widths, got {self.channels}")
        if self.decoder_channels < 1:
            raise ParameterError(f"decoder_channels must be >= 1, got {self.decoder_channels}")
        if self.small_window < 1:
            raise ParameterError(f"small_window must be >= 1, got {self.small_window}")
        if self.large_window < self.small_window:
            raise ParameterError(
                f"large_window ({self.large_window}) must be >= small_window ({self.small_window})")
        if self.cascade_depth < 1:
            raise ParameterError(f"cascade_depth must be >= 1, got {self.cascade_depth}")

    @classmethod
    def micro(cls, size=64, **overrides):
        """A deliberately tiny configuration for tests and gradient checks."""
        base = dict(input_size=size, channels=(6, 8, 12, 16), decoder_channels=8,
                    cascade_depth=2, small_window=2, large_window=4)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "channels":
                out[f.name] = ",".join(str(c) for c in v)
            else:
                out[f.name] = str(v)
        return out

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            raw = d[f.name]
            if f.name == "channels":
                kw[f.name] = tuple(int(c) for c in raw.split(","))
            elif f.type == "bool" or isinstance(getattr(cls, f.name, None), bool):
                kw[f.name] = raw in ("True", "true", "1")
            else:
                kw[f.name] = int(raw)
        return cls(**kw)


class _EncoderParams:
    def __init__(self, channels, rng):
        self.stages = []
        c_in = 3
        for c_out in channels:
            scale = np.sqrt(2.0 / (c_in * 9))
            w = T.randn((c_out, c_in, 3, 3), rng=rng, scale=scale, requires_grad=True)
            b = T.zeros((c_out,), requires_grad=True)
            self.stages.append((w, b))
            c_in = c_out

    def tensors(self, prefix):
        out = {}
        for idx, (w, b) in enumerate(self.stages, start=1):
            out[f"{prefix}.s{idx}.w"] = w
            out[f"{prefix}.s{idx}.b"] = b
        return out


def _conv_pair(rng, c_out, c_in, k):
    scale = np.sqrt(2.0 / (c_in * k * k))
    w = T.randn((c_out, c_in, k, k), rng=rng, scale=scale, requires_grad=True)
    b = T.zeros((c_out,), requires_grad=True)
    return w, b


class SACNet:
    def __init__(self, config=None):
        self.config = config or SACNetConfig()
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        ch = {lvl: c for lvl, c in enumerate(cfg.channels, start=1)}
        cd = cfg.decoder_channels

        # construction order is fixed; ablation flags must not touch it
        self.enc_rgb = _EncoderParams(cfg.channels, rng)
        self.enc_t = _EncoderParams(cfg.channels, rng)
        self.sgm = SemanticGuidanceParams(ch, rng)
        self.acm = {lvl: AcmLevelParams(ch[lvl], rng) for lvl in (2, 3, 4)}
        self.afsm = {lvl: AfsmStageParams(ch[lvl], cd, cfg.cascade_depth, rng)
                     for lvl in (2, 3, 4)}
        self.dec = {lvl: _conv_pair(rng, cd, cd, 3) for lvl in (4, 3, 2)}
        self.proj_rgb1 = _conv_pair(rng, cd, ch[1], 1)
        self.proj_t1 = _conv_pair(rng, cd, ch[1], 1)
        self.head_mix = _conv_pair(rng, cd, cd, 3)
        self.head_out = _conv_pair(rng, 1, cd, 3)

    # ------------------------------------------------------------- params

    def parameters(self):
        """Name -> Tensor in a fixed, documented order."""
        out = {}
        out.update(self.enc_rgb.tensors("enc.rgb"))
        out.update(self.enc_t.tensors("enc.t"))
        out.update(self.sgm.tensors("sgm"))
        for lvl in (2, 3, 4):
            out.update(self.acm[lvl].tensors(f"acm.l{lvl}"))
        for lvl in (2, 3, 4):
            out.update(self.afsm[lvl].tensors(f"afsm.l{lvl}"))
        for lvl in (4, 3, 2):
            w, b = self.dec[lvl]
            out[f"dec.l{lvl}.w"] = w
            out[f"dec.l{lvl}.b"] = b
        for name, (w, b) in (("dec.proj_rgb1", self.proj_rgb1),
                             ("dec.proj_t1", self.proj_t1),
                             ("dec.mix", self.head_mix),
                             ("dec.out", self.head_out)):
            out[f"{name}.w"] = w
            out[f"{name}.b"] = b
        return out

    def correlations(self):
        """All correlation parameter blocks, semantic guidance first."""
        blocks = [self.sgm.corr]
        for lvl in (2, 3, 4):
            blocks += [self.acm[lvl].rgb_dir, self.acm[lvl].t_dir]
        return blocks

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    # ------------------------------------------------------------ forward

    def _encode(self, img, enc):
        feats = {}
        cur = img
        for lvl, ((w, b), stride) in enumerate(zip(enc.stages, _STRIDES), start=1):
            cur = T.conv2d(cur, w, b, stride=stride, padding=1).relu()
            feats[lvl] = cur
        return feats

    def _check_input(self, img, name):
        if not isinstance(img, T.Tensor):
            img = T.Tensor(img)
        s = self.config.input_size
        if img.shape != (3, s, s):
            raise ShapeError(f"{name} input must be (3, {s}, {s}), got {img.shape}")
        return img

    def forward(self, rgb, thermal):
        """rgb, thermal [3, S, S] -> saliency [1, S, S] in [0, 1]."""
        cfg = self.config
        rgb = self._check_input(rgb, "rgb")
        thermal = self._check_input(thermal, "thermal")

        f_rgb = self._encode(rgb, self.enc_rgb)
        f_t = self._encode(thermal, self.enc_t)

        enh_rgb = enh_t = None
        if cfg.use_acm and cfg.use_sgm:
            enh_rgb, enh_t = semantic_guidance(f_rgb, f_t, self.sgm)

        fused = {}
        for lvl in (2, 3, 4):
            if cfg.use_acm:
                _, h, w = f_rgb[lvl].shape
                grid = build_window_grid(h, w, cfg.small_window, cfg.large_window)
                y_rgb, y_t = acm_forward(
                    f_rgb[lvl], f_t[lvl], self.acm[lvl], grid,
                    None if enh_rgb is None else enh_rgb[lvl],
                    None if enh_t is None else enh_t[lvl],
                    use_windows=cfg.use_awp)
            else:
                y_rgb, y_t = f_rgb[lvl], f_t[lvl]
            fused[lvl] = afsm_forward(y_t, y_rgb, self.afsm[lvl], align=cfg.use_afsm)

        d = T.conv2d(T.upsample_bilinear(fused[4], 2), *self._wb(self.dec[4]), padding=1).relu()
        d = T.conv2d(T.upsample_bilinear(fused[3] + d, 2), *self._wb(self.dec[3]), padding=1).relu()
        d = T.conv2d(T.upsample_bilinear(fused[2] + d, 2), *self._wb(self.dec[2]), padding=1).relu()

        top = d + T.conv2d(f_rgb[1], *self._wb(self.proj_rgb1)) \
                + T.conv2d(f_t[1], *self._wb(self.proj_t1))
        top = T.conv2d(top, *self._wb(self.head_mix), padding=1).relu()
        logits = T.conv2d(T.upsample_bilinear(top, 4), *self._wb(self.head_out), padding=1)
        return logits.sigmoid()

    @staticmethod
    def _wb(pair):
        return pair[0], pair[1]

    # -------------------------------------------------------- persistence

    def save(self, directory):
        arrays = {name: t.data for name, t in self.parameters().items()}
        sio.save_checkpoint(directory, arrays, self.config.to_dict())

    @classmethod
    def load(cls, directory):
        arrays, config = sio.load_checkpoint(directory)
        model = cls(SACNetConfig.from_dict(config))
        params = model.parameters()
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise ProtocolError(
                f"checkpoint does not match the model: missing {missing[:3]}, extra {extra[:3]}")
        for name, t in params.items():
            if arrays[name].shape != t.data.shape:
                raise ShapeError(
                    f"checkpoint tensor {name} has shape {arrays[name].shape}, "
                    f"model expects {t.data.shape}")
            t.data = np.ascontiguousarray(arrays[name], dtype=np.float64)
        return model


def nudge_offsets(model, rng, lo=0.05, hi=0.3):
    """Move gradient-check-hostile parameters off their special inits.

    Two groups need it.  Bilinear sampling has derivative kinks at integer
    coordinates; the zero-initialised offsets sit exactly on that lattice,
    where central differences straddle the kink and disagree with the
    (one-sided) analytic gradient, so the offset biases move to small
    fractional values.  And the zero-initialised value projections make
    the attention output independent of the query/key projections, which
    would leave that part of the backward pass unexercised, so they get
    small random values too.  Training needs no such treatment: the kinks
    are measure-zero and Adam steps straight through them.
    """
    for stage in model.afsm.values():
        for layer in stage.layers:
            mag = rng.uniform(lo, hi, layer.off_b.shape)
            sign = np.where(rng.uniform(size=layer.off_b.shape) < 0.5, -1.0, 1.0)
            layer.off_b.data += mag * sign
    for corr in model.correlations():
        corr.wv.data += rng.normal(size=corr.wv.shape) * (corr.dim ** -0.5)


def end_to_end_grad_check(model, rgb, thermal, gt, entries=240, eps=1e-5,
                          tol=1e-3, seed=0, loss_cfg=None):
    """Finite-difference check of the training loss over a random
    subsample of all model parameters."""
    from . import tensor as T
    from .losses import LossConfig, total_loss

    loss_cfg = loss_cfg or LossConfig()
    rgb_t = T.Tensor(np.asarray(rgb))
    th_t = T.Tensor(np.asarray(thermal))
    params = list(model.parameters().values())

    def f(*_):
        return total_loss(model.forward(rgb_t, th_t), gt, loss_cfg)[0]

    return T.grad_check(f, params, eps=eps, tol=tol, max_entries=entries, seed=seed)


def ablation_config(base, variant):
    """Named forward-wiring variants used by the ablation study."""
    variants = {
        "full": {},
        "no-acm": {"use_acm": False},
        "no-awp": {"use_awp": False},
        "no-sgm": {"use_sgm": False},
        "no-afsm": {"use_afsm": False},
    }
    if variant not in variants:
        raise ParameterError(
            f"unknown ablation variant {variant!r}, expected one of {sorted(variants)}")
    return replace(base, **variants[variant])
