"""Composite training loss (cross-entropy, edge-aware smoothness, dice)
and a decoupled-weight-decay Adam optimizer.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import NumericError, ParameterError, ShapeError


@dataclass
class LossConfig:
    bce_weight: float = 1.0
    smoothness_weight: float = 1.0
    dice_weight: float = 1.0
    smoothness_lambda: float = 10.0
    # charbonnier floor inside the smoothness sqrt
    smoothness_eps: float = 1e-6
    dice_eps: float = 1e-6
    # probability clamp keeping log() finite
    bce_clamp: float = 1e-7


def _prep(pred, gt):
    if not isinstance(pred, T.Tensor):
        raise ParameterError("prediction must be a Tensor (it carries the tape)")
    if pred.ndim == 3 and pred.shape[0] == 1:
        pred = pred.reshape(pred.shape[1], pred.shape[2])
    if pred.ndim != 2:
        raise ShapeError(f"prediction must be [H,W] or [1,H,W], got {pred.shape}")
    gt = np.asarray(gt, dtype=np.float64)
    if gt.ndim == 3 and gt.shape[0] == 1:
        gt = gt[0]
    if gt.shape != pred.shape:
        raise ShapeError(f"ground truth {gt.shape} does not match prediction {pred.shape}")
    bad = (gt != 0) & (gt != 1)
    if bad.any():
        raise ParameterError("ground truth must be binary {0,1}")
    return pred, gt


def bce_loss(pred, gt, cfg=LossConfig()):
    """Mean binary cross-entropy; probabilities are clamped away from 0/1."""
    pred, gt = _prep(pred, gt)
    p = pred.clip(cfg.bce_clamp, 1.0 - cfg.bce_clamp)
    ll = gt * p.log() + (1.0 - gt) * (1.0 - p).log()
    return -ll.mean()


def smoothness_loss(pred, gt, cfg=LossConfig()):
    """Edge-aware first-order smoothness.

    Forward differences of the prediction are penalised through a
    charbonnier sqrt(d^2 + eps) and downweighted across ground-truth edges
    by exp(-lambda * |dG|), so the prediction may jump where the mask
    jumps.  Both axes are pooled into one mean over all difference terms.
    """
    pred, gt = _prep(pred, gt)
    h, w = pred.shape
    if h < 2 or w < 2:
        raise ShapeError(f"smoothness needs at least a 2x2 map, got {(h, w)}")
    lam = cfg.smoothness_lambda
    wx = np.exp(-lam * np.abs(gt[1:, :] - gt[:-1, :]))
    wy = np.exp(-lam * np.abs(gt[:, 1:] - gt[:, :-1]))
    dx = pred[1:, :] - pred[:-1, :]
    dy = pred[:, 1:] - pred[:, :-1]
    tx = ((dx * dx + cfg.smoothness_eps).sqrt() * wx).sum()
    ty = ((dy * dy + cfg.smoothness_eps).sqrt() * wy).sum()
    count = wx.size + wy.size
    return (tx + ty) / count


def dice_loss(pred, gt, cfg=LossConfig()):
    """1 - soft dice overlap."""
    pred, gt = _prep(pred, gt)
    inter = (pred * gt).sum()
    total = pred.sum() + float(gt.sum())
    return 1.0 - (2.0 * inter + cfg.dice_eps) / (total + cfg.dice_eps)


def total_loss(pred, gt, cfg=LossConfig()):
    """Weighted sum of the three terms.

    Returns (total, parts) where total is the Tensor to backpropagate and
    parts maps term name -> float value (unweighted).
    """
    b = bce_loss(pred, gt, cfg)
    s = smoothness_loss(pred, gt, cfg)
    d = dice_loss(pred, gt, cfg)
    tot = cfg.bce_weight * b + cfg.smoothness_weight * s + cfg.dice_weight * d
    parts = {"bce": b.item(), "smoothness": s.item(), "dice": d.item(),
             "total": tot.item()}
    if not np.isfinite(parts["total"]):
        raise NumericError(f"loss is not finite: {parts}")
    return tot, parts


class AdamW:
    """Adam with decoupled weight decay.

    params is a name -> Tensor mapping; parameters whose .grad is None at
    step() time are skipped (their moments do not advance either).
    """

    def __init__(self, params, lr=1e-5, weight_decay=1e-4, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise ParameterError(f"weight decay must be >= 0, got {weight_decay}")
        b1, b2 = betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ParameterError(f"betas must lie in [0,1), got {betas}")
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = (b1, b2)
        self.eps = eps
        self.state = {name: {"step": 0, "m": np.zeros_like(t.data), "v": np.zeros_like(t.data)}
                      for name, t in self.params.items()}

    def step(self):
        b1, b2 = self.betas
        for name, p in self.params.items():
            if p.grad is None:
                continue
            st = self.state[name]
            st["step"] += 1
            t = st["step"]
            st["m"] = b1 * st["m"] + (1.0 - b1) * p.grad
            st["v"] = b2 * st["v"] + (1.0 - b2) * p.grad * p.grad
            mhat = st["m"] / (1.0 - b1 ** t)
            vhat = st["v"] / (1.0 - b2 ** t)
            p.data -= self.lr * (mhat / (np.sqrt(vhat) + self.eps)
                                 + self.weight_decay * p.data)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
