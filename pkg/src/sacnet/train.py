"""Small-scale training driver shared by the CLI and the tests."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import NumericError, ProtocolError
from .losses import AdamW, LossConfig, total_loss

LOG_FIELDS = ("step", "pair", "bce", "smoothness", "dice", "total")


@dataclass
class TrainResult:
    initial_loss: float
    final_loss: float
    history: list  # one dict per step with LOG_FIELDS keys


def dataset_loss(model, pairs, loss_cfg=LossConfig()):
    """Mean total loss over a pair set, without touching the parameters."""
    vals = []
    for p in pairs:
        s = model.forward(T.Tensor(p.rgb), T.Tensor(p.thermal))
        _, parts = total_loss(s, p.gt, loss_cfg)
        vals.append(parts["total"])
    return float(np.mean(vals))


def train_toy(model, pairs, steps, lr=1e-3, weight_decay=1e-4,
              loss_cfg=LossConfig(), on_step=None):
    """Overfit a handful of pairs: step k updates on pairs[k % len(pairs)].

    initial/final losses are whole-set evaluations before and after.
    The first non-finite loss aborts with NumericError carrying the step.
    """
    pairs = list(pairs)
    if not pairs:
        raise ProtocolError("train_toy needs at least one pair")
    if steps < 1:
        raise ProtocolError(f"steps must be >= 1, got {steps}")
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    initial = dataset_loss(model, pairs, loss_cfg)
    history = []
    for step in range(steps):
        idx = step % len(pairs)
        pair = pairs[idx]
        s = model.forward(T.Tensor(pair.rgb), T.Tensor(pair.thermal))
        try:
            tot, parts = total_loss(s, pair.gt, loss_cfg)
        except NumericError as exc:
            raise NumericError(f"training diverged: {exc}", step=step) from None
        opt.zero_grad()
        tot.backward()
        opt.step()
        row = {"step": step, "pair": idx, "bce": parts["bce"],
               "smoothness": parts["smoothness"], "dice": parts["dice"],
               "total": parts["total"]}
        history.append(row)
        if on_step is not None:
            on_step(row)
    opt.zero_grad()
    final = dataset_loss(model, pairs, loss_cfg)
    return TrainResult(initial_loss=initial, final_loss=final, history=history)


def write_history_csv(history, path):
    with open(path, "w") as fh:
        fh.write(",".join(LOG_FIELDS) + "\n")
        for row in history:
            fh.write(f"{row['step']},{row['pair']},"
                     f"{row['bce']:.8f},{row['smoothness']:.8f},"
                     f"{row['dice']:.8f},{row['total']:.8f}\n")


def iou(pred, gt, threshold=0.5):
    """Intersection over union of the binarised prediction."""
    p = np.asarray(pred) >= threshold
    g = np.asarray(gt) > 0
    union = (p | g).sum()
    if union == 0:
        return 1.0
    return float((p & g).sum() / union)
