"""Saliency evaluation: MAE, structure measure, enhanced-alignment measure,
weighted F-measure and precision/recall curves.

All metric functions take a float prediction in [0,1] and a binary ground
truth of the same [H,W] shape, and are pure numpy (no autodiff).  Edge
cases follow the reference definitions of each measure; where a reference
leaves a tie or a degenerate case open, the choice made here is documented
on the function.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .errors import ParameterError, ProtocolError, ShapeError

EPS = float(np.spacing(1))
THRESHOLDS = np.arange(256, dtype=np.float64) / 255.0


def _validate(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.ndim != 2:
        raise ShapeError(f"prediction must be [H,W], got {pred.shape}")
    if gt.shape != pred.shape:
        raise ShapeError(f"ground truth {gt.shape} does not match prediction {pred.shape}")
    if pred.min() < -1e-9 or pred.max() > 1.0 + 1e-9:
        raise ParameterError(
            f"prediction must lie in [0,1], got range [{pred.min():.4f}, {pred.max():.4f}]")
    bad = (gt != 0) & (gt != 1)
    if bad.any():
        raise ParameterError("ground truth must be binary {0,1}")
    return np.clip(pred, 0.0, 1.0), gt.astype(bool)


def mae(pred, gt):
    """Mean absolute error; 0 is perfect."""
    pred, gt = _validate(pred, gt)
    return float(np.abs(pred - gt).mean())


# ------------------------------------------------------- structure measure

def _object_score(x):
    if x.size == 0:
        return 0.0
    m = float(x.mean())
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return 2.0 * m / (m * m + 1.0 + sd + EPS)


def _s_object(pred, gt):
    mu = gt.mean()
    return mu * _object_score(pred[gt]) + (1.0 - mu) * _object_score(1.0 - pred[~gt])


def _centroid(gt):
    # 0-based weighted means, rounded half-up
    total = gt.sum()
    rows = np.arange(gt.shape[0])
    cols = np.arange(gt.shape[1])
    cy = int(np.floor(float((gt.sum(axis=1) * rows).sum()) / total + 0.5))
    cx = int(np.floor(float((gt.sum(axis=0) * cols).sum()) / total + 0.5))
    return cy, cx


def _region_ssim(x, y):
    n = x.size
    if n == 0:
        return 0.0
    mx = float(x.mean())
    my = float(y.mean())
    if n > 1:
        vx = float(x.var(ddof=1))
        vy = float(y.var(ddof=1))
        cov = float(((x - mx) * (y - my)).sum() / (n - 1))
    else:
        vx = vy = cov = 0.0
    a = 4.0 * mx * my * cov
    b = (mx * mx + my * my) * (vx + vy)
    if a != 0.0:
        return a / (b + EPS)
    return 1.0 if b == 0.0 else 0.0


def _s_region(pred, gt):
    h, w = gt.shape
    cy, cx = _centroid(gt)
    sr, sc = cy + 1, cx + 1  # the centroid row/col belongs to the upper-left block
    score = 0.0
    for rs, cs in ((slice(0, sr), slice(0, sc)), (slice(0, sr), slice(sc, w)),
                   (slice(sr, h), slice(0, sc)), (slice(sr, h), slice(sc, w))):
        gb = gt[rs, cs]
        weight = gb.size / (h * w)
        if gb.size:
            score += weight * _region_ssim(pred[rs, cs], gb.astype(np.float64))
    return score


def s_measure(pred, gt, alpha=0.5):
    """Structure measure: alpha-weighted object and region similarity.

    Degenerate masks follow the reference: an all-background truth scores
    1 - mean(pred), an all-foreground truth scores mean(pred).  Single-
    element regions take variance 0 (the N-1 estimator is undefined there).
    """
    pred, gt = _validate(pred, gt)
    mu = gt.mean()
    if mu == 0.0:
        return float(1.0 - pred.mean())
    if mu == 1.0:
        return float(pred.mean())
    score = alpha * _s_object(pred, gt) + (1.0 - alpha) * _s_region(pred, gt)
    return max(float(score), 0.0)


# ---------------------------------------------- enhanced-alignment measure

def e_measure_curve(pred, gt):
    """Alignment score for each of the 256 binarisation thresholds k/255.

    Per threshold the prediction is binarised at >= t; the score is the
    plain pixel mean of the enhanced alignment matrix (degenerate truths:
    all-background scores mean(1 - bin), all-foreground scores mean(bin)),
    so a perfect prediction scores exactly 1.
    """
    pred, gt = _validate(pred, gt)
    g = gt.astype(np.float64)
    mu = g.mean()
    out = np.empty(256)
    for k, t in enumerate(THRESHOLDS):
        b = (pred >= t).astype(np.float64)
        if mu == 0.0:
            out[k] = float((1.0 - b).mean())
        elif mu == 1.0:
            out[k] = float(b.mean())
        else:
            phi_g = g - mu
            phi_b = b - b.mean()
            align = 2.0 * phi_g * phi_b / (phi_g * phi_g + phi_b * phi_b + EPS)
            out[k] = float(((align + 1.0) ** 2 / 4.0).mean())
    return out


def e_measure(pred, gt):
    """(mean, max) of the threshold curve."""
    curve = e_measure_curve(pred, gt)
    return float(curve.mean()), float(curve.max())


# ------------------------------------------------------ weighted F-measure

def _gaussian_kernel(size=5, sigma=5.0):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


_GAUSS = _gaussian_kernel()


def weighted_f(pred, gt, beta2=1.0):
    """Weighted F-measure with dependency- and distance-aware errors.

    Background errors are propagated from the nearest foreground pixel
    (squared-distance ties go to the first pixel in row-major order), the
    error field is blurred with a 5x5, sigma 5 gaussian (zero padded), and
    background errors decay with distance from the object.  An empty
    ground truth has no foreground to weight against and returns 0.
    """
    pred, gt = _validate(pred, gt)
    if not gt.any():
        return 0.0
    h, w = gt.shape
    err = np.abs(pred - gt)
    br, bc = K.nearest_fg(gt.astype(np.uint8))
    bg = ~gt
    et = err.copy()
    et[bg] = err[br[bg], bc[bg]]
    ea = K.conv2d_fwd(et[None], _GAUSS[None, None], 1, 2)[0]
    min_e_ea = ea.copy()
    keep = gt & (err < ea)
    min_e_ea[keep] = err[keep]
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dist = np.sqrt((rr - br) ** 2.0 + (cc - bc) ** 2.0)
    b_weight = np.ones((h, w))
    b_weight[bg] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist[bg])
    ew = min_e_ea * b_weight
    tpw = gt.sum() - ew[gt].sum()
    fpw = ew[bg].sum()
    recall = 1.0 - ew[gt].mean()
    precision = tpw / (EPS + tpw + fpw)
    return float((1.0 + beta2) * recall * precision / (EPS + recall + beta2 * precision))


# --------------------------------------------------- precision/recall curve

@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray


def pr_curve(pairs):
    """Dataset-level PR curve over the 256 thresholds.

    pairs is an iterable of (pred, gt); counts are pooled before the
    ratios, precision = TP/(TP+FP+eps) and recall = TP/(TP+FN+eps), so
    recall is non-increasing in the threshold by construction.
    """
    edges = np.concatenate([THRESHOLDS, [np.inf]])
    tp = np.zeros(256)
    fp = np.zeros(256)
    n_fg = 0.0
    n_bg = 0.0
    count = 0
    for pred, gt in pairs:
        pred, gt = _validate(pred, gt)
        fg_hist, _ = np.histogram(pred[gt], bins=edges)
        bg_hist, _ = np.histogram(pred[~gt], bins=edges)
        tp += np.cumsum(fg_hist[::-1])[::-1]
        fp += np.cumsum(bg_hist[::-1])[::-1]
        n_fg += int(gt.sum())
        n_bg += int((~gt).sum())
        count += 1
    if count == 0:
        raise ProtocolError("pr_curve needs at least one (pred, gt) pair")
    precision = tp / (tp + fp + EPS)
    recall = tp / (n_fg + EPS)
    return PRCurve(THRESHOLDS.copy(), precision, recall)


# ------------------------------------------------------------- full report

@dataclass
class MetricReport:
    rows: list          # per image: dict with name, mae, s, e_mean, e_max, wf
    mean: dict          # same keys, averaged
    pr: PRCurve

    _FIELDS = ("mae", "s_measure", "e_mean", "e_max", "weighted_f")

    def write_metrics_csv(self, path):
        with open(path, "w") as fh:
            fh.write("name," + ",".join(self._FIELDS) + "\n")
            for row in self.rows + [dict(self.mean, name="mean")]:
                fh.write(row["name"] + "," +
                         ",".join(f"{row[k]:.6f}" for k in self._FIELDS) + "\n")

    def write_pr_csv(self, path):
        with open(path, "w") as fh:
            fh.write("threshold,precision,recall\n")
            for t, p, r in zip(self.pr.thresholds, self.pr.precision, self.pr.recall):
                fh.write(f"{t:.6f},{p:.6f},{r:.6f}\n")


def evaluate_pairs(named_pairs):
    """named_pairs: iterable of (name, pred, gt) -> MetricReport."""
    rows = []
    preds = []
    for name, pred, gt in named_pairs:
        em, ex = e_measure(pred, gt)
        rows.append({"name": name, "mae": mae(pred, gt), "s_measure": s_measure(pred, gt),
                     "e_mean": em, "e_max": ex, "weighted_f": weighted_f(pred, gt)})
        preds.append((pred, gt))
    if not rows:
        raise ProtocolError("evaluate_pairs needs at least one (name, pred, gt) item")
    mean = {k: float(np.mean([r[k] for r in rows])) for k in MetricReport._FIELDS}
    return MetricReport(rows=rows, mean=mean, pr=pr_curve(preds))
