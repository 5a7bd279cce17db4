"""Cross-modal correlation with asymmetric windows and semantic guidance.

The core idea: when the two modalities are not pixel-aligned, a feature at
position p in one modality should be matched against a neighbourhood of p
in the other.  Small query windows (side M) taken from one modality attend
over larger co-centred windows (side N >= M) from the other, so moderate
misalignment stays inside the search region.  Before that, a global
self-correlation over the deepest level produces semantic maps that gate
each level's features ("semantic guidance").
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ParameterError, ShapeError


# ------------------------------------------------------------ window grid

@dataclass(frozen=True)
class WindowGrid:
    """Paired window origins over an HxW map.

    Small windows tile the map (ceil(H/M) x ceil(W/M), non-overlapping,
    the last row/column may overhang).  Each large window shares its
    centre with its small partner, so its origin sits (N-M)//2 up-left;
    large windows may overhang on any side.  Overhanging positions read
    as zeros and are dropped on scatter.
    """
    height: int
    width: int
    small: int
    large: int
    small_origins: np.ndarray
    large_origins: np.ndarray

    @property
    def count(self):
        return len(self.small_origins)


def build_window_grid(height, width, small, large):
    if small < 1:
        raise ParameterError(f"small window must be >= 1, got {small}")
    if large < small:
        raise ParameterError(
            f"large window must be >= small window, got large {large} < small {small}")
    if height < 1 or width < 1:
        raise ShapeError(f"window grid needs a non-empty map, got {height}x{width}")
    nh = -(-height // small)
    nw = -(-width // small)
    rr, cc = np.meshgrid(np.arange(nh) * small, np.arange(nw) * small, indexing="ij")
    small_origins = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.int64)
    shift = (large - small) // 2
    large_origins = small_origins - shift
    return WindowGrid(height, width, small, large, small_origins, large_origins)


# ------------------------------------------------------------- correlation

class CorrelationParams:
    """Query/key/value projections for one correlation direction."""

    def __init__(self, dim, rng):
        scale = dim ** -0.5
        self.dim = dim
        self.wq = T.randn((dim, dim), rng=rng, scale=scale, requires_grad=True)
        self.bq = T.zeros((dim,), requires_grad=True)
        self.wk = T.randn((dim, dim), rng=rng, scale=scale, requires_grad=True)
        self.bk = T.zeros((dim,), requires_grad=True)
        self.wv = T.randn((dim, dim), rng=rng, scale=scale, requires_grad=True)
        # Zero the value projection (after drawing it, to keep the rng stream
        # stable): the attention branch then contributes nothing at init and
        # the block starts as the identity on its query source, so adding it
        # can only be learned into an improvement rather than starting as a
        # random perturbation.
        self.wv.data[:] = 0.0
        self.bv = T.zeros((dim,), requires_grad=True)

    def tensors(self, prefix):
        return {f"{prefix}.{n}": t for n, t in
                [("wq", self.wq), ("bq", self.bq), ("wk", self.wk),
                 ("bk", self.bk), ("wv", self.wv), ("bv", self.bv)]}


def _project(tokens, w, b):
    # tokens [B, n, d]: flatten the batch so one matmul covers all windows
    bsz, n, d = tokens.shape
    flat = tokens.reshape(bsz * n, d)
    out = flat.matmul(w) + T.ones((bsz * n, 1)).matmul(b.reshape(1, d))
    return out.reshape(bsz, n, d)


def correlation_batched(queries, values, params):
    """Scaled dot-product correlation with a residual on the raw queries.

    queries [B, nq, d], values [B, nv, d] -> [B, nq, d]:
        softmax(Q K^T / sqrt(d)) V + queries
    where Q, K, V are linear projections of the inputs.  The residual uses
    the unprojected query tokens, so with zero projections the operator is
    the identity on its query source.
    """
    if queries.ndim != 3 or values.ndim != 3:
        raise ShapeError(
            f"correlation needs [B,n,d] token batches, got {queries.shape} and {values.shape}")
    if queries.shape[0] != values.shape[0] or queries.shape[2] != values.shape[2]:
        raise ShapeError(
            f"correlation batch/feature dims differ: {queries.shape} vs {values.shape}")
    if queries.shape[2] != params.dim:
        raise ShapeError(
            f"correlation feature dim {queries.shape[2]} does not match parameters ({params.dim})")
    q = _project(queries, params.wq, params.bq)
    k = _project(values, params.wk, params.bk)
    v = _project(values, params.wv, params.bv)
    scores = q.bmm(k.transpose(0, 2, 1)) * (params.dim ** -0.5)
    att = T.softmax(scores, axis=-1)
    return att.bmm(v) + queries


def correlation(queries, values, params):
    """Unbatched correlation on token matrices [nq, d] and [nv, d]."""
    if queries.ndim != 2 or values.ndim != 2:
        raise ShapeError(
            f"correlation needs [n,d] token matrices, got {queries.shape} and {values.shape}")
    nq, d = queries.shape
    out = correlation_batched(queries.reshape(1, nq, d),
                              values.reshape(1, values.shape[0], d), params)
    return out.reshape(nq, d)


# -------------------------------------------------------- semantic guidance

class SemanticGuidanceParams:
    """Global self-correlation at the deepest level plus per-level gates."""

    def __init__(self, channels, rng):
        # channels: map level -> width, levels 1..4; guidance covers 2..4
        self.channels = dict(channels)
        c4 = self.channels[4]
        self.corr = CorrelationParams(c4, rng)
        self.convs = {}
        for mod in ("rgb", "t"):
            for lvl in (2, 3, 4):
                c_out = self.channels[lvl]
                scale = np.sqrt(2.0 / (c4 * 9))
                w = T.randn((c_out, c4, 3, 3), rng=rng, scale=scale, requires_grad=True)
                b = T.zeros((c_out,), requires_grad=True)
                self.convs[(mod, lvl)] = (w, b)

    def tensors(self, prefix):
        out = self.corr.tensors(f"{prefix}.corr")
        for (mod, lvl), (w, b) in sorted(self.convs.items()):
            out[f"{prefix}.conv.{mod}.l{lvl}.w"] = w
            out[f"{prefix}.conv.{mod}.l{lvl}.b"] = b
        return out


def _to_tokens(fmap):
    c, h, w = fmap.shape
    return fmap.reshape(c, h * w).transpose(1, 0)


def _from_tokens(tokens, c, h, w):
    return tokens.transpose(1, 0).reshape(c, h, w)


def semantic_guidance(feats_rgb, feats_t, params):
    """Gate levels 2..4 of both modalities with global level-4 semantics.

    The two level-4 maps are flattened to token sequences, concatenated and
    self-correlated; the halves are split back per modality, upsampled to
    each level's resolution (x4, x2, x1), convolved to the level's width and
    multiplied elementwise onto that level's features.

    feats_*: dict level -> Tensor [C_l, h_l, w_l].  Returns two dicts for
    levels 2..4.
    """
    f4r, f4t = feats_rgb[4], feats_t[4]
    if f4r.shape != f4t.shape:
        raise ShapeError(f"level-4 maps differ between modalities: {f4r.shape} vs {f4t.shape}")
    c4, h4, w4 = f4r.shape
    tokens = T.concat([_to_tokens(f4r), _to_tokens(f4t)], axis=0)
    glob = correlation(tokens, tokens, params.corr)
    n = h4 * w4
    glo = {"rgb": _from_tokens(glob[:n], c4, h4, w4),
           "t": _from_tokens(glob[n:], c4, h4, w4)}

    out_rgb, out_t = {}, {}
    for mod, feats, out in (("rgb", feats_rgb, out_rgb), ("t", feats_t, out_t)):
        for lvl in (2, 3, 4):
            w, b = params.convs[(mod, lvl)]
            gate = T.conv2d(T.upsample_bilinear(glo[mod], 2 ** (4 - lvl)), w, b, padding=1)
            if gate.shape != feats[lvl].shape:
                raise ShapeError(
                    f"guidance map {gate.shape} does not match level-{lvl} features {feats[lvl].shape}")
            out[lvl] = gate * feats[lvl]
    return out_rgb, out_t


# --------------------------------------------------------------- acm block

class AcmLevelParams:
    """Two correlation directions for one pyramid level."""

    def __init__(self, dim, rng):
        self.rgb_dir = CorrelationParams(dim, rng)  # queries come from rgb
        self.t_dir = CorrelationParams(dim, rng)    # queries come from thermal

    def tensors(self, prefix):
        out = self.rgb_dir.tensors(f"{prefix}.rgb")
        out.update(self.t_dir.tensors(f"{prefix}.t"))
        return out


def acm_forward(f_rgb, f_t, params, grid, enhanced_rgb=None, enhanced_t=None,
                use_windows=True):
    """Bidirectional windowed cross-modal correlation at one level.

    Query windows (small) come from the raw features of each modality;
    key/value windows (large) come from the semantically enhanced features
    of the *other* modality (falling back to its raw features when no
    enhanced maps are given).  With use_windows=False the windows collapse
    to the full map, i.e. plain global cross-correlation.

    Returns (y_rgb, y_t), both shaped like the inputs.
    """
    if f_rgb.shape != f_t.shape:
        raise ShapeError(f"modalities must share a shape, got {f_rgb.shape} vs {f_t.shape}")
    if enhanced_rgb is None:
        enhanced_rgb = f_rgb
    if enhanced_t is None:
        enhanced_t = f_t
    c, h, w = f_rgb.shape
    if (h, w) != (grid.height, grid.width):
        raise ShapeError(f"grid built for {(grid.height, grid.width)}, features are {(h, w)}")

    if not use_windows:
        y_rgb = correlation(_to_tokens(f_rgb), _to_tokens(enhanced_t), params.rgb_dir)
        y_t = correlation(_to_tokens(f_t), _to_tokens(enhanced_rgb), params.t_dir)
        return _from_tokens(y_rgb, c, h, w), _from_tokens(y_t, c, h, w)

    q_rgb = T.gather_windows(f_rgb, grid.small_origins, grid.small)
    q_t = T.gather_windows(f_t, grid.small_origins, grid.small)
    kv_rgb = T.gather_windows(enhanced_rgb, grid.large_origins, grid.large)
    kv_t = T.gather_windows(enhanced_t, grid.large_origins, grid.large)
    y_rgb = correlation_batched(q_rgb, kv_t, params.rgb_dir)
    y_t = correlation_batched(q_t, kv_rgb, params.t_dir)
    return (T.scatter_windows(y_rgb, grid.small_origins, grid.small, h, w),
            T.scatter_windows(y_t, grid.small_origins, grid.small, h, w))
