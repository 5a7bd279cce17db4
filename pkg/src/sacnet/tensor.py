"""Minimal reverse-mode autodiff over float64 numpy arrays.

A Tensor wraps an ndarray plus an optional gradient tape node (parent
tensors and a backward closure).  Calling .backward() on a scalar output
topologically sorts the tape and accumulates .grad on every tensor that
participates with requires_grad=True.

Broadcasting is deliberately restricted: elementwise ops require equal
shapes, except that either operand may be a 0-d scalar.  Anything else
raises ShapeError up front rather than silently broadcasting.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .errors import ContractError, ParameterError, ShapeError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    # make ndarray <op> Tensor defer to our reflected methods instead of
    # numpy broadcasting over the Tensor object
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # ------------------------------------------------------------ basics

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ---------------------------------------------------------- backward

    def backward(self, seed=None):
        if not self.requires_grad:
            raise ContractError("backward() called on a tensor outside the tape")
        if seed is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() without a seed needs a scalar output, got shape {self.data.shape}")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.data.shape:
                raise ShapeError(
                    f"seed shape {seed.shape} must match output shape {self.data.shape}")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = seed.copy()
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -------------------------------------------------------- arithmetic

    def __add__(self, other):
        other = _coerce(other)
        _check_elementwise(self, other, "add")
        a, b = self, other

        def bw(g):
            _accum(a, _collapse(g, a.shape))
            _accum(b, _collapse(g, b.shape))
        return _node(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = _coerce(other)
        _check_elementwise(self, other, "sub")
        a, b = self, other

        def bw(g):
            _accum(a, _collapse(g, a.shape))
            _accum(b, _collapse(-g, b.shape))
        return _node(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return _coerce(other).__sub__(self)

    def __mul__(self, other):
        other = _coerce(other)
        _check_elementwise(self, other, "mul")
        a, b = self, other

        def bw(g):
            _accum(a, _collapse(g * b.data, a.shape))
            _accum(b, _collapse(g * a.data, b.shape))
        return _node(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other)
        _check_elementwise(self, other, "div")
        a, b = self, other

        def bw(g):
            _accum(a, _collapse(g / b.data, a.shape))
            _accum(b, _collapse(-g * a.data / (b.data * b.data), b.shape))
        return _node(a.data / b.data, (a, b), bw)

    def __rtruediv__(self, other):
        return _coerce(other).__truediv__(self)

    def __neg__(self):
        a = self

        def bw(g):
            _accum(a, -g)
        return _node(-a.data, (a,), bw)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise ParameterError("pow supports constant numeric exponents only")
        c = float(exponent)
        a = self

        def bw(g):
            _accum(a, g * c * a.data ** (c - 1.0))
        return _node(a.data ** c, (a,), bw)

    # ------------------------------------------------- pointwise functions

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def bw(g):
            _accum(a, g * out_data)
        return _node(out_data, (a,), bw)

    def log(self):
        a = self

        def bw(g):
            _accum(a, g / a.data)
        return _node(np.log(a.data), (a,), bw)

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)

        def bw(g):
            _accum(a, g / (2.0 * out_data))
        return _node(out_data, (a,), bw)

    def relu(self):
        a = self
        mask = a.data > 0

        def bw(g):
            _accum(a, g * mask)
        return _node(np.where(mask, a.data, 0.0), (a,), bw)

    def sigmoid(self):
        a = self
        # branch on sign so the exp argument is never positive (no overflow)
        pos = a.data >= 0
        e = np.exp(np.where(pos, -a.data, a.data))
        out_data = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))

        def bw(g):
            _accum(a, g * out_data * (1.0 - out_data))
        return _node(out_data, (a,), bw)

    def clip(self, lo, hi):
        if not lo < hi:
            raise ParameterError(f"clip needs lo < hi, got [{lo}, {hi}]")
        a = self
        mask = (a.data >= lo) & (a.data <= hi)

        def bw(g):
            _accum(a, g * mask)
        return _node(np.clip(a.data, lo, hi), (a,), bw)

    # --------------------------------------------------------- reductions

    def sum(self, axis=None):
        a = self
        axes = _norm_axes(axis, a.ndim)

        def bw(g):
            _accum(a, _spread(g, a.shape, axes))
        return _node(a.data.sum(axis=axes), (a,), bw)

    def mean(self, axis=None):
        a = self
        axes = _norm_axes(axis, a.ndim)
        if axes is None:
            count = a.size
        else:
            count = int(np.prod([a.shape[ax] for ax in axes]))

        def bw(g):
            _accum(a, _spread(g, a.shape, axes) / count)
        return _node(a.data.mean(axis=axes), (a,), bw)

    # ------------------------------------------------------------- shape

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        orig = a.shape

        def bw(g):
            _accum(a, g.reshape(orig))
        return _node(a.data.reshape(shape), (a,), bw)

    def flatten(self):
        return self.reshape(self.size)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        if sorted(axes) != list(range(self.ndim)):
            raise ParameterError(f"transpose axes {axes} are not a permutation of 0..{self.ndim - 1}")
        a = self
        inv = tuple(np.argsort(axes))

        def bw(g):
            _accum(a, np.transpose(g, inv))
        return _node(np.transpose(a.data, axes), (a,), bw)

    def __getitem__(self, key):
        a = self

        def bw(g):
            dz = np.zeros_like(a.data)
            np.add.at(dz, key, g)
            _accum(a, dz)
        return _node(a.data[key], (a,), bw)

    # ------------------------------------------------------ linear algebra

    def matmul(self, other):
        other = _coerce(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeError(f"matmul needs 2-d operands, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

        def bw(g):
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        return _node(a.data @ b.data, (a, b), bw)

    __matmul__ = matmul

    def bmm(self, other):
        other = _coerce(other)
        a, b = self, other
        if a.ndim != 3 or b.ndim != 3:
            raise ShapeError(f"bmm needs 3-d operands, got {a.shape} @ {b.shape}")
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"bmm shapes incompatible: {a.shape} @ {b.shape}")

        def bw(g):
            _accum(a, g @ np.swapaxes(b.data, 1, 2))
            _accum(b, np.swapaxes(a.data, 1, 2) @ g)
        return _node(a.data @ b.data, (a, b), bw)


# -------------------------------------------------------------- helpers

def _coerce(x):
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.integer, np.floating)):
        return Tensor(float(x))
    if isinstance(x, np.ndarray):
        return Tensor(x)
    raise TypeError(f"cannot use {type(x).__name__} as a tensor operand")


def _check_elementwise(a, b, op):
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeError(
        f"{op}: operand shapes {a.shape} and {b.shape} must match exactly "
        f"(only 0-d scalars broadcast)")


def _collapse(g, shape):
    """Reduce a gradient back to `shape`; only the 0-d scalar case shrinks."""
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _accum(t, g):
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=np.float64)
    if g.shape != t.data.shape:
        raise ContractError(
            f"internal: gradient shape {g.shape} for tensor of shape {t.data.shape}")
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data, parents, bw):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = bw
    return out


def _norm_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(sorted(ax % ndim for ax in axis))
    if len(set(axes)) != len(axes):
        raise ParameterError(f"duplicate reduction axes {axis}")
    return axes


def _spread(g, shape, axes):
    """Inverse of a reduction: expand g back over the reduced axes."""
    if axes is None:
        return np.broadcast_to(np.asarray(g), shape)
    return np.broadcast_to(np.expand_dims(g, axes), shape)


# -------------------------------------------------------------- creation

def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad)


def ones(shape, requires_grad=False):
    return Tensor(np.ones(shape), requires_grad)


def randn(shape, seed=None, rng=None, scale=1.0, requires_grad=False):
    if rng is None:
        rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal(shape) * scale, requires_grad)


def concat(tensors, axis=0):
    tensors = [_coerce(t) for t in tensors]
    if not tensors:
        raise ParameterError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim:
            raise ShapeError(f"concat rank mismatch: {t.shape} vs {tensors[0].shape}")
        for d in range(ndim):
            if d != axis and t.shape[d] != tensors[0].shape[d]:
                raise ShapeError(
                    f"concat off-axis dims differ: {t.shape} vs {tensors[0].shape} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


# ------------------------------------------------------- neural-net ops

def softmax(x, axis=-1):
    x = _coerce(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(x, out_data * (g - inner))
    return _node(out_data, (x,), bw)


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-d convolution (cross-correlation), single image.

    x [C, H, W], w [O, C, k, k] with odd square k, optional bias [O].
    """
    x = _coerce(x)
    w = _coerce(w)
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be [C,H,W], got {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d weight must be [O,C,k,k] square, got {w.shape}")
    if not isinstance(stride, int) or stride < 1:
        raise ParameterError(f"stride must be a positive int, got {stride}")
    if not isinstance(padding, int) or padding < 0:
        raise ParameterError(f"padding must be a non-negative int, got {padding}")
    k = w.shape[2]
    if k % 2 == 0:
        raise ParameterError(f"kernel size must be odd, got {k}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(
            f"conv2d channel mismatch: weight expects {w.shape[1]} input channels, "
            f"image has {x.shape[0]} (shapes {w.shape} vs {x.shape})")
    c, h, w_in = x.shape
    if h + 2 * padding < k or w_in + 2 * padding < k:
        raise ShapeError(
            f"conv2d: padded input {(h + 2 * padding, w_in + 2 * padding)} smaller than kernel {k}x{k}")
    if b is not None:
        b = _coerce(b)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv2d bias shape {b.shape} must be ({w.shape[0]},)")

    y = K.conv2d_fwd(x.data, w.data, stride, padding)
    parents = (x, w)
    if b is not None:
        y = y + b.data[:, None, None]
        parents = (x, w, b)

    def bw(g):
        _accum(x, K.conv2d_bwd_x(g, w.data, stride, padding, h, w_in))
        _accum(w, K.conv2d_bwd_w(g, x.data, stride, padding, k))
        if b is not None:
            _accum(b, g.sum(axis=(1, 2)))
    return _node(y, parents, bw)


def upsample_bilinear(x, factor):
    """Integer-factor bilinear upsampling, align-corners=false.  Factor 1
    is the identity (the decoder's top level relies on that)."""
    x = _coerce(x)
    if x.ndim != 3:
        raise ShapeError(f"upsample input must be [C,H,W], got {x.shape}")
    if not isinstance(factor, int) or factor < 1:
        raise ParameterError(f"upsample factor must be a positive int, got {factor}")
    if factor == 1:
        def bw_id(g):
            _accum(x, g)
        return _node(x.data.copy(), (x,), bw_id)
    _, h, w = x.shape

    def bw(g):
        _accum(x, K.upsample_bwd(g, factor, h, w))
    return _node(K.upsample_fwd(x.data, factor), (x,), bw)


def bilinear_sample(x, pi, pj):
    """Sample image x [C,H,W] at fractional coordinates pi, pj [K,Ho,Wo]
    (row and column respectively); contributions from outside the image
    are zero.  Differentiable in the image and in both coordinate grids.
    """
    x = _coerce(x)
    pi = _coerce(pi)
    pj = _coerce(pj)
    if x.ndim != 3:
        raise ShapeError(f"bilinear_sample image must be [C,H,W], got {x.shape}")
    if pi.shape != pj.shape or pi.ndim != 3:
        raise ShapeError(
            f"coordinate grids must be equal-shaped [K,Ho,Wo], got {pi.shape} and {pj.shape}")

    def bw(g):
        dx, dpi, dpj = K.bilin_gather_bwd(g, x.data, pi.data, pj.data)
        _accum(x, dx)
        _accum(pi, dpi)
        _accum(pj, dpj)
    return _node(K.bilin_gather(x.data, pi.data, pj.data), (x, pi, pj), bw)


def gather_windows(x, origins, win):
    """Extract square windows from x [C,H,W] as token matrices.

    origins is an int array [nwin, 2] of top-left (row, col) corners; the
    windows may overhang the image, overhanging positions read as zero.
    Returns [nwin, win*win, C] with tokens in row-major window order.
    """
    x = _coerce(x)
    if x.ndim != 3:
        raise ShapeError(f"gather_windows input must be [C,H,W], got {x.shape}")
    origins = np.asarray(origins, dtype=np.int64)
    if origins.ndim != 2 or origins.shape[1] != 2:
        raise ShapeError(f"origins must be [nwin,2], got {origins.shape}")
    c, h, w = x.shape
    rows = origins[:, 0][:, None, None] + np.arange(win)[None, :, None]
    cols = origins[:, 1][:, None, None] + np.arange(win)[None, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    flat = np.where(ok, rows * w + cols, 0).reshape(len(origins), win * win)
    okf = ok.reshape(len(origins), win * win)

    def bw(g):
        # g [nwin, win*win, C] -> accumulate into the source pixels
        dz = np.zeros((c, h * w))
        contrib = np.transpose(g, (2, 0, 1)) * okf[None]
        np.add.at(dz, (np.arange(c)[:, None], flat.ravel()[None, :]),
                  contrib.reshape(c, -1))
        _accum(x, dz.reshape(c, h, w))

    vals = x.data.reshape(c, h * w)[:, flat.ravel()].reshape(c, len(origins), win * win)
    vals = np.transpose(vals, (1, 2, 0)) * okf[:, :, None]
    return _node(vals, (x,), bw)


def scatter_windows(y, origins, win, height, width):
    """Adjoint of gather_windows: place token windows [nwin, win*win, C]
    back onto a [C, height, width] canvas, summing where windows overlap
    and dropping positions outside the canvas."""
    y = _coerce(y)
    origins = np.asarray(origins, dtype=np.int64)
    if y.ndim != 3 or y.shape[1] != win * win:
        raise ShapeError(f"scatter_windows input must be [nwin,{win * win},C], got {y.shape}")
    if origins.shape != (y.shape[0], 2):
        raise ShapeError(f"origins shape {origins.shape} must be ({y.shape[0]}, 2)")
    c = y.shape[2]
    rows = origins[:, 0][:, None, None] + np.arange(win)[None, :, None]
    cols = origins[:, 1][:, None, None] + np.arange(win)[None, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    ok = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    flat = np.where(ok, rows * width + cols, 0).reshape(y.shape[0], win * win)
    okf = ok.reshape(y.shape[0], win * win)

    out = np.zeros((c, height * width))
    contrib = np.transpose(y.data, (2, 0, 1)) * okf[None]
    np.add.at(out, (np.arange(c)[:, None], flat.ravel()[None, :]),
              contrib.reshape(c, -1))

    def bw(g):
        vals = g.reshape(c, height * width)[:, flat.ravel()].reshape(c, y.shape[0], win * win)
        vals = np.transpose(vals, (1, 2, 0)) * okf[:, :, None]
        _accum(y, vals)
    return _node(out.reshape(c, height, width), (y,), bw)


# ------------------------------------------------------ gradient checking

@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    tol: float
    worst_input: int
    worst_index: tuple
    analytic: float
    numeric: float
    checked: int

    def __str__(self):
        verdict = "ok" if self.passed else "FAIL"
        return (f"grad check {verdict}: max rel err {self.max_rel_err:.3e} "
                f"(tol {self.tol:.1e}) at input {self.worst_input} index "
                f"{self.worst_index}, analytic {self.analytic:.6e} vs "
                f"numeric {self.numeric:.6e}, {self.checked} entries")


def grad_check(f, inputs, eps=1e-5, tol=1e-4, max_entries=None, seed=0):
    """Compare analytic gradients of f against central differences.

    f must be deterministic and return a scalar Tensor.  Every input with
    requires_grad=True is checked element by element (or a random subsample
    of max_entries elements across all inputs).  Relative error per entry is
    |a - n| / max(1, |a|, |n|); the report carries the worst offender.
    """
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    out = f(*inputs)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ContractError("grad_check needs f to return a scalar tensor")
    out.backward()
    checked_inputs = [i for i, t in enumerate(inputs) if t.requires_grad]
    analytic = {
        i: (inputs[i].grad.copy() if inputs[i].grad is not None
            else np.zeros_like(inputs[i].data))
        for i in checked_inputs
    }

    entries = [(i, j) for i in checked_inputs for j in range(inputs[i].size)]
    if max_entries is not None and len(entries) > max_entries:
        pick = np.random.default_rng(seed).choice(len(entries), size=max_entries, replace=False)
        entries = [entries[p] for p in sorted(pick)]

    worst = (-1.0, 0, (), 0.0, 0.0)
    for i, j in entries:
        flat = inputs[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        f_plus = f(*inputs).item()
        flat[j] = orig - eps
        f_minus = f(*inputs).item()
        flat[j] = orig
        num = (f_plus - f_minus) / (2.0 * eps)
        ana = analytic[i].reshape(-1)[j]
        rel = abs(ana - num) / max(1.0, abs(ana), abs(num))
        if rel > worst[0]:
            worst = (rel, i, np.unravel_index(j, inputs[i].shape), ana, num)

    rel, wi, widx, ana, num = worst
    return GradCheckReport(passed=rel <= tol, max_rel_err=rel, tol=tol,
                           worst_input=wi, worst_index=widx,
                           analytic=ana, numeric=num, checked=len(entries))
