"""A small dense-tensor engine with reverse-mode differentiation.

Tensors wrap numpy arrays.  Every differentiable operation records a
``TapeNode`` (op tag, parents, backward rule) on its output when at least one
input requires gradients; ``backward`` walks those nodes in reverse
topological order.

Training runs in float32.  Use ``precision(np.float64)`` for gradient checks.
"""
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels

LOG_EPS = 1e-7

_state = {"dtype": np.float32, "grad_enabled": True}


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class GradientError(RuntimeError):
    """Raised when ``backward`` is called against its contract."""


def get_default_dtype():
    return _state["dtype"]


@contextmanager
def precision(dtype):
    """Temporarily change the dtype of newly created tensors."""
    old = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = old


@contextmanager
def no_grad():
    old = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = old


@dataclass
class TapeNode:
    op: str
    parents: Tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.array(data, dtype=dtype or get_default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @classmethod
    def _result(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._node = None
        tracked = _state["grad_enabled"] and any(p.requires_grad for p in parents)
        out.requires_grad = tracked
        if tracked:
            out._node = TapeNode(op, tuple(parents), backward)
        return out

    # -- conveniences -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def op(self):
        return self._node.op if self._node is not None else "leaf"

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def backward(self):
        backward(self)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self)))

    def __rsub__(self, other):
        return add(_lift(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return tabs(self)

    def relu(self):
        return relu(self)


def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# backward pass
# --------------------------------------------------------------------------

def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in t._node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every tracked ancestor of the scalar ``loss``.

    Raises GradientError for non-scalar losses, untracked losses, and when any
    tensor in the graph already holds a gradient (call ``zero_grad`` first).
    """
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("loss does not depend on any tensor that requires grad")
    order = _topo_order(loss)
    for t in order:
        if t.grad is not None:
            raise GradientError("gradients already populated; call zero_grad() before another backward")
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            g = np.zeros_like(t.data)
        t.grad = g
        node = t._node
        if node is None:
            continue
        parent_grads = node.backward(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------

def add(a, b):
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._result(a.data + b.data, (a, b), bw, "add")


def mul(a, b):
    b = _lift(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._result(ad * bd, (a, b), bw, "mul")


def div(a, b):
    b = _lift(b, a)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return Tensor._result(out, (a, b), bw, "div")


def neg(a):
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a):
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def log(a, eps=LOG_EPS):
    """log(max(a, eps)); the clamped region passes no gradient."""
    x = a.data
    live = x > eps
    out = np.log(np.maximum(x, eps)).astype(x.dtype, copy=False)

    def bw(g):
        return (np.where(live, g / np.where(live, x, 1), 0).astype(x.dtype, copy=False),)

    return Tensor._result(out, (a,), bw, "log")


def tabs(a):
    x = a.data
    return Tensor._result(np.abs(x), (a,), lambda g: (g * np.sign(x),), "abs")


def relu(a):
    x = a.data
    return Tensor._result(np.maximum(x, 0), (a,), lambda g: (g * (x > 0),), "relu")


def power(a, p):
    x = a.data
    p = float(p)
    out = x ** p

    def bw(g):
        return (g * p * x ** (p - 1),)

    return Tensor._result(out.astype(x.dtype, copy=False), (a,), bw, "pow")


# --------------------------------------------------------------------------
# shape and reduction
# --------------------------------------------------------------------------

def tsum(a, axis=None):
    shape = a.shape
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._result(np.asarray(out, dtype=a.dtype), (a,), bw, "sum")


def mean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    return tsum(a, axis) * (1.0 / n)


def reshape(a, shape):
    old = a.shape
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def getitem(a, idx):
    shape, dtype = a.shape, a.dtype

    def bw(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._result(np.array(a.data[idx]), (a,), bw, "getitem")


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def max_all(a):
    """Global maximum; the gradient goes to the first row-major argmax."""
    flat = int(np.argmax(a.data))
    shape, dtype = a.shape, a.dtype

    def bw(g):
        out = np.zeros(shape, dtype=dtype)
        out.flat[flat] = g
        return (out,)

    return Tensor._result(np.asarray(a.data.flat[flat], dtype=dtype), (a,), bw, "max")


# --------------------------------------------------------------------------
# image ops
# --------------------------------------------------------------------------

def conv2d(x, w, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x[C_in,H,W]`` with ``w[C_out,C_in,kh,kw]``."""
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 3-d input and 4-d kernel, got {x.shape}, {w.shape}")
    c_out, c_in, kh, kw = w.shape
    if x.shape[0] != c_in:
        raise DimensionError(f"input has {x.shape[0]} channels, kernel expects {c_in}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError("kernel extents must be odd")
    if stride < 1 or padding < 0:
        raise DimensionError("stride must be >= 1 and padding >= 0")
    C, H, W = x.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < kh or Wp < kw:
        raise DimensionError("kernel larger than padded input")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    Ho, Wo = win.shape[1], win.shape[2]
    # im2col: rows (c, a, b), columns output pixels
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(C * kh * kw, Ho * Wo)
    wmat = w.data.reshape(c_out, -1)
    out = (wmat @ cols).reshape(c_out, Ho, Wo)
    parents = (x, w)
    if bias is not None:
        out = out + bias.data.reshape(-1, 1, 1)
        parents = (x, w, bias)

    def bw(g):
        # subnormal floats make BLAS crawl; they carry no useful signal here
        g = np.where(np.abs(g) < np.finfo(g.dtype).tiny, 0, g).astype(g.dtype, copy=False)
        g2 = g.reshape(c_out, -1)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(C, kh, kw, Ho, Wo)
            gxp = np.zeros((C, Hp, Wp), dtype=g.dtype)
            hspan = stride * (Ho - 1) + 1
            wspan = stride * (Wo - 1) + 1
            for a in range(kh):
                for b in range(kw):
                    gxp[:, a:a + hspan:stride, b:b + wspan:stride] += gcols[:, a, b]
            gx = gxp[:, padding:padding + H, padding:padding + W] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    return Tensor._result(out.astype(x.dtype, copy=False), parents, bw, "conv2d")


def interp_matrix(n_in, n_out, dtype=np.float64):
    """Linear interpolation weights with half-pixel centres, shape (n_out, n_in)."""
    if n_in <= 0 or n_out <= 0:
        raise DimensionError("interpolation extents must be positive")
    d = np.arange(n_out, dtype=np.float64)
    s = np.clip((d + 0.5) * (n_in / n_out) - 0.5, 0, n_in - 1)
    i0 = np.floor(s).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = s - i0
    R = np.zeros((n_out, n_in), dtype=np.float64)
    np.add.at(R, (np.arange(n_out), i0), 1 - frac)
    np.add.at(R, (np.arange(n_out), i1), frac)
    return R.astype(dtype)


def bilinear_upsample(x, out_h, out_w):
    if x.ndim != 3:
        raise DimensionError(f"bilinear_upsample expects [C,H,W], got {x.shape}")
    if out_h <= 0 or out_w <= 0:
        raise DimensionError("target size must be positive")
    _, H, W = x.shape
    if (out_h, out_w) == (H, W):
        return reshape(x, x.shape)
    Rh = interp_matrix(H, out_h, x.dtype)
    Rw = interp_matrix(W, out_w, x.dtype)
    out = Rh @ x.data @ Rw.T

    def bw(g):
        return (Rh.T @ g @ Rw,)

    return Tensor._result(out, (x,), bw, "upsample")


def softmax_channels(x):
    if x.ndim < 1 or x.shape[0] < 2:
        raise DimensionError("softmax_channels needs at least two channels")
    z = x.data - x.data.max(axis=0, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=0, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=0, keepdims=True)),)

    return Tensor._result(y, (x,), bw, "softmax")


# --------------------------------------------------------------------------
# sparse matrix times dense map
# --------------------------------------------------------------------------

class SparsePattern:
    """CSR sparsity structure shared by all matrices over one pixel grid."""

    def __init__(self, indptr, indices):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.n = self.indptr.shape[0] - 1
        self._transpose = None

    @property
    def nnz(self):
        return self.indices.shape[0]

    def rows(self):
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    def transpose(self):
        """Return (pattern_T, perm) so that values_T = values[perm]."""
        if self._transpose is None:
            rows = self.rows()
            perm = np.lexsort((rows, self.indices))
            counts = np.bincount(self.indices, minlength=self.n)
            indptr_t = np.concatenate([[0], np.cumsum(counts)])
            pat = SparsePattern(indptr_t, rows[perm])
            pat._transpose = (self, np.argsort(perm, kind="stable"))
            self._transpose = (pat, perm)
        return self._transpose

    def to_dense(self, values):
        M = np.zeros((self.n, self.n), dtype=np.asarray(values).dtype)
        M[self.rows(), self.indices] = values
        return M


def sparse_matmul(pattern, values, X):
    """``A @ X`` where A has ``pattern`` and entries ``values`` (a Tensor)."""
    if X.ndim != 2 or X.shape[1] != pattern.n:
        raise DimensionError(f"dense operand must be [K,{pattern.n}], got {X.shape}")
    if values.shape != (pattern.nnz,):
        raise DimensionError("values do not match the sparsity pattern")
    vals = np.ascontiguousarray(values.data)
    xd = np.ascontiguousarray(X.data)
    out = kernels.csr_matvec(pattern.indptr, pattern.indices, vals, xd)

    def bw(g):
        g = np.ascontiguousarray(g)
        gv = kernels.csr_data_grad(pattern.indptr, pattern.indices, xd, g) if values.requires_grad else None
        gx = None
        if X.requires_grad:
            pat_t, perm = pattern.transpose()
            gx = kernels.csr_matvec(pat_t.indptr, pat_t.indices, np.ascontiguousarray(vals[perm]), g)
        return gv, gx

    return Tensor._result(out, (values, X), bw, "spmm")


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------

def gradient_check(f, x, h=1e-6, max_coords=None, rng=None):
    """Compare ``x.grad`` from ``backward`` with central differences.

    ``f`` maps ``x`` to a scalar Tensor and must be deterministic; results are
    meaningless otherwise.  Returns max |analytic - numeric| / max(1, |analytic|)
    over the checked coordinates (all of them, or ``max_coords`` sampled ones).
    """
    if x.dtype != np.float64:
        raise TypeError("gradient_check needs a float64 tensor")
    x.requires_grad = True
    loss = f(x)
    graph = _topo_order(loss)
    for t in graph:
        t.grad = None
    backward(loss)
    analytic = x.grad.copy()
    for t in graph:
        t.grad = None
    coords = np.arange(x.data.size)
    if max_coords is not None and max_coords < coords.size:
        rng = rng if rng is not None else np.random.default_rng(0)
        coords = np.sort(rng.choice(coords.size, size=max_coords, replace=False))
    flat = x.data.reshape(-1)
    worst = 0.0
    with no_grad():
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = float(f(x).data)
            flat[c] = orig - h
            fm = float(f(x).data)
            flat[c] = orig
            num = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[c]
            worst = max(worst, abs(a - num) / max(1.0, abs(a)))
    return worst
