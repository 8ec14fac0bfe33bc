"""Pixel affinities, the row-stochastic transition matrix, and random-walk refinement."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .autodiff import DimensionError, SparsePattern, Tensor, exp, power, reshape, sparse_matmul


@dataclass(frozen=True)
class NeighborhoodSpec:
    radius: int = 5
    include_self: bool = True

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")


def neighbor_offsets(radius):
    """Forward half of the disc: (dy, dx) with dy > 0, or dy == 0 and dx > 0."""
    offs = []
    for dy in range(0, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx <= 0:
                continue
            if dy * dy + dx * dx <= radius * radius:
                offs.append((dy, dx))
    return offs


@lru_cache(maxsize=32)
def _graph(h, w, radius, include_self):
    """Pair list (i < j, sorted by i then j) and the CSR layout of the closure."""
    n = h * w
    ys, xs = np.divmod(np.arange(n), w)
    I_parts, J_parts = [], []
    for dy, dx in neighbor_offsets(radius):
        yy, xx = ys + dy, xs + dx
        ok = (yy < h) & (xx >= 0) & (xx < w)
        I_parts.append(np.nonzero(ok)[0])
        J_parts.append((yy * w + xx)[ok])
    I = np.concatenate(I_parts) if I_parts else np.zeros(0, np.int64)
    J = np.concatenate(J_parts) if J_parts else np.zeros(0, np.int64)
    order = np.lexsort((J, I))
    I, J = I[order].astype(np.int64), J[order].astype(np.int64)
    P = I.shape[0]

    # entries of the symmetric closure; source -1 marks the unit diagonal
    rows = [I, J]
    cols = [J, I]
    src = [np.arange(P), np.arange(P)]
    if include_self:
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        src.append(np.full(n, -1))
    rows, cols, src = np.concatenate(rows), np.concatenate(cols), np.concatenate(src)
    order = np.lexsort((cols, rows))
    rows, cols, src = rows[order], cols[order], src[order].astype(np.int64)
    counts = np.bincount(rows, minlength=n)
    if not include_self and np.any(counts == 0):
        raise ValueError("a pixel has no neighbours and include_self is False")
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    for arr in (I, J, indptr, cols, src):
        arr.setflags(write=False)
    return I, J, SparsePattern(indptr, cols), src


@dataclass
class SparseAffinity:
    """Stored upper-triangle pairs and their weights; W_ii = 1 is implicit."""

    shape: tuple
    spec: NeighborhoodSpec
    I: np.ndarray
    J: np.ndarray
    weights: Tensor

    @property
    def n(self):
        return self.shape[0] * self.shape[1]

    def to_dense(self):
        W = np.zeros((self.n, self.n), dtype=np.float64)
        W[self.I, self.J] = self.weights.data
        W[self.J, self.I] = self.weights.data
        if self.spec.include_self:
            np.fill_diagonal(W, 1.0)
        return W


@dataclass
class TransitionMatrix:
    shape: tuple
    pattern: SparsePattern
    values: Tensor
    beta: float

    @property
    def n(self):
        return self.pattern.n

    def to_dense(self):
        return self.pattern.to_dense(self.values.data)

    def row_sums(self):
        return np.bincount(self.pattern.rows(), weights=self.values.data, minlength=self.n)


def _pair_l1(F, I, J):
    """Per-pair L1 distance between columns of F[C, n]."""
    ft = np.ascontiguousarray(F.data.T)

    def bw(g):
        return (np.ascontiguousarray(kernels.pair_l1_grad(ft, I, J, np.ascontiguousarray(g)).T),)

    return Tensor._result(kernels.pair_l1(ft, I, J), (F,), bw, "pair_l1")


def affinity_weights(features, spec=NeighborhoodSpec()):
    """W_ij = exp(-||f_i - f_j||_1) for every in-radius pixel pair of ``features[C,h,w]``."""
    if features.ndim != 3:
        raise DimensionError(f"features must be [C,h,w], got {features.shape}")
    C, h, w = features.shape
    if h * w < 1:
        raise DimensionError("empty feature grid")
    I, J, _, _ = _graph(h, w, spec.radius, spec.include_self)
    flat = reshape(features, (C, h * w))
    W = exp(-_pair_l1(flat, I, J))
    return SparseAffinity((h, w), spec, I, J, W)


def _normalise_rows(vals, src, indptr):
    """Gather powered pair weights into CSR order (diagonal = 1) and divide by row sums."""
    pv = vals.data
    n = indptr.shape[0] - 1
    diag = src < 0
    raw = np.where(diag, 1.0, pv[np.maximum(src, 0)] if pv.size else 0.0).astype(pv.dtype)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    D = np.add.reduceat(raw, indptr[:-1]) if raw.size else np.zeros(n, pv.dtype)
    Dr = D[rows]
    T = raw / Dr

    def bw(g):
        rowdot = np.add.reduceat(g * T, indptr[:-1])
        graw = (g - rowdot[rows]) / Dr
        keep = ~diag
        gp = np.bincount(src[keep], weights=graw[keep], minlength=pv.size)
        return (gp.astype(pv.dtype),)

    return Tensor._result(T, (vals,), bw, "row_normalise")


def transition_matrix(W, beta=8.0):
    """T = D^-1 W^beta with D_ii the row sums of the powered closure (self weight included)."""
    if beta < 1:
        raise ValueError(f"beta must be >= 1, got {beta}")
    h, w = W.shape
    _, _, pattern, src = _graph(h, w, W.spec.radius, W.spec.include_self)
    powered = power(W.weights, beta)
    return TransitionMatrix((h, w), pattern, _normalise_rows(powered, src, pattern.indptr), float(beta))


def random_walk_refine(act, T, t=8):
    """Apply T to every flattened channel of ``act[K,h,w]`` exactly ``t`` times."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if act.ndim != 3 or tuple(act.shape[1:]) != tuple(T.shape):
        raise DimensionError(f"activation grid {act.shape[1:]} does not match transition grid {T.shape}")
    K = act.shape[0]
    X = reshape(act, (K, T.n))
    for _ in range(t):
        X = sparse_matmul(T.pattern, T.values, X)
    return reshape(X, act.shape)
