"""Hot inner loops.

Every kernel exists twice: a loop version that numba compiles, and a numpy
version used when numba is unavailable or disabled through
``ALCFCN_DISABLE_NUMBA``.  Sequential graph algorithms (labeling, flooding,
distance transforms) have no useful vectorised form, so their fallback is the
same loop source run by the interpreter.

The public names at the bottom of the module point at the active backend;
``IMPLEMENTATIONS`` keeps both so the benchmark can compare them.
"""
import heapq

import numpy as np

from ._jit import USE_NUMBA, njit

INF = 1e300


# --------------------------------------------------------------------------
# pairwise L1 distances between feature columns
# --------------------------------------------------------------------------

# features are passed pixel-major, Ft[n, C], so the channel loop is contiguous

def _pair_l1_loop(Ft, I, J):
    C = Ft.shape[1]
    P = I.shape[0]
    out = np.zeros(P, dtype=Ft.dtype)
    for p in range(P):
        i = I[p]
        j = J[p]
        acc = 0.0
        for c in range(C):
            acc += abs(Ft[i, c] - Ft[j, c])
        out[p] = acc
    return out


def _pair_l1_numpy(Ft, I, J):
    return np.abs(Ft[I] - Ft[J]).sum(axis=1)


def _pair_l1_grad_loop(Ft, I, J, gd):
    n, C = Ft.shape
    out = np.zeros((n, C), dtype=Ft.dtype)
    for p in range(I.shape[0]):
        i = I[p]
        j = J[p]
        g = gd[p]
        for c in range(C):
            diff = Ft[i, c] - Ft[j, c]
            if diff > 0:
                out[i, c] += g
                out[j, c] -= g
            elif diff < 0:
                out[i, c] -= g
                out[j, c] += g
    return out


def _pair_l1_grad_numpy(Ft, I, J, gd):
    n, C = Ft.shape
    contrib = np.sign(Ft[I] - Ft[J]) * gd[:, None]
    size = n * C
    base = np.arange(C)[None, :]
    out = np.bincount((I[:, None] * C + base).ravel(), weights=contrib.ravel(), minlength=size)
    out -= np.bincount((J[:, None] * C + base).ravel(), weights=contrib.ravel(), minlength=size)
    return out.reshape(n, C).astype(Ft.dtype)


# --------------------------------------------------------------------------
# CSR sparse times dense (rows of X are channels, columns are pixels)
# --------------------------------------------------------------------------

def _csr_matvec_loop(indptr, indices, data, X):
    K = X.shape[0]
    n = indptr.shape[0] - 1
    out = np.zeros((K, n), dtype=X.dtype)
    for k in range(K):
        for r in range(n):
            acc = 0.0
            for e in range(indptr[r], indptr[r + 1]):
                acc += data[e] * X[k, indices[e]]
            out[k, r] = acc
    return out


def _row_ids(indptr):
    return np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))


def _csr_matvec_numpy(indptr, indices, data, X):
    K = X.shape[0]
    n = indptr.shape[0] - 1
    rows = _row_ids(indptr)
    prod = data[None, :] * X[:, indices]
    out = np.empty((K, n), dtype=X.dtype)
    for k in range(K):
        out[k] = np.bincount(rows, weights=prod[k], minlength=n)
    return out


def _csr_data_grad_loop(indptr, indices, X, G):
    """d(sum G * (A @ X)) / d A.data for a fixed sparsity pattern."""
    K = X.shape[0]
    n = indptr.shape[0] - 1
    out = np.zeros(indices.shape[0], dtype=X.dtype)
    for r in range(n):
        for e in range(indptr[r], indptr[r + 1]):
            c = indices[e]
            acc = 0.0
            for k in range(K):
                acc += G[k, r] * X[k, c]
            out[e] = acc
    return out


def _csr_data_grad_numpy(indptr, indices, X, G):
    rows = _row_ids(indptr)
    return (G[:, rows] * X[:, indices]).sum(axis=0)


# --------------------------------------------------------------------------
# 8-connected component labeling (union-find, two raster passes)
# --------------------------------------------------------------------------

def _find(parent, a):
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


def _label8_loop(mask):
    H, W = mask.shape
    prov = np.zeros((H, W), dtype=np.int64)
    parent = np.zeros(H * W + 1, dtype=np.int64)
    nxt = 1
    for y in range(H):
        for x in range(W):
            if not mask[y, x]:
                continue
            best = 0
            # already-visited neighbours: W, NW, N, NE
            for dy, dx in ((0, -1), (-1, -1), (-1, 0), (-1, 1)):
                yy = y + dy
                xx = x + dx
                if yy < 0 or xx < 0 or xx >= W:
                    continue
                lab = prov[yy, xx]
                if lab == 0:
                    continue
                if best == 0:
                    best = lab
                else:
                    ra = _find(parent, best)
                    rb = _find(parent, lab)
                    if ra != rb:
                        if ra < rb:
                            parent[rb] = ra
                        else:
                            parent[ra] = rb
            if best == 0:
                parent[nxt] = nxt
                best = nxt
                nxt += 1
            prov[y, x] = best
    remap = np.zeros(nxt, dtype=np.int64)
    out = np.zeros((H, W), dtype=np.int32)
    count = 0
    for y in range(H):
        for x in range(W):
            lab = prov[y, x]
            if lab == 0:
                continue
            root = _find(parent, lab)
            if remap[root] == 0:
                count += 1
                remap[root] = count
            out[y, x] = remap[root]
    return out, count


# --------------------------------------------------------------------------
# seeded priority flood with separating boundary (4-neighbourhood)
# --------------------------------------------------------------------------

def _watershed_loop(heights, inside, width, seeds):
    """Flood ``inside`` pixels (flat indices into an H x W grid) from ``seeds``.

    Lower heights pop first; equal heights pop in insertion order.  A popped
    pixel whose labelled 4-neighbours carry two or more distinct seed ids
    becomes boundary and does not propagate.
    """
    m = heights.shape[0]
    region = np.zeros(m, dtype=np.int32)
    boundary = np.zeros(m, dtype=np.bool_)
    queued = np.zeros(m, dtype=np.bool_)
    heap = [(heights[seeds[0]], 0, seeds[0])]
    region[seeds[0]] = 1
    queued[seeds[0]] = True
    age = 1
    for s in range(1, seeds.shape[0]):
        p = seeds[s]
        region[p] = s + 1
        queued[p] = True
        heapq.heappush(heap, (heights[p], age, p))
        age += 1
    nb = np.zeros(4, dtype=np.int64)
    while len(heap) > 0:
        item = heapq.heappop(heap)
        p = item[2]
        y = p // width
        x = p - y * width
        n_nb = 0
        if x > 0:
            nb[n_nb] = p - 1
            n_nb += 1
        if x < width - 1:
            nb[n_nb] = p + 1
            n_nb += 1
        if p - width >= 0:
            nb[n_nb] = p - width
            n_nb += 1
        if p + width < m:
            nb[n_nb] = p + width
            n_nb += 1
        if region[p] == 0:
            first = 0
            clash = False
            for a in range(n_nb):
                lab = region[nb[a]]
                if lab == 0:
                    continue
                if first == 0:
                    first = lab
                elif lab != first:
                    clash = True
            if clash:
                boundary[p] = True
                continue
            region[p] = first
        for a in range(n_nb):
            q = nb[a]
            if inside[q] and not queued[q]:
                queued[q] = True
                heapq.heappush(heap, (heights[q], age, q))
                age += 1
    return region, boundary


# --------------------------------------------------------------------------
# exact squared Euclidean distance transform (separable lower envelopes)
# --------------------------------------------------------------------------

def _envelope_1d(f, n, out, v, z):
    k = -1
    for q in range(n):
        if f[q] >= INF:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -INF
            z[1] = INF
            continue
        while True:
            vk = v[k]
            s = ((f[q] + q * q) - (f[vk] + vk * vk)) / (2.0 * q - 2.0 * vk)
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = INF
    if k < 0:
        for q in range(n):
            out[q] = INF
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        d = q - v[j]
        out[q] = d * d + f[v[j]]


def _edt_sq_loop(mask):
    """Squared distance from each True pixel to the nearest False pixel."""
    H, W = mask.shape
    n = max(H, W)
    tmp = np.empty((H, W), dtype=np.float64)
    out = np.empty((H, W), dtype=np.float64)
    f = np.empty(n, dtype=np.float64)
    buf = np.empty(n, dtype=np.float64)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    for x in range(W):
        for y in range(H):
            f[y] = INF if mask[y, x] else 0.0
        _envelope_1d(f, H, buf, v, z)
        for y in range(H):
            tmp[y, x] = buf[y]
    for y in range(H):
        for x in range(W):
            f[x] = tmp[y, x]
        _envelope_1d(f, W, buf, v, z)
        for x in range(W):
            out[y, x] = buf[x]
    return out


# --------------------------------------------------------------------------
# backend wiring
# --------------------------------------------------------------------------

IMPLEMENTATIONS = {
    "pair_l1": {"numpy": _pair_l1_numpy},
    "pair_l1_grad": {"numpy": _pair_l1_grad_numpy},
    "csr_matvec": {"numpy": _csr_matvec_numpy},
    "csr_data_grad": {"numpy": _csr_data_grad_numpy},
    "label8": {"numpy": _label8_loop},
    "watershed": {"numpy": _watershed_loop},
    "edt_sq": {"numpy": _edt_sq_loop},
}

if USE_NUMBA:
    _find = njit(_find)
    _envelope_1d = njit(_envelope_1d)
    IMPLEMENTATIONS["pair_l1"]["numba"] = njit(_pair_l1_loop)
    IMPLEMENTATIONS["pair_l1_grad"]["numba"] = njit(_pair_l1_grad_loop)
    IMPLEMENTATIONS["csr_matvec"]["numba"] = njit(_csr_matvec_loop)
    IMPLEMENTATIONS["csr_data_grad"]["numba"] = njit(_csr_data_grad_loop)
    IMPLEMENTATIONS["label8"]["numba"] = njit(_label8_loop)
    IMPLEMENTATIONS["watershed"]["numba"] = njit(_watershed_loop)
    IMPLEMENTATIONS["edt_sq"]["numba"] = njit(_edt_sq_loop)

_ACTIVE = "numba" if USE_NUMBA else "numpy"

pair_l1 = IMPLEMENTATIONS["pair_l1"][_ACTIVE]
pair_l1_grad = IMPLEMENTATIONS["pair_l1_grad"][_ACTIVE]
csr_matvec = IMPLEMENTATIONS["csr_matvec"][_ACTIVE]
csr_data_grad = IMPLEMENTATIONS["csr_data_grad"][_ACTIVE]
label8 = IMPLEMENTATIONS["label8"][_ACTIVE]
watershed = IMPLEMENTATIONS["watershed"][_ACTIVE]
edt_sq = IMPLEMENTATIONS["edt_sq"][_ACTIVE]
