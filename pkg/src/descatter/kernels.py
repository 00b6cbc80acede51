"""Hot numeric kernels with two interchangeable backends.

Every kernel here exists twice: a numba ``@njit`` version and a pure-numpy
version. Which one runs is decided per kernel family (see
``_DEFAULT_BACKEND``) and can be forced globally:

    DESCATTER_NO_NUMBA=1   pure numpy everywhere (also the automatic
                           fallback when numba is not importable)
    DESCATTER_ALL_NUMBA=1  numba everywhere

The per-family defaults come from measurement (``descatter bench``): the
windowed argmin-k search, projection scatter and point-neighbor queries are
scalar inner loops where numba wins, while the convolution kernels reduce to
large matmuls where the im2col + BLAS path is faster than explicit loops.

Backends of one family must agree exactly where the contract says so
(index equality for searches, identical counts/means for neighbor queries);
the convolution backends agree to float round-off only, since BLAS and loop
summation orders differ.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_NO_NUMBA = os.environ.get("DESCATTER_NO_NUMBA", "") not in ("", "0")
_ALL_NUMBA = os.environ.get("DESCATTER_ALL_NUMBA", "") not in ("", "0")

try:
    if _NO_NUMBA:
        raise ImportError("numba disabled via DESCATTER_NO_NUMBA")
    from numba import njit, prange
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # signature-compatible no-op decorator
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

    prange = range

# families: argmink, scatter, conv, neighbors
_DEFAULT_BACKEND = {
    "argmink": "numba",
    "scatter": "numba",
    "conv": "numpy",
    "neighbors": "numba",
}

# brute force below, grid hash above (numba neighbor queries)
GRID_THRESHOLD = 2000


def backend_for(family: str) -> str:
    """Resolve the backend actually used for a kernel family."""
    if not HAVE_NUMBA:
        return "numpy"
    if _ALL_NUMBA:
        return "numba"
    return _DEFAULT_BACKEND[family]


def available_backends(family: str):
    return ("numpy", "numba") if HAVE_NUMBA else ("numpy",)


# ---------------------------------------------------------------------------
# windowed argmin-k search over range images
# ---------------------------------------------------------------------------

def window_argmink(cand_range, cand_valid, ref_range, ref_valid,
                   k, xi_r, xi_c, anchor_self, backend=None):
    """Per-pixel k smallest |cand_range(window) - ref_range(anchor)|.

    cand_range/cand_valid: [H,W] candidate image (the same image for the
    spatial search, the previous scan for the temporal one).
    ref_range/ref_valid:   [H,W] anchor image.

    Returns (idx, src_valid):
      idx:       [H,W,k] int64 linear indices into the candidate image,
                 ordered by ascending |diff| with ties broken by row-major
                 candidate position.
      src_valid: [H,W] bool, False where no usable result exists (invalid
                 anchor, or no valid candidate in the temporal window).

    anchor_self=True pins the anchor pixel itself into slot 0 and pads
    deficient windows by repeating the anchor; anchor_self=False (temporal)
    pads by repeating the best candidate and marks empty windows invalid.
    Invalid rows are filled with the anchor's own linear index.
    """
    if backend is None:
        backend = backend_for("argmink")
    cand_range = np.ascontiguousarray(cand_range, dtype=np.float64)
    ref_range = np.ascontiguousarray(ref_range, dtype=np.float64)
    cand_valid = np.ascontiguousarray(cand_valid, dtype=np.bool_)
    ref_valid = np.ascontiguousarray(ref_valid, dtype=np.bool_)
    if backend == "numba":
        return _window_argmink_nb(cand_range, cand_valid, ref_range,
                                  ref_valid, k, xi_r, xi_c, anchor_self)
    return _window_argmink_np(cand_range, cand_valid, ref_range, ref_valid,
                              k, xi_r, xi_c, anchor_self)


def _window_argmink_np(cand_range, cand_valid, ref_range, ref_valid,
                       k, xi_r, xi_c, anchor_self):
    H, W = ref_range.shape
    wr, wc = 2 * xi_r + 1, 2 * xi_c + 1
    pad_r = np.pad(cand_range, ((xi_r, xi_r), (xi_c, xi_c)))
    pad_v = np.pad(cand_valid, ((xi_r, xi_r), (xi_c, xi_c)))
    win_r = sliding_window_view(pad_r, (wr, wc))          # [H,W,wr,wc]
    win_v = sliding_window_view(pad_v, (wr, wc))
    diff = np.abs(win_r - ref_range[:, :, None, None])
    diff = np.where(win_v, diff, np.inf)
    if anchor_self:
        # force the anchor into slot 0 (key below any real |diff|)
        diff = diff.copy()
        diff[:, :, xi_r, xi_c] = np.where(ref_valid, -1.0, np.inf)
    diff = np.where(ref_valid[:, :, None, None], diff, np.inf)

    flat = diff.reshape(H, W, wr * wc)
    # window enumeration order equals row-major candidate order, so a
    # stable sort implements the (|diff|, row-major index) tie-break
    order = np.argsort(flat, axis=2, kind="stable")[:, :, :k]
    nvalid = (flat < np.inf).sum(axis=2)

    rows = np.arange(H)[:, None, None]
    cols = np.arange(W)[None, :, None]
    a = order // wc
    b = order % wc
    idx = (rows + a - xi_r) * W + (cols + b - xi_c)

    anchor_lin = (np.arange(H)[:, None] * W + np.arange(W)[None, :])
    missing = np.arange(k)[None, None, :] >= nvalid[:, :, None]
    if anchor_self:
        fill = np.broadcast_to(anchor_lin[:, :, None], idx.shape)
        src_valid = ref_valid.copy()
    else:
        best = np.where(nvalid > 0, idx[:, :, 0], anchor_lin)
        fill = np.broadcast_to(best[:, :, None], idx.shape)
        src_valid = ref_valid & (nvalid > 0)
    idx = np.where(missing, fill, idx)
    idx[~src_valid] = anchor_lin[~src_valid, None]
    return idx.astype(np.int64), src_valid


@njit(parallel=True, cache=True)
def _window_argmink_nb_impl(cand_range, cand_valid, ref_range, ref_valid,
                            k, xi_r, xi_c, anchor_self):
    H, W = ref_range.shape
    idx = np.empty((H, W, k), np.int64)
    src_valid = np.zeros((H, W), np.bool_)
    for v in prange(H):
        best_d = np.empty(k, np.float64)
        best_i = np.empty(k, np.int64)
        for u in range(W):
            anchor = v * W + u
            if not ref_valid[v, u]:
                for s in range(k):
                    idx[v, u, s] = anchor
                continue
            ref = ref_range[v, u]
            slot0 = 1 if anchor_self else 0
            n = 0  # filled slots past slot0
            cap = k - slot0
            for dv in range(-xi_r, xi_r + 1):
                y = v + dv
                if y < 0 or y >= H:
                    continue
                for du in range(-xi_c, xi_c + 1):
                    x = u + du
                    if x < 0 or x >= W:
                        continue
                    if anchor_self and dv == 0 and du == 0:
                        continue
                    if not cand_valid[y, x]:
                        continue
                    lin = y * W + x
                    d = abs(cand_range[y, x] - ref)
                    if n == cap:
                        last = n - 1
                        if d > best_d[last] or (d == best_d[last]
                                                and lin > best_i[last]):
                            continue
                    # insertion by (diff, linear index)
                    pos = n if n < cap else cap - 1
                    while pos > 0 and (best_d[pos - 1] > d or
                                       (best_d[pos - 1] == d
                                        and best_i[pos - 1] > lin)):
                        best_d[pos] = best_d[pos - 1]
                        best_i[pos] = best_i[pos - 1]
                        pos -= 1
                    best_d[pos] = d
                    best_i[pos] = lin
                    if n < cap:
                        n += 1
            if anchor_self:
                idx[v, u, 0] = anchor
                for s in range(n):
                    idx[v, u, 1 + s] = best_i[s]
                for s in range(1 + n, k):
                    idx[v, u, s] = anchor
                src_valid[v, u] = True
            else:
                if n == 0:
                    for s in range(k):
                        idx[v, u, s] = anchor
                else:
                    for s in range(k):
                        idx[v, u, s] = best_i[s] if s < n else best_i[0]
                    src_valid[v, u] = True
    return idx, src_valid


def _window_argmink_nb(cand_range, cand_valid, ref_range, ref_valid,
                       k, xi_r, xi_c, anchor_self):
    return _window_argmink_nb_impl(cand_range, cand_valid, ref_range,
                                   ref_valid, np.int64(k), np.int64(xi_r),
                                   np.int64(xi_c), anchor_self)


# ---------------------------------------------------------------------------
# projection scatter: nearest point wins a pixel
# ---------------------------------------------------------------------------

def scatter_nearest(pix, rng, npix, backend=None):
    """Winner point index per linear pixel; smallest range wins, ties go to
    the lower point index. Returns int64[npix], -1 where no point mapped."""
    if backend is None:
        backend = backend_for("scatter")
    pix = np.ascontiguousarray(pix, dtype=np.int64)
    rng = np.ascontiguousarray(rng, dtype=np.float64)
    if backend == "numba":
        return _scatter_nearest_nb(pix, rng, np.int64(npix))
    return _scatter_nearest_np(pix, rng, npix)


def _scatter_nearest_np(pix, rng, npix):
    out = np.full(npix, -1, np.int64)
    if len(pix) == 0:
        return out
    order = np.lexsort((np.arange(len(pix)), rng))
    spix = pix[order]
    upix, first = np.unique(spix, return_index=True)
    out[upix] = order[first]
    return out


@njit(cache=True)
def _scatter_nearest_nb(pix, rng, npix):
    out = np.full(npix, -1, np.int64)
    for i in range(pix.shape[0]):
        p = pix[i]
        j = out[p]
        if j < 0 or rng[i] < rng[j] or (rng[i] == rng[j] and i < j):
            out[p] = i
    return out


# ---------------------------------------------------------------------------
# 2-D convolution (cross-correlation), stride 1, zero padding, dilation
# ---------------------------------------------------------------------------

def conv2d_forward(x, w, dilation=(1, 1), padding=(0, 0), backend=None):
    """x [C,H,W], w [Co,C,kh,kw] -> y [Co,H',W'],
    H' = H + 2*pr - dr*(kh-1). Preserves the input float dtype."""
    if backend is None:
        backend = backend_for("conv")
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    dr, dc = dilation
    pr, pc = padding
    if backend == "numba":
        y = _conv2d_fwd_nb(x.astype(np.float64), w.astype(np.float64),
                           np.int64(dr), np.int64(dc),
                           np.int64(pr), np.int64(pc))
        return y.astype(x.dtype, copy=False)
    return _conv2d_fwd_np(x, w, dr, dc, pr, pc)


def conv2d_backward_weight(gy, x, kh, kw, dilation=(1, 1), padding=(0, 0),
                           backend=None):
    if backend is None:
        backend = backend_for("conv")
    x = np.ascontiguousarray(x)
    gy = np.ascontiguousarray(gy, dtype=x.dtype)
    dr, dc = dilation
    pr, pc = padding
    if backend == "numba":
        gw = _conv2d_bwd_w_nb(gy.astype(np.float64), x.astype(np.float64),
                              np.int64(kh), np.int64(kw),
                              np.int64(dr), np.int64(dc),
                              np.int64(pr), np.int64(pc))
        return gw.astype(x.dtype, copy=False)
    cols, _, _ = _im2col(x, kh, kw, dr, dc, pr, pc)
    co = gy.shape[0]
    gw = gy.reshape(co, -1) @ cols.T
    return gw.reshape(co, x.shape[0], kh, kw)


def conv2d_backward_input(gy, w, in_shape, dilation=(1, 1), padding=(0, 0),
                          backend=None):
    if backend is None:
        backend = backend_for("conv")
    gy = np.ascontiguousarray(gy)
    w = np.ascontiguousarray(w, dtype=gy.dtype)
    dr, dc = dilation
    pr, pc = padding
    if backend == "numba":
        gx = _conv2d_bwd_x_nb(gy.astype(np.float64), w.astype(np.float64),
                              np.int64(in_shape[1]), np.int64(in_shape[2]),
                              np.int64(dr), np.int64(dc),
                              np.int64(pr), np.int64(pc))
        return gx.astype(gy.dtype, copy=False)
    # transposed conv: correlate gy with the spatially flipped, channel-
    # swapped kernel, then crop the original padding
    kh, kw = w.shape[2], w.shape[3]
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    full = _conv2d_fwd_np(gy, wf, dr, dc, dr * (kh - 1), dc * (kw - 1))
    H, W = in_shape[1], in_shape[2]
    return np.ascontiguousarray(full[:, pr:pr + H, pc:pc + W])


def _im2col(x, kh, kw, dr, dc, pr, pc):
    C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (pr, pr), (pc, pc)))
    eh, ew = dr * (kh - 1) + 1, dc * (kw - 1) + 1
    sw = sliding_window_view(xp, (eh, ew), axis=(1, 2))
    sw = sw[:, :, :, ::dr, ::dc]                          # [C,H',W',kh,kw]
    H2, W2 = sw.shape[1], sw.shape[2]
    cols = sw.transpose(0, 3, 4, 1, 2).reshape(C * kh * kw, H2 * W2)
    return np.ascontiguousarray(cols), H2, W2


def _conv2d_fwd_np(x, w, dr, dc, pr, pc):
    co, ci, kh, kw = w.shape
    cols, H2, W2 = _im2col(x, kh, kw, dr, dc, pr, pc)
    y = w.reshape(co, -1) @ cols
    return y.reshape(co, H2, W2)


@njit(parallel=True, cache=True)
def _conv2d_fwd_nb(x, w, dr, dc, pr, pc):
    C, H, W = x.shape
    co, _, kh, kw = w.shape
    H2 = H + 2 * pr - dr * (kh - 1)
    W2 = W + 2 * pc - dc * (kw - 1)
    y = np.zeros((co, H2, W2), np.float64)
    for o in prange(co):
        for oy in range(H2):
            for ox in range(W2):
                acc = 0.0
                for c in range(C):
                    for i in range(kh):
                        iy = oy + i * dr - pr
                        if iy < 0 or iy >= H:
                            continue
                        for j in range(kw):
                            ix = ox + j * dc - pc
                            if ix < 0 or ix >= W:
                                continue
                            acc += w[o, c, i, j] * x[c, iy, ix]
                y[o, oy, ox] = acc
    return y


@njit(parallel=True, cache=True)
def _conv2d_bwd_w_nb(gy, x, kh, kw, dr, dc, pr, pc):
    co, H2, W2 = gy.shape
    C, H, W = x.shape
    gw = np.zeros((co, C, kh, kw), np.float64)
    for o in prange(co):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    acc = 0.0
                    for oy in range(H2):
                        iy = oy + i * dr - pr
                        if iy < 0 or iy >= H:
                            continue
                        for ox in range(W2):
                            ix = ox + j * dc - pc
                            if ix < 0 or ix >= W:
                                continue
                            acc += gy[o, oy, ox] * x[c, iy, ix]
                    gw[o, c, i, j] = acc
    return gw


@njit(parallel=True, cache=True)
def _conv2d_bwd_x_nb(gy, w, H, W, dr, dc, pr, pc):
    co, H2, W2 = gy.shape
    _, C, kh, kw = w.shape
    gx = np.zeros((C, H, W), np.float64)
    for c in prange(C):
        for y in range(H):
            for x_ in range(W):
                acc = 0.0
                for o in range(co):
                    for i in range(kh):
                        oy = y + pr - i * dr
                        if oy < 0 or oy >= H2:
                            continue
                        for j in range(kw):
                            ox = x_ + pc - j * dc
                            if ox < 0 or ox >= W2:
                                continue
                            acc += w[o, c, i, j] * gy[o, oy, ox]
                gx[c, y, x_] = acc
    return gx


# ---------------------------------------------------------------------------
# point-cloud neighbor queries (baseline filters)
# ---------------------------------------------------------------------------

def radius_counts(points, radii, backend=None):
    """Number of *other* points within distance radii[i] (inclusive) of
    point i. points [n,3], radii [n] > 0."""
    if backend is None:
        backend = backend_for("neighbors")
    points = np.ascontiguousarray(points, dtype=np.float64)
    radii = np.ascontiguousarray(radii, dtype=np.float64)
    n = len(points)
    if backend == "numba":
        if n >= GRID_THRESHOLD:
            return _radius_counts_grid_nb(points, radii)
        return _radius_counts_brute_nb(points, radii)
    return _radius_counts_brute_np(points, radii)


def _radius_counts_brute_np(points, radii):
    n = len(points)
    out = np.zeros(n, np.int64)
    if n == 0:
        return out
    step = max(1, (1 << 22) // max(n, 1))
    r2 = radii * radii
    for s in range(0, n, step):
        e = min(n, s + step)
        d = points[s:e, None, :] - points[None, :, :]
        d2 = (d * d).sum(-1)
        out[s:e] = (d2 <= r2[s:e, None]).sum(1) - 1  # minus self
    return out


@njit(parallel=True, cache=True)
def _radius_counts_brute_nb(points, radii):
    n = points.shape[0]
    out = np.zeros(n, np.int64)
    for i in prange(n):
        r2 = radii[i] * radii[i]
        c = 0
        for j in range(n):
            if j == i:
                continue
            dx = points[i, 0] - points[j, 0]
            dy = points[i, 1] - points[j, 1]
            dz = points[i, 2] - points[j, 2]
            if dx * dx + dy * dy + dz * dz <= r2:
                c += 1
        out[i] = c
    return out


@njit(cache=True)
def _build_grid(points, cell):
    n = points.shape[0]
    mins = np.empty(3, np.float64)
    for d in range(3):
        mn = points[0, d]
        for i in range(1, n):
            if points[i, d] < mn:
                mn = points[i, d]
        mins[d] = mn
    nx = np.empty(3, np.int64)
    for d in range(3):
        mx = points[0, d]
        for i in range(1, n):
            if points[i, d] > mx:
                mx = points[i, d]
        nx[d] = max(1, np.int64((mx - mins[d]) / cell) + 1)
    cid = np.empty(n, np.int64)
    for i in range(n):
        cx = min(nx[0] - 1, np.int64((points[i, 0] - mins[0]) / cell))
        cy = min(nx[1] - 1, np.int64((points[i, 1] - mins[1]) / cell))
        cz = min(nx[2] - 1, np.int64((points[i, 2] - mins[2]) / cell))
        cid[i] = (cx * nx[1] + cy) * nx[2] + cz
    order = np.argsort(cid, kind="mergesort")
    sorted_cid = cid[order]
    return mins, nx, cid, order, sorted_cid


@njit(cache=True)
def _cell_span(sorted_cid, cell_id):
    lo = np.searchsorted(sorted_cid, cell_id, side="left")
    hi = np.searchsorted(sorted_cid, cell_id, side="right")
    return lo, hi


@njit(parallel=True, cache=True)
def _radius_counts_grid_nb(points, radii):
    n = points.shape[0]
    cell = radii[0]
    for i in range(1, n):
        if radii[i] > cell:
            cell = radii[i]
    if cell <= 0.0:
        cell = 1e-6
    mins, nx, cid, order, sorted_cid = _build_grid(points, cell)
    out = np.zeros(n, np.int64)
    for i in prange(n):
        r2 = radii[i] * radii[i]
        cx = min(nx[0] - 1, np.int64((points[i, 0] - mins[0]) / cell))
        cy = min(nx[1] - 1, np.int64((points[i, 1] - mins[1]) / cell))
        cz = min(nx[2] - 1, np.int64((points[i, 2] - mins[2]) / cell))
        c = 0
        for ax in range(max(0, cx - 1), min(nx[0], cx + 2)):
            for ay in range(max(0, cy - 1), min(nx[1], cy + 2)):
                for az in range(max(0, cz - 1), min(nx[2], cz + 2)):
                    lo, hi = _cell_span(sorted_cid,
                                        (ax * nx[1] + ay) * nx[2] + az)
                    for s in range(lo, hi):
                        j = order[s]
                        if j == i:
                            continue
                        dx = points[i, 0] - points[j, 0]
                        dy = points[i, 1] - points[j, 1]
                        dz = points[i, 2] - points[j, 2]
                        if dx * dx + dy * dy + dz * dz <= r2:
                            c += 1
        out[i] = c
    return out


def knn_mean_dists(points, k, backend=None):
    """Mean Euclidean distance from each point to its k nearest other
    points. Requires n > k. The k distances are summed in ascending order
    so that all backends agree bit-exactly."""
    if backend is None:
        backend = backend_for("neighbors")
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = len(points)
    if n <= k:
        raise ValueError("knn_mean_dists needs more points than k")
    if backend == "numba":
        if n >= GRID_THRESHOLD:
            return _knn_mean_grid_nb(points, np.int64(k))
        return _knn_mean_brute_nb(points, np.int64(k))
    return _knn_mean_brute_np(points, k)


def _knn_mean_brute_np(points, k):
    n = len(points)
    out = np.empty(n, np.float64)
    step = max(1, (1 << 22) // max(n, 1))
    for s in range(0, n, step):
        e = min(n, s + step)
        d = points[s:e, None, :] - points[None, :, :]
        d2 = (d * d).sum(-1)
        d2[np.arange(e - s), np.arange(s, e)] = np.inf
        part = np.partition(d2, k - 1, axis=1)[:, :k]
        part.sort(axis=1)
        dist = np.sqrt(part)
        acc = dist[:, 0].copy()
        for j in range(1, k):  # sequential sum: bit-parity with numba
            acc += dist[:, j]
        out[s:e] = acc / k
    return out


@njit(cache=True)
def _topk_insert(best, d2, m, cap):
    if m == cap and d2 >= best[cap - 1]:
        return m
    pos = m if m < cap else cap - 1
    while pos > 0 and best[pos - 1] > d2:
        best[pos] = best[pos - 1]
        pos -= 1
    best[pos] = d2
    return m + 1 if m < cap else m


@njit(cache=True)
def _mean_of_sorted_sqrt(best, k):
    acc = 0.0
    for j in range(k):
        acc += np.sqrt(best[j])
    return acc / k


@njit(parallel=True, cache=True)
def _knn_mean_brute_nb(points, k):
    n = points.shape[0]
    out = np.empty(n, np.float64)
    for i in prange(n):
        best = np.empty(k, np.float64)
        m = 0
        for j in range(n):
            if j == i:
                continue
            dx = points[i, 0] - points[j, 0]
            dy = points[i, 1] - points[j, 1]
            dz = points[i, 2] - points[j, 2]
            m = _topk_insert(best, dx * dx + dy * dy + dz * dz, m, k)
        out[i] = _mean_of_sorted_sqrt(best, k)
    return out


@njit(parallel=True, cache=True)
def _knn_mean_grid_nb(points, k):
    n = points.shape[0]
    ext = np.empty(3, np.float64)
    for d in range(3):
        mn = points[0, d]
        mx = points[0, d]
        for i in range(1, n):
            if points[i, d] < mn:
                mn = points[i, d]
            if points[i, d] > mx:
                mx = points[i, d]
        ext[d] = mx - mn
    vol = ext[0] * ext[1] * ext[2]
    max_ext = max(ext[0], max(ext[1], ext[2]))
    cell = (vol / n) ** (1.0 / 3.0) if vol > 0 else 0.0
    alt = max_ext / (4.0 * n ** (1.0 / 3.0))
    if alt > cell:
        cell = alt
    if cell < 1e-3:
        cell = 1e-3
    mins, nx, cid, order, sorted_cid = _build_grid(points, cell)
    out = np.empty(n, np.float64)
    max_ring = max(nx[0], max(nx[1], nx[2]))
    for i in prange(n):
        cx = min(nx[0] - 1, np.int64((points[i, 0] - mins[0]) / cell))
        cy = min(nx[1] - 1, np.int64((points[i, 1] - mins[1]) / cell))
        cz = min(nx[2] - 1, np.int64((points[i, 2] - mins[2]) / cell))
        best = np.empty(k, np.float64)
        m = 0
        for ring in range(max_ring + 1):
            x0, x1 = max(0, cx - ring), min(nx[0] - 1, cx + ring)
            y0, y1 = max(0, cy - ring), min(nx[1] - 1, cy + ring)
            z0, z1 = max(0, cz - ring), min(nx[2] - 1, cz + ring)
            for ax in range(x0, x1 + 1):
                on_x = ax == cx - ring or ax == cx + ring
                for ay in range(y0, y1 + 1):
                    on_y = ay == cy - ring or ay == cy + ring
                    for az in range(z0, z1 + 1):
                        on_z = az == cz - ring or az == cz + ring
                        if ring > 0 and not (on_x or on_y or on_z):
                            continue
                        lo, hi = _cell_span(sorted_cid,
                                            (ax * nx[1] + ay) * nx[2] + az)
                        for s in range(lo, hi):
                            j = order[s]
                            if j == i:
                                continue
                            dx = points[i, 0] - points[j, 0]
                            dy = points[i, 1] - points[j, 1]
                            dz = points[i, 2] - points[j, 2]
                            m = _topk_insert(best,
                                             dx * dx + dy * dy + dz * dz,
                                             m, k)
            # every unvisited point sits beyond Chebyshev ring `ring`,
            # hence at distance > ring*cell
            if m == k:
                bound = ring * cell
                if best[k - 1] <= bound * bound:
                    break
        out[i] = _mean_of_sorted_sqrt(best, k)
    return out
