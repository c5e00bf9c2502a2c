"""Hot numeric kernels: numba-jitted loops with pure-numpy fallbacks.

Every kernel exists in two flavors: a ``*_nb`` loop implementation compiled
with ``@njit`` and a vectorized ``*_np`` fallback.  The module-level names
(``knn_from_gram``, ``plane_fit``, ...) point at the numba flavor when numba
imports cleanly and ``CLOUDSEG_DISABLE_NUMBA`` is unset, else at the numpy
flavor.  Both flavors implement identical contracts (same tie-breaking, same
accumulation semantics) so the selection only affects speed.

Run ``python benchmarks/bench_kernels.py`` to compare the two paths.
"""

from __future__ import annotations

import os
from collections import deque

import numpy as np

_flag = os.environ.get("CLOUDSEG_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _flag in {"1", "true", "yes", "on"}

try:
    if NUMBA_DISABLED:
        raise ImportError("numba disabled via CLOUDSEG_DISABLE_NUMBA")
    os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
    from numba import njit, prange

    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False
    prange = range

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------------------
# k-nearest-neighbor selection from a Gram matrix
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def _knn_from_gram_nb(gram, sqnorms, k):
    n = gram.shape[0]
    out = np.empty((n, k), np.int64)
    for i in prange(n):
        best_d = np.full(k, np.inf)
        best_j = np.full(k, -1, np.int64)
        si = sqnorms[i]
        for j in range(n):
            if j == i:
                continue
            d = si + sqnorms[j] - 2.0 * gram[i, j]
            # strict '<' keeps the earlier (lower) index on ties
            if d < best_d[k - 1]:
                p = k - 1
                while p > 0 and d < best_d[p - 1]:
                    best_d[p] = best_d[p - 1]
                    best_j[p] = best_j[p - 1]
                    p -= 1
                best_d[p] = d
                best_j[p] = j
        out[i] = best_j
    return out


def _knn_from_gram_np(gram, sqnorms, k):
    d = sqnorms[:, None] + sqnorms[None, :] - 2.0 * gram
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


_GRAM_BUFFER: dict[tuple[int, str], np.ndarray] = {}


def knn_in_feature_space(features: np.ndarray, k: int) -> np.ndarray:
    """Exact KNN indices (self excluded) in an arbitrary feature space.

    Ties break by ascending point index. Low-dimensional spaces (f <= 3) go
    through a KD-tree; higher dimensions use squared distances derived from a
    Gram matrix (single reusable buffer, since this runs once per layer per
    training iteration).
    """
    x = np.ascontiguousarray(features)
    n = x.shape[0]
    if x.shape[1] <= 3 and n > 256:
        from .spatial import SpatialIndex

        pos = np.ascontiguousarray(features, dtype=np.float64)
        if pos.shape[1] < 3:
            pos = np.pad(pos, ((0, 0), (0, 3 - pos.shape[1])))
        idx, _ = SpatialIndex(pos).knn_all(k)
        return idx
    key = (n, x.dtype.str)
    buf = _GRAM_BUFFER.get(key)
    if buf is None or len(_GRAM_BUFFER) > 4:
        _GRAM_BUFFER.clear()
        buf = np.empty((n, n), dtype=x.dtype)
        _GRAM_BUFFER[key] = buf
    gram = np.matmul(x, x.T, out=buf)
    sqnorms = np.einsum("ij,ij->i", x, x)
    return knn_from_gram(gram, sqnorms, k)


# ---------------------------------------------------------------------------
# local plane fits: per-point covariance eigenanalysis
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def _plane_fit_nb(points, neighbors):
    n, k = neighbors.shape
    normals = np.empty((n, 3), np.float64)
    curvature = np.empty(n, np.float64)
    degenerate = np.zeros(n, np.bool_)
    for i in prange(n):
        # neighborhood = the point itself plus its k nearest neighbors
        mx = points[i, 0]
        my = points[i, 1]
        mz = points[i, 2]
        for jj in range(k):
            p = neighbors[i, jj]
            mx += points[p, 0]
            my += points[p, 1]
            mz += points[p, 2]
        m = k + 1.0
        mx /= m
        my /= m
        mz /= m
        a = np.zeros((3, 3), np.float64)
        dx = points[i, 0] - mx
        dy = points[i, 1] - my
        dz = points[i, 2] - mz
        a[0, 0] += dx * dx
        a[0, 1] += dx * dy
        a[0, 2] += dx * dz
        a[1, 1] += dy * dy
        a[1, 2] += dy * dz
        a[2, 2] += dz * dz
        for jj in range(k):
            p = neighbors[i, jj]
            dx = points[p, 0] - mx
            dy = points[p, 1] - my
            dz = points[p, 2] - mz
            a[0, 0] += dx * dx
            a[0, 1] += dx * dy
            a[0, 2] += dx * dz
            a[1, 1] += dy * dy
            a[1, 2] += dy * dz
            a[2, 2] += dz * dz
        a[1, 0] = a[0, 1]
        a[2, 0] = a[0, 2]
        a[2, 1] = a[1, 2]
        for r in range(3):
            for c in range(3):
                a[r, c] /= m

        frob = 0.0
        for r in range(3):
            for c in range(3):
                frob += a[r, c] * a[r, c]
        frob = np.sqrt(frob)
        if frob < 1e-30:
            normals[i, 0] = 0.0
            normals[i, 1] = 0.0
            normals[i, 2] = 1.0
            curvature[i] = 0.0
            degenerate[i] = True
            continue

        # cyclic Jacobi on the symmetric 3x3; tolerance 1e-12 relative, <=64 sweeps
        v = np.eye(3)
        for _sweep in range(64):
            off = np.sqrt(
                a[0, 1] * a[0, 1] + a[0, 2] * a[0, 2] + a[1, 2] * a[1, 2]
            )
            if off <= 1e-12 * frob:
                break
            for p in range(2):
                for q in range(p + 1, 3):
                    apq = a[p, q]
                    if abs(apq) < 1e-300:
                        continue
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    for r in range(3):
                        arp = a[r, p]
                        arq = a[r, q]
                        a[r, p] = c * arp - s * arq
                        a[r, q] = s * arp + c * arq
                    for r in range(3):
                        apr = a[p, r]
                        aqr = a[q, r]
                        a[p, r] = c * apr - s * aqr
                        a[q, r] = s * apr + c * aqr
                    for r in range(3):
                        vrp = v[r, p]
                        vrq = v[r, q]
                        v[r, p] = c * vrp - s * vrq
                        v[r, q] = s * vrp + c * vrq

        e0 = a[0, 0]
        e1 = a[1, 1]
        e2 = a[2, 2]
        lo = 0
        lov = e0
        if e1 < lov:
            lo = 1
            lov = e1
        if e2 < lov:
            lo = 2
            lov = e2
        nx = v[0, lo]
        ny = v[1, lo]
        nz = v[2, lo]
        nn = np.sqrt(nx * nx + ny * ny + nz * nz)
        normals[i, 0] = nx / nn
        normals[i, 1] = ny / nn
        normals[i, 2] = nz / nn
        lam_min = min(e0, min(e1, e2))
        total = e0 + e1 + e2
        cv = lam_min / total if total > 0.0 else 0.0
        if cv < 0.0:
            cv = 0.0
        curvature[i] = cv
    return normals, curvature, degenerate


def _plane_fit_np(points, neighbors):
    n, k = neighbors.shape
    idx = np.concatenate([np.arange(n, dtype=np.int64)[:, None], neighbors], axis=1)
    nbh = points[idx]  # (n, k+1, 3)
    centered = nbh - nbh.mean(axis=1, keepdims=True)
    cov = np.einsum("nka,nkb->nab", centered, centered) / (k + 1.0)
    frob = np.sqrt(np.einsum("nab,nab->n", cov, cov))
    degenerate = frob < 1e-30
    safe = cov.copy()
    safe[degenerate] = np.eye(3)
    eigvals, eigvecs = np.linalg.eigh(safe)
    normals = eigvecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    total = eigvals.sum(axis=1)
    curvature = np.where(total > 0.0, eigvals[:, 0] / np.where(total > 0, total, 1.0), 0.0)
    curvature = np.clip(curvature, 0.0, None)
    normals[degenerate] = (0.0, 0.0, 1.0)
    curvature[degenerate] = 0.0
    return normals, curvature, degenerate


# ---------------------------------------------------------------------------
# seed region growing (breadth-first frontier expansion)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _grow_labels_nb(neighbors, neighbor_dists, normals, seed_order, cos_min, dist_max):
    n, k = neighbors.shape
    labels = np.full(n, -1, np.int64)
    queue = np.empty(n, np.int64)
    region = 0
    for s_i in range(n):
        seed = seed_order[s_i]
        if labels[seed] >= 0:
            continue
        labels[seed] = region
        head = 0
        tail = 0
        queue[tail] = seed
        tail += 1
        while head < tail:
            f = queue[head]
            head += 1
            fx = normals[f, 0]
            fy = normals[f, 1]
            fz = normals[f, 2]
            for jj in range(k):
                nb = neighbors[f, jj]
                if labels[nb] >= 0:
                    continue
                if neighbor_dists[f, jj] > dist_max:
                    continue
                # compare normal lines (|dot|): orientation-independent
                dot = fx * normals[nb, 0] + fy * normals[nb, 1] + fz * normals[nb, 2]
                if abs(dot) < cos_min:
                    continue
                labels[nb] = region
                queue[tail] = nb
                tail += 1
        region += 1
    return labels


def _grow_labels_np(neighbors, neighbor_dists, normals, seed_order, cos_min, dist_max):
    n, k = neighbors.shape
    labels = np.full(n, -1, np.int64)
    region = 0
    for seed in seed_order:
        if labels[seed] >= 0:
            continue
        labels[seed] = region
        queue = deque([seed])
        while queue:
            f = queue.popleft()
            nf = normals[f]
            for jj in range(k):
                nb = neighbors[f, jj]
                if labels[nb] >= 0:
                    continue
                if neighbor_dists[f, jj] > dist_max:
                    continue
                if abs(float(nf @ normals[nb])) < cos_min:
                    continue
                labels[nb] = region
                queue.append(nb)
        region += 1
    return labels


# ---------------------------------------------------------------------------
# neighborhood reductions and their backward scatters (network engine)
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def _neighbor_min_nb(values, neighbors):
    n, k = neighbors.shape
    g = values.shape[1]
    out = np.empty((n, g), values.dtype)
    arg = np.empty((n, g), np.int64)
    for i in prange(n):
        p0 = neighbors[i, 0]
        for c in range(g):
            out[i, c] = values[p0, c]
            arg[i, c] = p0
        for jj in range(1, k):
            p = neighbors[i, jj]
            for c in range(g):
                val = values[p, c]
                if val < out[i, c]:
                    out[i, c] = val
                    arg[i, c] = p
    return out, arg


def _neighbor_min_np(values, neighbors):
    gathered = values[neighbors]  # (n, k, g)
    slot = np.argmin(gathered, axis=1)
    out = np.take_along_axis(gathered, slot[:, None, :], axis=1)[:, 0, :]
    arg = np.take_along_axis(neighbors, slot, axis=1)
    return out, arg.astype(np.int64)


@njit(cache=True, parallel=True)
def _neighbor_max_nb(values, neighbors):
    n, k = neighbors.shape
    g = values.shape[1]
    out = np.empty((n, g), values.dtype)
    arg = np.empty((n, g), np.int64)
    for i in prange(n):
        p0 = neighbors[i, 0]
        for c in range(g):
            out[i, c] = values[p0, c]
            arg[i, c] = p0
        for jj in range(1, k):
            p = neighbors[i, jj]
            for c in range(g):
                val = values[p, c]
                if val > out[i, c]:
                    out[i, c] = val
                    arg[i, c] = p
    return out, arg


def _neighbor_max_np(values, neighbors):
    gathered = values[neighbors]
    slot = np.argmax(gathered, axis=1)
    out = np.take_along_axis(gathered, slot[:, None, :], axis=1)[:, 0, :]
    arg = np.take_along_axis(neighbors, slot, axis=1)
    return out, arg.astype(np.int64)


@njit(cache=True)
def _scatter_add_cols_nb(n_rows, arg, grad):
    # serial row-major walk: destination rows collide, so no prange here
    m, g = arg.shape
    out = np.zeros((n_rows, g), grad.dtype)
    for i in range(m):
        for c in range(g):
            out[arg[i, c], c] += grad[i, c]
    return out


def _scatter_add_cols_np(n_rows, arg, grad):
    m, g = arg.shape
    out = np.zeros((n_rows, g), grad.dtype)
    cols = np.broadcast_to(np.arange(g), (m, g))
    np.add.at(out, (arg, cols), grad)
    return out


# ---------------------------------------------------------------------------
# neighborhood covariance features (xyz + vectorized 3x3 covariance)
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def _cov_features_nb(points, neighbors):
    n, k = neighbors.shape
    out = np.empty((n, 12), points.dtype)
    for i in prange(n):
        mx = 0.0
        my = 0.0
        mz = 0.0
        for jj in range(k):
            p = neighbors[i, jj]
            mx += points[p, 0]
            my += points[p, 1]
            mz += points[p, 2]
        mx /= k
        my /= k
        mz /= k
        c00 = 0.0
        c01 = 0.0
        c02 = 0.0
        c11 = 0.0
        c12 = 0.0
        c22 = 0.0
        for jj in range(k):
            p = neighbors[i, jj]
            dx = points[p, 0] - mx
            dy = points[p, 1] - my
            dz = points[p, 2] - mz
            c00 += dx * dx
            c01 += dx * dy
            c02 += dx * dz
            c11 += dy * dy
            c12 += dy * dz
            c22 += dz * dz
        out[i, 0] = points[i, 0]
        out[i, 1] = points[i, 1]
        out[i, 2] = points[i, 2]
        out[i, 3] = c00 / k
        out[i, 4] = c01 / k
        out[i, 5] = c02 / k
        out[i, 6] = c01 / k
        out[i, 7] = c11 / k
        out[i, 8] = c12 / k
        out[i, 9] = c02 / k
        out[i, 10] = c12 / k
        out[i, 11] = c22 / k
    return out


def _cov_features_np(points, neighbors):
    n, k = neighbors.shape
    nbh = points[neighbors]  # (n, k, 3)
    centered = nbh - nbh.mean(axis=1, keepdims=True)
    cov = np.einsum("nka,nkb->nab", centered, centered) / k
    return np.concatenate([points, cov.reshape(n, 9)], axis=1).astype(points.dtype)


@njit(cache=True)
def _cov_features_backward_nb(points, neighbors, grad):
    n, k = neighbors.shape
    dp = np.zeros_like(points)
    for i in range(n):
        dp[i, 0] += grad[i, 0]
        dp[i, 1] += grad[i, 1]
        dp[i, 2] += grad[i, 2]
        mx = 0.0
        my = 0.0
        mz = 0.0
        for jj in range(k):
            p = neighbors[i, jj]
            mx += points[p, 0]
            my += points[p, 1]
            mz += points[p, 2]
        mx /= k
        my /= k
        mz /= k
        # s = (G + G^T) / k  with G the 3x3 gradient block
        s00 = 2.0 * grad[i, 3] / k
        s01 = (grad[i, 4] + grad[i, 6]) / k
        s02 = (grad[i, 5] + grad[i, 9]) / k
        s11 = 2.0 * grad[i, 7] / k
        s12 = (grad[i, 8] + grad[i, 10]) / k
        s22 = 2.0 * grad[i, 11] / k
        for jj in range(k):
            p = neighbors[i, jj]
            dx = points[p, 0] - mx
            dy = points[p, 1] - my
            dz = points[p, 2] - mz
            dp[p, 0] += s00 * dx + s01 * dy + s02 * dz
            dp[p, 1] += s01 * dx + s11 * dy + s12 * dz
            dp[p, 2] += s02 * dx + s12 * dy + s22 * dz
    return dp


def _cov_features_backward_np(points, neighbors, grad):
    n, k = neighbors.shape
    dp = np.zeros_like(points)
    dp += grad[:, :3]
    gmat = grad[:, 3:].reshape(n, 3, 3)
    s = (gmat + np.transpose(gmat, (0, 2, 1))) / k
    nbh = points[neighbors]
    centered = nbh - nbh.mean(axis=1, keepdims=True)
    contrib = np.einsum("nab,nkb->nka", s, centered)
    np.add.at(dp, neighbors.ravel(), contrib.reshape(-1, 3))
    return dp


if NUMBA_ENABLED:
    knn_from_gram = _knn_from_gram_nb
    plane_fit = _plane_fit_nb
    grow_labels = _grow_labels_nb
    neighbor_min = _neighbor_min_nb
    neighbor_max = _neighbor_max_nb
    scatter_add_cols = _scatter_add_cols_nb
    cov_features = _cov_features_nb
    cov_features_backward = _cov_features_backward_nb
else:
    knn_from_gram = _knn_from_gram_np
    plane_fit = _plane_fit_np
    grow_labels = _grow_labels_np
    neighbor_min = _neighbor_min_np
    neighbor_max = _neighbor_max_np
    scatter_add_cols = _scatter_add_cols_np
    cov_features = _cov_features_np
    cov_features_backward = _cov_features_backward_np
