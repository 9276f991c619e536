"""Interpreted versions of the compiled kernels, used when the extension
is not built. Signatures and results match ``_kernels``."""
import numpy as np


def floyd_warshall(weights):
    dist = np.array(weights, dtype=np.float64, copy=True)
    n = dist.shape[0]
    nxt = np.full((n, n), -1, dtype=np.int64)
    finite = np.isfinite(dist)
    cols = np.broadcast_to(np.arange(n), (n, n))
    nxt[finite] = cols[finite]
    np.fill_diagonal(dist, 0.0)
    np.fill_diagonal(nxt, np.arange(n))
    for k in range(n):
        alt = dist[:, k : k + 1] + dist[k : k + 1, :]
        better = alt < dist
        if better.any():
            dist = np.where(better, alt, dist)
            nxt = np.where(better, nxt[:, k : k + 1], nxt)
    return dist, nxt


def batch_min_eigenvalue(mats):
    arr = np.asarray(mats, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError("expected a stack of square matrices")
    if arr.shape[1] == 0:
        return np.full(arr.shape[0], np.inf)
    if arr.shape[0] == 0:
        return np.empty(0)
    return np.linalg.eigvalsh(arr)[:, 0]


def polyline_at(cum, pts, queries):
    cum = np.asarray(cum, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    out = np.empty((queries.shape[0], pts.shape[1]))
    for j in range(pts.shape[1]):
        out[:, j] = np.interp(queries, cum, pts[:, j])
    return out
