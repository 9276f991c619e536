# cython: language_level=3
"""Compiled hot loops: all-pairs shortest paths, small symmetric
eigenvalue batches, and arc-length lookups on polylines."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, INFINITY

cnp.import_array()


def floyd_warshall(double[:, :] weights):
    """Return (dist, nxt) where nxt[i, j] is the next hop from i towards j (-1 if none)."""
    cdef Py_ssize_t n = weights.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double alt
    dist_arr = np.array(weights, dtype=np.float64, copy=True)
    nxt_arr = np.full((n, n), -1, dtype=np.int64)
    cdef double[:, :] dist = dist_arr
    cdef long long[:, :] nxt = nxt_arr
    for i in range(n):
        for j in range(n):
            if i == j:
                dist[i, j] = 0.0
                nxt[i, j] = i
            elif dist[i, j] < INFINITY:
                nxt[i, j] = j
    for k in range(n):
        for i in range(n):
            if dist[i, k] == INFINITY:
                continue
            for j in range(n):
                alt = dist[i, k] + dist[k, j]
                if alt < dist[i, j]:
                    dist[i, j] = alt
                    nxt[i, j] = nxt[i, k]
    return dist_arr, nxt_arr


cdef double _jacobi_min(double[:, :] a, Py_ssize_t k):
    cdef Py_ssize_t p, q, r, sweep
    cdef double off, theta, t, c, s, app, aqq, apq, arp, arq
    for sweep in range(60):
        off = 0.0
        for p in range(k):
            for q in range(p + 1, k):
                off += a[p, q] * a[p, q]
        if off < 1e-300:
            break
        for p in range(k):
            for q in range(p + 1, k):
                apq = a[p, q]
                if fabs(apq) < 1e-300:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + sqrt(1.0 + theta * theta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                for r in range(k):
                    if r != p and r != q:
                        arp = a[r, p]
                        arq = a[r, q]
                        a[r, p] = c * arp - s * arq
                        a[p, r] = a[r, p]
                        a[r, q] = s * arp + c * arq
                        a[q, r] = a[r, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
    cdef double m = a[0, 0]
    for p in range(1, k):
        if a[p, p] < m:
            m = a[p, p]
    return m


def batch_min_eigenvalue(mats):
    """Smallest eigenvalue of each symmetric matrix in a (m, k, k) stack."""
    work_arr = np.array(mats, dtype=np.float64, copy=True)
    if work_arr.ndim != 3 or work_arr.shape[1] != work_arr.shape[2]:
        raise ValueError("expected a stack of square matrices")
    cdef Py_ssize_t m = work_arr.shape[0]
    cdef Py_ssize_t k = work_arr.shape[1]
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[:, :, :] work = work_arr
    cdef double[:] out = out_arr
    cdef Py_ssize_t i
    if k == 0:
        out_arr[:] = INFINITY
        return out_arr
    for i in range(m):
        out[i] = _jacobi_min(work[i], k)
    return out_arr


def polyline_at(double[:] cum, double[:, :] pts, double[:] queries):
    """Points at the given arc-length positions along a polyline.

    cum holds the nondecreasing cumulative length at each vertex; queries
    outside [cum[0], cum[-1]] are clamped."""
    cdef Py_ssize_t n = cum.shape[0]
    cdef Py_ssize_t d = pts.shape[1]
    cdef Py_ssize_t q = queries.shape[0]
    out_arr = np.empty((q, d), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t i, j, lo, hi, mid
    cdef double s, span, frac
    for i in range(q):
        s = queries[i]
        if s <= cum[0]:
            for j in range(d):
                out[i, j] = pts[0, j]
            continue
        if s >= cum[n - 1]:
            for j in range(d):
                out[i, j] = pts[n - 1, j]
            continue
        lo = 0
        hi = n - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if cum[mid] <= s:
                lo = mid
            else:
                hi = mid
        span = cum[hi] - cum[lo]
        frac = (s - cum[lo]) / span if span > 0 else 0.0
        for j in range(d):
            out[i, j] = pts[lo, j] + frac * (pts[hi, j] - pts[lo, j])
    return out_arr
