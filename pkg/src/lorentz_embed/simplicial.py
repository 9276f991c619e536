"""Indefinite metric polyhedra.

Edge data is held either as signed lengths g (squared with the sign kept
when a form is built) or, for metrics induced by maps, directly as
energies.  The flag ``energies`` on MetricComplex says which.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .minkowski import PLMap, mink_pairing

PD_TOL = 1e-9


def signed_square(x: float) -> float:
    return x * x if x >= 0 else -x * x


def signed_root(e: float) -> float:
    return math.sqrt(e) if e >= 0 else -math.sqrt(-e)


def _key(u, v) -> frozenset:
    return frozenset((u, v))


class MetricComplex:
    def __init__(self, vertices: Iterable[Hashable], simplices: Iterable[Iterable[Hashable]],
                 edge_metric: Mapping, energies: bool = False):
        self.vertices = list(dict.fromkeys(vertices))
        self.order = {v: i for i, v in enumerate(self.vertices)}
        self.energies = bool(energies)
        self.simplices: set[tuple] = set()
        for s in simplices:
            s = self.sorted_simplex(s)
            for r in range(1, len(s) + 1):
                for face in itertools.combinations(s, r):
                    self.simplices.add(face)
        for v in self.vertices:
            self.simplices.add((v,))
        self.edge_metric: dict[frozenset, float] = {}
        for k, val in edge_metric.items():
            k = frozenset(k)
            if len(k) != 2:
                raise ValueError(f"bad edge key {set(k)!r}")
            self.edge_metric[k] = float(val)
        for s in self.simplices:
            if len(s) == 2 and _key(*s) not in self.edge_metric:
                raise KeyError(f"missing edge metric on {s!r}")

    def sorted_simplex(self, s: Iterable) -> tuple:
        s = tuple(dict.fromkeys(s))
        for v in s:
            if v not in self.order:
                raise KeyError(f"unknown vertex {v!r}")
        return tuple(sorted(s, key=self.order.__getitem__))

    @property
    def edges(self) -> list[tuple]:
        return sorted((s for s in self.simplices if len(s) == 2), key=lambda s: (self.order[s[0]], self.order[s[1]]))

    def maximal_simplices(self) -> list[tuple]:
        by_size = sorted(self.simplices, key=len, reverse=True)
        out, covered = [], set()
        for s in by_size:
            if s in covered:
                continue
            out.append(s)
            for r in range(1, len(s) + 1):
                covered.update(itertools.combinations(s, r))
        return sorted(out, key=lambda s: tuple(self.order[v] for v in s))

    def dimension(self) -> int:
        return max(len(s) for s in self.simplices) - 1

    def value(self, u, v) -> float:
        try:
            return self.edge_metric[_key(u, v)]
        except KeyError:
            raise KeyError(f"missing edge metric on ({u!r}, {v!r})") from None

    def energy(self, u, v) -> float:
        """Energy G of an edge: the stored value, or its signed square."""
        val = self.value(u, v)
        return val if self.energies else signed_square(val)

    def with_metric(self, edge_metric: Mapping, energies: bool | None = None) -> "MetricComplex":
        return MetricComplex(self.vertices, self.maximal_simplices(), edge_metric,
                             self.energies if energies is None else energies)

    def star(self, simplex: Iterable) -> list[tuple]:
        s = set(simplex)
        return [t for t in self.maximal_simplices() if s <= set(t)]

    # ----- serialization ----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "vertices": [str(v) for v in self.vertices],
            "simplices": [[str(v) for v in s] for s in self.maximal_simplices()],
            "edge_metric": {"-".join(str(v) for v in self.sorted_simplex(k)): val
                            for k, val in self.edge_metric.items()},
            "energies": self.energies,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "MetricComplex":
        verts = [str(v) for v in doc["vertices"]]
        names = set(verts)
        metric = {}
        for key, val in doc["edge_metric"].items():
            split = None
            for i, ch in enumerate(key):
                if ch == "-" and key[:i] in names and key[i + 1:] in names:
                    split = (key[:i], key[i + 1:])
                    break
            if split is None:
                raise KeyError(f"cannot parse edge key {key!r}")
            metric[split] = val
        return cls(verts, doc["simplices"], metric, doc.get("energies", False))


@dataclass
class QuadraticForm:
    matrix: np.ndarray
    vertices: tuple = ()

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError("form must be square")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("form has non-finite entries")
        if not np.allclose(self.matrix, self.matrix.T, atol=1e-12, rtol=0):
            raise ValueError("form is not symmetric")

    def edge_energies(self) -> dict[tuple[int, int], float]:
        """Recover G on the edges of the simplex: (0,i) -> Q_ii, (i,j) -> Q_ii + Q_jj - 2 Q_ij."""
        q = self.matrix
        out = {}
        k = self.dim
        for i in range(1, k + 1):
            out[(0, i)] = q[i - 1, i - 1]
        for i in range(1, k + 1):
            for j in range(i + 1, k + 1):
                out[(i, j)] = q[i - 1, i - 1] + q[j - 1, j - 1] - 2 * q[i - 1, j - 1]
        return out


def form_from_energies(G: Mapping[tuple[int, int], float], k: int) -> np.ndarray:
    """k x k polarization matrix from edge energies G[(i, j)], 0 <= i < j <= k."""
    q = np.empty((k, k))
    for i in range(1, k + 1):
        q[i - 1, i - 1] = G[(0, i)]
    for i in range(1, k + 1):
        for j in range(i + 1, k + 1):
            q[i - 1, j - 1] = q[j - 1, i - 1] = 0.5 * (G[(0, i)] + G[(0, j)] - G[(i, j)])
    return q


def quadratic_form(complex: MetricComplex, simplex: Sequence, ordering: Sequence | None = None) -> QuadraticForm:
    simplex = complex.sorted_simplex(simplex)
    if simplex not in complex.simplices:
        raise KeyError(f"{simplex!r} is not a simplex of the complex")
    if ordering is None:
        ordering = simplex
    if sorted(map(repr, ordering)) != sorted(map(repr, simplex)):
        raise ValueError("ordering must be a permutation of the simplex")
    vs = list(ordering)
    k = len(vs) - 1
    G = {(i, j): complex.energy(vs[i], vs[j]) for i in range(k + 1) for j in range(i + 1, k + 1)}
    return QuadraticForm(form_from_energies(G, k), tuple(vs))


def induced_metric(map: PLMap, complex: MetricComplex) -> MetricComplex:
    metric = {}
    for u, v in complex.edges:
        d = map[u] - map[v]
        metric[(u, v)] = mink_pairing(d, d)
    return complex.with_metric(metric, energies=True)


def gram_form(map: PLMap, ordering: Sequence) -> QuadraticForm:
    """Minkowski Gram matrix of the image edge vectors f(v_i) - f(v_0)."""
    base = map[ordering[0]]
    ws = [map[v] - base for v in ordering[1:]]
    k = len(ws)
    q = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            q[i, j] = q[j, i] = mink_pairing(ws[i], ws[j])
    return QuadraticForm(q, tuple(ordering))


@dataclass
class ConeReport:
    is_positive_definite: bool
    min_eigenvalue: float
    cone_distance: float


def _pd_threshold(mats: np.ndarray, tol: float) -> np.ndarray:
    k = mats.shape[-1]
    return tol * np.abs(np.trace(mats, axis1=-2, axis2=-1)) / max(k, 1)


def batch_is_pd(mats, tol: float = PD_TOL) -> tuple[np.ndarray, np.ndarray]:
    mats = np.asarray(mats, float)
    lam = kernels.batch_min_eigenvalue(mats)
    return lam > _pd_threshold(mats, tol), lam


def _pairs(k: int):
    return [(i, j) for i in range(k + 1) for j in range(i + 1, k + 1)]


def _forms_from_vectors(X: np.ndarray, k: int) -> np.ndarray:
    """Batch of polarization matrices from edge-energy vectors in _pairs order."""
    idx = {p: n for n, p in enumerate(_pairs(k))}
    m = X.shape[0]
    q = np.empty((m, k, k))
    for i in range(1, k + 1):
        q[:, i - 1, i - 1] = X[:, idx[(0, i)]]
        for j in range(i + 1, k + 1):
            q[:, i - 1, j - 1] = q[:, j - 1, i - 1] = 0.5 * (X[:, idx[(0, i)]] + X[:, idx[(0, j)]] - X[:, idx[(i, j)]])
    return q


def is_euclidean(form: QuadraticForm, tol: float = PD_TOL, directions: int = 48, seed: int = 0) -> ConeReport:
    """Positive-definiteness plus a numeric distance to the cone boundary.

    The distance is measured in edge-energy coordinates by bisecting along
    sampled directions (the descent direction of the smallest eigenvalue is
    always included).  The minimum over sampled directions is reported.
    """
    k = form.dim
    if k == 0:
        return ConeReport(True, math.inf, math.inf)
    pd, lam = batch_is_pd(form.matrix[None], tol)
    lam_min = float(lam[0])
    if not pd[0]:
        return ConeReport(False, lam_min, 0.0)
    pairs = _pairs(k)
    G = form.edge_energies()
    x = np.array([G[p] for p in pairs])
    # descent direction of the smallest eigenvalue
    w, V = np.linalg.eigh(form.matrix)
    z = np.concatenate([[-V[:, 0].sum()], V[:, 0]])  # coefficients on v_0..v_k
    grad = np.array([-z[i] * z[j] for i, j in pairs])  # d(lambda_min)/dG_ij
    rng = np.random.default_rng(seed)
    dirs = [-grad] + list(rng.standard_normal((directions, len(pairs))))
    dirs = np.array([d / np.linalg.norm(d) for d in dirs if np.linalg.norm(d) > 0])
    scale = max(np.linalg.norm(x), 1e-300)

    def inside(t: np.ndarray) -> np.ndarray:
        return batch_is_pd(_forms_from_vectors(x[None] + t[:, None] * dirs, k), tol)[0]

    hi = np.full(len(dirs), scale)
    lo = np.zeros(len(dirs))
    for _ in range(40):
        still = inside(hi)
        if not still.any():
            break
        lo = np.where(still, hi, lo)
        hi = np.where(still, hi * 2, hi)
    escaped = inside(hi)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        ok = inside(mid)
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    hits = hi[~escaped]
    dist = float(hits.min()) if hits.size else math.inf
    return ConeReport(True, lam_min, dist)


def lipschitz_margin(g_matrix: np.ndarray, f_matrix: np.ndarray) -> float:
    return float(kernels.batch_min_eigenvalue((np.asarray(g_matrix) - np.asarray(f_matrix))[None])[0])


def is_one_lipschitz(g_form: QuadraticForm, f_form: QuadraticForm, tol: float = PD_TOL) -> bool:
    """g - f positive semidefinite, allowing -tol * |trace g| / k of slack."""
    if g_form.dim != f_form.dim:
        raise ValueError(f"dimension mismatch {g_form.dim} vs {f_form.dim}")
    ok = batch_one_lipschitz(g_form.matrix[None], f_form.matrix[None], tol)[0]
    return bool(ok[0])


def batch_one_lipschitz(g_mats, f_mats, tol: float = PD_TOL) -> tuple[np.ndarray, np.ndarray]:
    g_mats = np.asarray(g_mats, float)
    f_mats = np.asarray(f_mats, float)
    if g_mats.shape != f_mats.shape:
        raise ValueError(f"dimension mismatch {g_mats.shape} vs {f_mats.shape}")
    if g_mats.shape[0] == 0 or g_mats.shape[-1] == 0:
        return np.ones(g_mats.shape[0], bool), np.full(g_mats.shape[0], np.inf)
    lam = kernels.batch_min_eigenvalue(g_mats - f_mats)
    return lam >= -_pd_threshold(g_mats, tol), lam


def embeddability_threshold(k: int, M: float) -> float:
    return math.sqrt(2.0 * k / (k - 1)) * M


def one_special_edge_embeddable(k: int, M: float, c: float) -> bool:
    """Whether a k-simplex with one edge c and all others M is Euclidean."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if M <= 0:
        raise ValueError("M must be positive")
    return 0 < c < embeddability_threshold(k, M)


def special_edge_complex(k: int, M: float, c: float) -> MetricComplex:
    verts = list(range(k + 1))
    metric = {(i, j): (c if (i, j) == (0, 1) else M) for i in verts for j in verts if i < j}
    return MetricComplex(verts, [verts], metric)


def subdivide_edge(complex: MetricComplex, edge: Sequence, N: int):
    """Split an edge into N collinear pieces and cone every simplex on it.

    New edges from a subdivision vertex to the rest of a simplex get the
    energy that keeps the split simplex flat.  Returns the new complex, the
    chain of vertices along the edge, and a map old simplex -> new simplices.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    u, v = complex.sorted_simplex(edge)
    if (u, v) not in complex.simplices:
        raise KeyError(f"{edge!r} is not an edge")
    if N == 1:
        return complex, [u, v], {s: [s] for s in complex.maximal_simplices()}
    chain = [u] + [f"{u}~{v}:{i}" for i in range(1, N)] + [v]
    for w in chain[1:-1]:
        if w in complex.order:
            raise ValueError(f"vertex name clash on {w!r}")
    E_uv = complex.energy(u, v)
    energies = {k: complex.energy(*tuple(k)) for k in complex.edge_metric}
    new_simplices, correspondence = [], {}
    for s in complex.maximal_simplices():
        if u in s and v in s:
            rest = [x for x in s if x not in (u, v)]
            pieces = [tuple([chain[i], chain[i + 1]] + rest) for i in range(N)]
            correspondence[s] = pieces
            new_simplices.extend(pieces)
            for i in range(1, N):
                t = i / N
                for r in rest:
                    energies[_key(chain[i], r)] = ((1 - t) * complex.energy(u, r) + t * complex.energy(v, r)
                                                   - t * (1 - t) * E_uv)
        else:
            correspondence[s] = [s]
            new_simplices.append(s)
    del energies[_key(u, v)]
    for i in range(N):
        energies[_key(chain[i], chain[i + 1])] = E_uv / (N * N)
    if complex.energies:
        metric = energies
    else:
        metric = {k: signed_root(e) for k, e in energies.items()}
    verts = list(complex.vertices) + chain[1:-1]
    return MetricComplex(verts, new_simplices, metric, complex.energies), chain, correspondence
