"""Finite length spaces (metric graphs), parameterized paths, and the
discrete length and energy functionals with their perturbation bounds.

A location in a space is either a vertex id (``str``) or an interior edge
point ``(edge_index, offset)`` with ``0 < offset < weight``.  Offsets that
land on an endpoint are folded back to the vertex id, so every point has a
single canonical form.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from . import kernels

ABS_TOL = 1e-9
REL_TOL = 1e-6

Site = Union[str, tuple]  # vertex id or (edge_index, offset)


class FiniteLengthSpace:
    """Connected weighted graph carrying its shortest-path length metric."""

    def __init__(self, points: Sequence, edges: Sequence):
        self.points = [str(p) for p in points]
        if len(set(self.points)) != len(self.points):
            raise ValueError("duplicate point ids")
        self.index = {p: i for i, p in enumerate(self.points)}
        self.edges: list[tuple[str, str, float]] = []
        for e in edges:
            u, v, w = str(e[0]), str(e[1]), float(e[2])
            if u not in self.index or v not in self.index:
                raise KeyError(f"edge {e!r} uses an unknown point")
            if u == v:
                raise ValueError(f"loop edge at {u!r}")
            if not (w > 0 and math.isfinite(w)):
                raise ValueError(f"edge weights must be positive, got {w!r}")
            self.edges.append((u, v, w))
        n = len(self.points)
        if n == 0:
            raise ValueError("empty space")
        self.incident: dict[str, list[int]] = {p: [] for p in self.points}
        for k, (u, v, _) in enumerate(self.edges):
            self.incident[u].append(k)
            self.incident[v].append(k)
        self._dist = None
        self._next = None
        self._check_connected()

    # ----- construction helpers -------------------------------------------------

    @classmethod
    def from_json(cls, doc: dict) -> "FiniteLengthSpace":
        return cls(doc["points"], doc["edges"])

    def to_json(self) -> dict:
        return {"points": list(self.points), "edges": [[u, v, w] for u, v, w in self.edges]}

    def _check_connected(self):
        seen = {self.points[0]}
        stack = [self.points[0]]
        while stack:
            p = stack.pop()
            for k in self.incident[p]:
                u, v, _ = self.edges[k]
                q = v if u == p else u
                if q not in seen:
                    seen.add(q)
                    stack.append(q)
        if len(seen) != len(self.points):
            raise ValueError("graph is disconnected")

    def _all_pairs(self):
        if self._dist is None:
            n = len(self.points)
            w = np.full((n, n), np.inf)
            for u, v, wt in self.edges:
                i, j = self.index[u], self.index[v]
                if wt < w[i, j]:
                    w[i, j] = w[j, i] = wt
            dist, nxt = kernels.floyd_warshall(w)
            self._dist, self._next = dist, nxt
        return self._dist, self._next

    @property
    def distance_matrix(self) -> np.ndarray:
        return self._all_pairs()[0]

    # ----- points ---------------------------------------------------------------

    def canon(self, loc) -> Site:
        """Canonical site for a point id, ``(edge, offset)`` or ``[edge, fraction]`` JSON form."""
        if isinstance(loc, str):
            if loc not in self.index:
                raise KeyError(f"unknown point {loc!r}")
            return loc
        e, s = int(loc[0]), float(loc[1])
        if not 0 <= e < len(self.edges):
            raise KeyError(f"unknown edge index {e}")
        u, v, w = self.edges[e]
        if s <= 0:
            return u
        if s >= w:
            return v
        return (e, s)

    def from_fraction(self, edge: int, fraction: float) -> Site:
        return self.canon((edge, fraction * self.edges[edge][2]))

    def anchors(self, site: Site):
        """(vertex, distance) pairs through which every path leaving the site passes."""
        if isinstance(site, str):
            return [(site, 0.0)]
        e, s = site
        u, v, w = self.edges[e]
        return [(u, s), (v, w - s)]

    # ----- metric ---------------------------------------------------------------

    def vertex_distance(self, x: str, y: str) -> float:
        if x not in self.index or y not in self.index:
            raise KeyError(f"unknown point in ({x!r}, {y!r})")
        return float(self._all_pairs()[0][self.index[x], self.index[y]])

    def distance(self, p, q) -> float:
        p, q = self.canon(p), self.canon(q)
        dist = self._all_pairs()[0]
        best = math.inf
        for a, da in self.anchors(p):
            ia = self.index[a]
            for b, db in self.anchors(q):
                ib = self.index[b]
                # grouped so that swapping p and q gives the same rounding
                best = min(best, (da + db) + min(dist[ia, ib], dist[ib, ia]))
        if not isinstance(p, str) and not isinstance(q, str) and p[0] == q[0]:
            best = min(best, abs(p[1] - q[1]))
        return float(best)

    def vertex_path(self, x: str, y: str) -> list[str]:
        """Witness shortest path between two vertices as a list of vertex ids."""
        _, nxt = self._all_pairs()
        i, j = self.index[x], self.index[y]
        out = [x]
        while i != j:
            i = int(nxt[i, j])
            if i < 0:
                raise ValueError("disconnected graph")
            out.append(self.points[i])
        return out

    def edge_between(self, x: str, y: str) -> int:
        """Index of the shortest edge joining two adjacent vertices."""
        best, arg = math.inf, -1
        for k in self.incident[x]:
            u, v, w = self.edges[k]
            if {u, v} == {x, y} and w < best:
                best, arg = w, k
        if arg < 0:
            raise KeyError(f"{x!r} and {y!r} are not adjacent")
        return arg

    def route(self, p, q) -> list[Site]:
        """Waypoints of a witness geodesic from p to q (sites, consecutive ones share an edge)."""
        p, q = self.canon(p), self.canon(q)
        if p == q:
            return [p]
        if not isinstance(p, str) and not isinstance(q, str) and p[0] == q[0]:
            if abs(p[1] - q[1]) <= self.distance(p, q) + 1e-15:
                return [p, q]
        dist = self._all_pairs()[0]
        best, choice = math.inf, None
        for a, da in self.anchors(p):
            for b, db in self.anchors(q):
                c = da + dist[self.index[a], self.index[b]] + db
                if c < best - 1e-15:
                    best, choice = c, (a, b)
        a, b = choice
        mid = self.vertex_path(a, b)
        out: list[Site] = [] if p == a else [p]
        out.extend(mid)
        if q != b:
            out.append(q)
        return out

    def point_along(self, p, q, t: float) -> Site:
        """The point at distance t from p along the witness geodesic to q."""
        pts = self.route(p, q)
        remaining = max(t, 0.0)
        for a, b in zip(pts, pts[1:]):
            seg = self.distance(a, b)
            if remaining <= seg:
                return self._interpolate(a, b, remaining)
            remaining -= seg
        return pts[-1]

    def _interpolate(self, a: Site, b: Site, t: float) -> Site:
        # a and b lie on a common edge; move t from a toward b along it
        if t <= 0:
            return a
        e = self._common_edge(a, b)
        u, v, w = self.edges[e]
        sa = self._offset_on(a, e)
        sb = self._offset_on(b, e)
        s = sa + t if sb >= sa else sa - t
        return self.canon((e, min(max(s, 0.0), w)))

    def _offset_on(self, site: Site, e: int) -> float:
        u, v, w = self.edges[e]
        if isinstance(site, str):
            if site == u:
                return 0.0
            if site == v:
                return w
            raise ValueError(f"{site!r} not on edge {e}")
        if site[0] != e:
            raise ValueError(f"{site!r} not on edge {e}")
        return site[1]

    def _common_edge(self, a: Site, b: Site) -> int:
        if not isinstance(a, str):
            return a[0]
        if not isinstance(b, str):
            return b[0]
        return self.edge_between(a, b)


# ----- paths ----------------------------------------------------------------------


@dataclass
class ParamPath:
    """A path sampled at increasing parameters; between samples it follows the witness geodesic."""

    space: FiniteLengthSpace
    times: list[float]
    sites: list[Site]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.times) < 2 or len(self.times) != len(self.sites):
            raise ValueError("a path needs at least two samples")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("sample parameters must be strictly increasing")
        self.sites = [self.space.canon(s) for s in self.sites]

    @classmethod
    def from_samples(cls, space, samples: Iterable) -> "ParamPath":
        samples = list(samples)
        return cls(space, [float(t) for t, _ in samples], [loc for _, loc in samples])

    @classmethod
    def from_json(cls, space, doc: dict) -> "ParamPath":
        path = cls.from_samples(space, [(t, loc if isinstance(loc, str) else space.from_fraction(loc[0], loc[1]))
                                        for t, loc in doc["samples"]])
        a, b = doc.get("domain", [path.a, path.b])
        if abs(a - path.a) > ABS_TOL or abs(b - path.b) > ABS_TOL:
            raise ValueError("domain does not match the first and last samples")
        return path

    @property
    def a(self) -> float:
        return self.times[0]

    @property
    def b(self) -> float:
        return self.times[-1]

    def at(self, t: float) -> Site:
        if t <= self.a:
            return self.sites[0]
        if t >= self.b:
            return self.sites[-1]
        k = bisect.bisect_right(self.times, t) - 1
        t0, t1 = self.times[k], self.times[k + 1]
        p, q = self.sites[k], self.sites[k + 1]
        hit = self._cache.get(k)
        if hit is None:
            # witness route with cumulative arc, computed once per sample interval
            route = self.space.route(p, q)
            cum = [0.0]
            for a, b in zip(route, route[1:]):
                cum.append(cum[-1] + self.space.distance(a, b))
            hit = self._cache[k] = (route, cum)
        route, cum = hit
        s = cum[-1] * (t - t0) / (t1 - t0)
        j = min(max(bisect.bisect_right(cum, s) - 1, 0), len(route) - 2) if len(route) > 1 else 0
        if len(route) == 1:
            return route[0]
        return self.space._interpolate(route[j], route[j + 1], s - cum[j])

    def subdivision(self, n: int) -> list[float]:
        if n < 1:
            raise ValueError("subdivision count must be at least 1")
        return [self.a + (self.b - self.a) * k / n for k in range(n + 1)]


@dataclass
class Geodesic:
    path: ParamPath
    velocity: float

    @classmethod
    def between(cls, space, p, q, a: float = 0.0, b: float | None = None) -> "Geodesic":
        d = space.distance(p, q)
        if b is None:
            b = a + d if d > 0 else a + 1.0
        path = ParamPath(space, [a, b], [p, q])
        return cls(path, d / (b - a))

    def check(self, samples: int = 9, tol: float = ABS_TOL) -> bool:
        ts = self.path.subdivision(samples - 1)
        pts = [self.path.at(t) for t in ts]
        sp = self.path.space
        for i in range(len(ts)):
            for j in range(i + 1, len(ts)):
                if abs(sp.distance(pts[i], pts[j]) - self.velocity * (ts[j] - ts[i])) > tol:
                    return False
        return True


def _resolve_metric(path: ParamPath, metric):
    return path.space.distance if metric is None else metric


def path_length(path: ParamPath, metric: Callable | None = None, n: int = 1) -> float:
    """Sum of distances over the equidistant subdivision into n pieces."""
    ts = path.subdivision(n)
    d = _resolve_metric(path, metric)
    pts = [path.at(t) for t in ts]
    return float(sum(d(p, q) for p, q in zip(pts, pts[1:])))


def path_energy(path: ParamPath, metric: Callable | None = None, n: int = 1) -> float:
    """Sum of d(step)^2 / dt over the equidistant subdivision into n pieces."""
    ts = path.subdivision(n)
    d = _resolve_metric(path, metric)
    pts = [path.at(t) for t in ts]
    dt = (path.b - path.a) / n
    return float(sum(d(p, q) ** 2 for p, q in zip(pts, pts[1:])) / dt)


def geodesic_energy(d: float, a: float, b: float) -> float:
    if b <= a:
        raise ValueError("need b > a")
    if d < 0:
        raise ValueError("distance must be nonnegative")
    return d * d / (b - a)


def energy_step_triangle(dpq: float, dqr: float, dpr: float, delta: float, eps: float,
                         tol: float = ABS_TOL) -> tuple[bool, bool]:
    """Compare d(p,r)^2/eps against d(p,q)^2/delta + d(q,r)^2/(eps-delta).

    Returns (holds, equality).  Equality is reported exactly when the
    triple is additive and both legs are traversed at the same speed.
    """
    if not 0 < delta < eps:
        raise ValueError("need 0 < delta < eps")
    lhs = dpr * dpr / eps
    rhs = dpq * dpq / delta + dqr * dqr / (eps - delta)
    holds = lhs <= rhs + tol * max(1.0, abs(rhs))
    additive = abs(dpr - (dpq + dqr)) <= tol * max(1.0, dpr)
    same_speed = abs(dpq / delta - dqr / (eps - delta)) <= tol * max(1.0, dpq / delta)
    return holds, bool(additive and same_speed)


def perturbation_constant(C1: float, n: int, a: float, b: float) -> float:
    if C1 <= 1:
        raise ValueError("C1 must exceed 1")
    if n < 1:
        raise ValueError("n must be at least 1")
    if b <= a:
        raise ValueError("need b > a")
    return 4.0 * n * n * C1 / ((C1 - 1.0) * (b - a))


def pullback_energy(f: Callable, path: ParamPath, n: int) -> float:
    """Energy of f composed with the path at depth n, using the Euclidean norm of the target."""
    ts = path.subdivision(n)
    img = np.array([np.asarray(f(path.at(t)), dtype=float).ravel() for t in ts])
    dt = (path.b - path.a) / n
    return float(np.sum(np.diff(img, axis=0) ** 2) / dt)


def check_perturbed_energy(f: Callable, g: Callable, path: ParamPath, C: float, lam: float,
                           delta: float | None = None, n: int = 8) -> bool:
    """Whether E_f(n) < C E_g(n) + lam for a delta-close pair of maps.

    delta defaults to sqrt(lam / (2 C2)) with C2 from perturbation_constant;
    closeness is checked at the subdivision points and a violation raises.
    """
    if C <= 1:
        raise ValueError("C must exceed 1")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    c2 = perturbation_constant(C, n, path.a, path.b)
    if delta is None:
        delta = math.sqrt(lam / (2.0 * c2))
    for t in path.subdivision(n):
        x = path.at(t)
        gap = np.linalg.norm(np.asarray(f(x), float) - np.asarray(g(x), float))
        if gap >= delta:
            raise ValueError(f"maps are {gap:.3g}-apart at t={t}, not within delta={delta:.3g}")
    ef = pullback_energy(f, path, n)
    eg = pullback_energy(g, path, n)
    return bool(ef < C * eg + lam)


def check_perturbed_energy_batch(f, g, paths: Sequence[ParamPath], C: float, lam: float,
                                 delta: float | None = None, n: int = 8) -> list[bool]:
    return [check_perturbed_energy(f, g, p, C, lam, delta, n) for p in paths]


# ----- norms -----------------------------------------------------------------------


@dataclass
class NormSampler:
    evaluator: Callable

    def __call__(self, x) -> float:
        return float(self.evaluator(np.asarray(x, dtype=float)))

    def homogeneous_on(self, xs, scales, tol: float = 1e-9) -> bool:
        for x in xs:
            nx = self(x)
            for lam in scales:
                if abs(self(lam * np.asarray(x, float)) - abs(lam) * nx) > tol * max(1.0, abs(lam) * nx):
                    return False
        return True

    @classmethod
    def from_quadratic_form(cls, Q) -> "NormSampler":
        Q = np.asarray(Q, float)
        return cls(lambda x: math.sqrt(max(float(x @ Q @ x), 0.0)))

    @classmethod
    def lp(cls, p: float) -> "NormSampler":
        return cls(lambda x: float(np.linalg.norm(x, ord=p)))


def parallelogram_defect(norm: Callable, x, y) -> float:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return abs(2 * norm(x) ** 2 + 2 * norm(y) ** 2 - norm(x + y) ** 2 - norm(x - y) ** 2)
